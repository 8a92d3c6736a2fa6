//! Step cache storage.
//!
//! [`CacheStore`] keeps every cached request (prompt, embedding, ordered steps,
//! constraints, provenance and counters) and answers single-best-match
//! retrieval queries by prompt-embedding similarity. Reads take a shared lock;
//! inserts and counter updates take the exclusive lock. Entries never change
//! after insertion except for their counters.

mod embed;
mod entry;
mod index;
mod journal;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;

pub use embed::{cosine, fnv1a, Embedder, Embedding, TrigramEmbedder, NORM_TOLERANCE};
pub use entry::{
    CacheEntry, Constraints, CounterKind, EntryCounters, EntryId, Provenance, TaskType,
};
pub use index::{FlatIndex, VectorIndex};
pub use journal::FORMAT_VERSION;

use crate::segment::validate_steps;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("embedding dimension {found} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry id {0} already exists")]
    DuplicateId(EntryId),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("corrupt cache file at record {record}: {reason}")]
    CorruptStore { record: usize, reason: String },
    #[error("cache file was written by a different embedder: {found}")]
    EmbedderMismatch { found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Retrieval configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreConfig {
    /// Hits below this cosine similarity are reported as misses.
    pub similarity_floor: f64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            similarity_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub entry: CacheEntry,
    pub similarity: f64,
}

struct Inner {
    entries: Vec<CacheEntry>,
    positions: HashMap<EntryId, usize>,
    index: Box<dyn VectorIndex>,
    next_id: u64,
}

pub struct CacheStore {
    embedder: Arc<dyn Embedder>,
    config: StoreConfig,
    inner: RwLock<Inner>,
}

impl std::fmt::Debug for CacheStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CacheStore")
            .field("config", &self.config)
            .field("len", &self.len())
            .finish()
    }
}

impl Default for CacheStore {
    fn default() -> Self {
        Self::new(Arc::new(TrigramEmbedder::default()))
    }
}

impl CacheStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self::with_config(embedder, StoreConfig::default())
    }

    pub fn with_config(embedder: Arc<dyn Embedder>, config: StoreConfig) -> Self {
        Self::with_index(embedder, config, Box::new(FlatIndex::default()))
    }

    pub fn with_index(
        embedder: Arc<dyn Embedder>,
        config: StoreConfig,
        index: Box<dyn VectorIndex>,
    ) -> Self {
        Self {
            embedder,
            config,
            inner: RwLock::new(Inner {
                entries: Vec::new(),
                positions: HashMap::new(),
                index,
                next_id: 1,
            }),
        }
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    pub fn embed(&self, prompt: &str) -> Result<Embedding, StoreError> {
        self.embedder.embed(prompt)
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reserves a fresh entry id.
    pub fn allocate_id(&self) -> EntryId {
        let mut inner = self.inner.write();
        let id = EntryId(inner.next_id);
        inner.next_id += 1;
        id
    }

    /// Builds an entry for `prompt` with a freshly allocated id.
    pub fn new_entry(
        &self,
        prompt: &str,
        steps: Vec<crate::segment::Step>,
        constraints: Constraints,
        created_by: &str,
    ) -> Result<CacheEntry, StoreError> {
        let embedding = self.embed(prompt)?;
        Ok(CacheEntry {
            id: self.allocate_id(),
            prompt: prompt.to_string(),
            embedding,
            steps,
            constraints,
            tool_outputs: Vec::new(),
            provenance: Provenance::now(created_by),
            counters: EntryCounters::default(),
        })
    }

    fn check_entry(&self, entry: &CacheEntry) -> Result<(), StoreError> {
        if entry.prompt.trim().is_empty() {
            return Err(StoreError::EmptyPrompt);
        }
        validate_steps(&entry.steps).map_err(|e| StoreError::InvalidEntry(e.to_string()))?;
        if !entry.constraints.is_valid() {
            return Err(StoreError::InvalidEntry(
                "required keys are only allowed on json entries".into(),
            ));
        }
        let dim = self.embedder.dim();
        if entry.embedding.dim() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                found: entry.embedding.dim(),
            });
        }
        Embedding::from_normalized(entry.embedding.as_slice().to_vec())?;
        Ok(())
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<EntryId, StoreError> {
        self.check_entry(&entry)?;
        let mut inner = self.inner.write();
        if inner.positions.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId(entry.id));
        }
        let id = entry.id;
        inner.index.add(id, &entry.embedding);
        let pos = inner.entries.len();
        inner.positions.insert(id, pos);
        inner.next_id = inner.next_id.max(id.0 + 1);
        inner.entries.push(entry);
        Ok(id)
    }

    pub fn get(&self, id: EntryId) -> Option<CacheEntry> {
        let inner = self.inner.read();
        inner.positions.get(&id).map(|&p| inner.entries[p].clone())
    }

    /// The single best-matching entry, or `None` when the store is empty or
    /// the best similarity falls below the configured floor.
    pub fn retrieve_best(&self, query: &Embedding) -> Option<RetrievalHit> {
        let inner = self.inner.read();
        let (id, similarity) = inner.index.nearest(query)?;
        if similarity < self.config.similarity_floor {
            return None;
        }
        let entry = inner.entries[inner.positions[&id]].clone();
        Some(RetrievalHit { entry, similarity })
    }

    pub fn bump(&self, id: EntryId, kind: CounterKind) {
        let mut inner = self.inner.write();
        if let Some(&pos) = inner.positions.get(&id) {
            let counters = &mut inner.entries[pos].counters;
            match kind {
                CounterKind::Hit => counters.hits += 1,
                CounterKind::Patch => counters.patches += 1,
                CounterKind::Skip => counters.skips += 1,
            }
        }
    }

    /// Id of the first entry (in insertion order) satisfying `pred`.
    pub fn find(&self, pred: impl Fn(&CacheEntry) -> bool) -> Option<EntryId> {
        self.inner.read().entries.iter().find(|e| pred(e)).map(|e| e.id)
    }

    /// Snapshot of all entries in insertion order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        self.inner.read().entries.clone()
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let (entries, next_id) = {
            let inner = self.inner.read();
            (inner.entries.clone(), inner.next_id)
        };
        journal::write(path.as_ref(), &self.embedder.descriptor(), next_id, &entries)
    }

    /// Loads a cache file written by [`CacheStore::persist`].
    pub fn restore(
        path: impl AsRef<Path>,
        embedder: Arc<dyn Embedder>,
        config: StoreConfig,
    ) -> Result<Self, StoreError> {
        let (next_id, entries) = journal::read(path.as_ref(), &embedder.descriptor())?;
        let store = Self::with_config(embedder, config);
        for (i, entry) in entries.into_iter().enumerate() {
            store.insert(entry).map_err(|e| StoreError::CorruptStore {
                record: i + 1,
                reason: e.to_string(),
            })?;
        }
        {
            let mut inner = store.inner.write();
            inner.next_id = inner.next_id.max(next_id);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{steps_from_texts, Step};
    use crate::verify::JsonConstraint;

    fn store() -> CacheStore {
        CacheStore::default()
    }

    fn add(store: &CacheStore, prompt: &str) -> EntryId {
        let entry = store
            .new_entry(prompt, steps_from_texts(["x = 1"]), Constraints::math(), "test")
            .unwrap();
        store.insert(entry).unwrap()
    }

    #[test]
    fn empty_store_misses() {
        let s = store();
        assert!(s.retrieve_best(&s.embed("anything").unwrap()).is_none());
    }

    #[test]
    fn insert_then_self_retrieve() {
        let s = store();
        let id = add(&s, "Solve 2x + 3 = 13 for x");
        assert_eq!(s.len(), 1);
        let hit = s.retrieve_best(&s.embed("Solve 2x + 3 = 13 for x").unwrap()).unwrap();
        assert_eq!(hit.entry.id, id);
        assert!((hit.similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_entry_always_returned() {
        let s = store();
        let id = add(&s, "alpha beta gamma");
        let hit = s.retrieve_best(&s.embed("zzz qqq").unwrap()).unwrap();
        assert_eq!(hit.entry.id, id);
    }

    #[test]
    fn closer_entry_wins() {
        let s = store();
        add(&s, "purple elephants dancing");
        let second = add(&s, "quantum chromodynamics lecture");
        let hit = s.retrieve_best(&s.embed("a lecture on quantum chromodynamics").unwrap()).unwrap();
        assert_eq!(hit.entry.id, second);
    }

    #[test]
    fn ties_break_to_lowest_id() {
        let s = store();
        let first = add(&s, "same prompt");
        add(&s, "same prompt");
        let hit = s.retrieve_best(&s.embed("same prompt").unwrap()).unwrap();
        assert_eq!(hit.entry.id, first);
    }

    #[test]
    fn similarity_floor_turns_weak_hits_into_misses() {
        let s = CacheStore::with_config(
            Arc::new(TrigramEmbedder::default()),
            StoreConfig { similarity_floor: 0.9 },
        );
        add(&s, "alpha beta gamma");
        assert!(s.retrieve_best(&s.embed("completely different words").unwrap()).is_none());
        assert!(s.retrieve_best(&s.embed("alpha beta gamma").unwrap()).is_some());
    }

    #[test]
    fn duplicate_id_rejected() {
        let s = store();
        let entry = s
            .new_entry("p", steps_from_texts(["a"]), Constraints::other(), "t")
            .unwrap();
        s.insert(entry.clone()).unwrap();
        assert!(matches!(s.insert(entry), Err(StoreError::DuplicateId(_))));
    }

    #[test]
    fn invalid_entries_rejected() {
        let s = store();
        let mut entry = s
            .new_entry("p", steps_from_texts(["a"]), Constraints::other(), "t")
            .unwrap();
        entry.steps.clear();
        assert!(matches!(s.insert(entry.clone()), Err(StoreError::InvalidEntry(_))));

        entry.steps = vec![Step::json("{}")];
        entry.constraints = Constraints::json(JsonConstraint::new(["a"]));
        entry.embedding = Embedding::normalize(vec![1.0; 8]).unwrap();
        assert!(matches!(s.insert(entry), Err(StoreError::DimensionMismatch { .. })));
    }

    #[test]
    fn counters_update() {
        let s = store();
        let id = add(&s, "p");
        s.bump(id, CounterKind::Hit);
        s.bump(id, CounterKind::Hit);
        s.bump(id, CounterKind::Skip);
        let c = s.get(id).unwrap().counters;
        assert_eq!((c.hits, c.patches, c.skips), (2, 0, 1));
    }
}
