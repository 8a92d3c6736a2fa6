use super::embed::{cosine, Embedding};
use super::entry::EntryId;

/// Nearest-neighbour index over entry embeddings.
pub trait VectorIndex: Send + Sync {
    fn add(&mut self, id: EntryId, embedding: &Embedding);

    /// Best match by cosine similarity; ties go to the lowest id.
    fn nearest(&self, query: &Embedding) -> Option<(EntryId, f64)>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact brute-force cosine scan.
#[derive(Debug, Default)]
pub struct FlatIndex {
    rows: Vec<(EntryId, Vec<f64>)>,
}

impl VectorIndex for FlatIndex {
    fn add(&mut self, id: EntryId, embedding: &Embedding) {
        self.rows.push((id, embedding.as_slice().to_vec()));
    }

    fn nearest(&self, query: &Embedding) -> Option<(EntryId, f64)> {
        let q = query.as_slice();
        let mut best: Option<(EntryId, f64)> = None;
        for (id, row) in &self.rows {
            let sim = cosine(q, row);
            best = match best {
                Some((bid, bsim)) if bsim > sim || (bsim == sim && bid < *id) => Some((bid, bsim)),
                _ => Some((*id, sim)),
            };
        }
        best
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}
