//! JSON Lines cache file.
//!
//! Line 0 is a header `{"format_version":1,"embedder":{..},"entry_count":N,"next_id":M}`;
//! each following line is one serialized [`CacheEntry`]. Record indices in
//! errors count the header as record 0.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CacheEntry, StoreError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    embedder: Value,
    entry_count: usize,
    next_id: u64,
}

pub(super) fn write(
    path: &Path,
    embedder: &Value,
    next_id: u64,
    entries: &[CacheEntry],
) -> Result<(), StoreError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        embedder: embedder.clone(),
        entry_count: entries.len(),
        next_id,
    };
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &header).map_err(std::io::Error::from)?;
    buf.push(b'\n');
    for entry in entries {
        serde_json::to_writer(&mut buf, entry).map_err(std::io::Error::from)?;
        buf.push(b'\n');
    }

    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&buf)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(record: usize, reason: impl Into<String>) -> StoreError {
    StoreError::CorruptStore {
        record,
        reason: reason.into(),
    }
}

pub(super) fn read(path: &Path, embedder: &Value) -> Result<(u64, Vec<CacheEntry>), StoreError> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    if !text.ends_with('\n') {
        return Err(corrupt(
            text.lines().count().saturating_sub(1),
            "unterminated final record",
        ));
    }
    let mut lines = text.lines();

    let header: Header = lines
        .next()
        .ok_or_else(|| corrupt(0, "missing header"))
        .and_then(|l| serde_json::from_str(l).map_err(|e| corrupt(0, e.to_string())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(
            0,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    if header.embedder != *embedder {
        return Err(StoreError::EmbedderMismatch {
            found: header.embedder.to_string(),
        });
    }

    let mut entries = Vec::with_capacity(header.entry_count);
    for (i, line) in lines.enumerate() {
        let record = i + 1;
        if line.trim().is_empty() {
            return Err(corrupt(record, "empty record"));
        }
        let entry: CacheEntry =
            serde_json::from_str(line).map_err(|e| corrupt(record, e.to_string()))?;
        entries.push(entry);
    }
    if entries.len() != header.entry_count {
        return Err(corrupt(
            entries.len() + 1,
            format!(
                "expected {} entries, found {}",
                header.entry_count,
                entries.len()
            ),
        ));
    }
    Ok((header.next_id, entries))
}
