use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Contiguous element range handled as one transfer unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChunkRange {
    pub chunk_id: usize,
    pub elem_begin: usize,
    pub elem_end: usize,
}

impl ChunkRange {
    pub fn len(&self) -> usize {
        self.elem_end - self.elem_begin
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.elem_begin..self.elem_end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkSize {
    Fixed(usize),
    /// `max(1024, num_elements / (4 * workers))`.
    Auto,
}

impl Default for ChunkSize {
    fn default() -> Self {
        ChunkSize::Fixed(4096)
    }
}

impl ChunkSize {
    pub fn resolve(self, num_elements: usize, workers: usize) -> usize {
        match self {
            ChunkSize::Fixed(n) => n,
            ChunkSize::Auto => (num_elements / (4 * workers.max(1))).max(1024),
        }
    }
}

/// Splits `[0, num_elements)` into ranges of `chunk_size`, the last one
/// possibly shorter.
pub fn plan_chunks(num_elements: usize, chunk_size: usize) -> Vec<ChunkRange> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    (0..num_elements.div_ceil(chunk_size))
        .map(|c| ChunkRange {
            chunk_id: c,
            elem_begin: c * chunk_size,
            elem_end: ((c + 1) * chunk_size).min(num_elements),
        })
        .collect()
}
