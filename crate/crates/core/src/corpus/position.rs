use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per position-embedding table; larger indices are clamped.
pub const DEFAULT_POSITION_ROWS: usize = 256;

/// Distances of a token to the sentence boundaries, plus the sentence length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionFeature {
    pub start: usize,
    pub end: usize,
    pub length: usize,
}

impl PositionFeature {
    /// Each component clamped to `rows - 1`.
    pub fn clamped(self, rows: usize) -> Self {
        let cap = rows.saturating_sub(1);
        Self {
            start: self.start.min(cap),
            end: self.end.min(cap),
            length: self.length.min(cap),
        }
    }
}

pub fn position_features(n: usize) -> Result<Vec<PositionFeature>> {
    if n == 0 {
        return Err(Error::Domain("position features of an empty sentence".into()));
    }
    Ok((0..n)
        .map(|i| PositionFeature {
            start: i,
            end: n - 1 - i,
            length: n,
        })
        .collect())
}
