use serde::{Deserialize, Serialize};

use super::{OpcodeListing, OpcodeVocabulary};

/// Default sequence length fed to the source-code model.
pub const DEFAULT_MAX_LENGTH: usize = 2000;

/// Fixed-length index sequence: vocabulary indices followed by zero padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OciVector {
    pub indices: Vec<u32>,
}

impl OciVector {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of leading non-padding entries.
    pub fn used(&self) -> usize {
        self.indices
            .iter()
            .position(|&i| i == 0)
            .unwrap_or(self.indices.len())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| i as f64).collect()
    }
}

/// Opcode index vectorization.
///
/// Each whitespace-separated token of each listing entry that is exactly a
/// vocabulary mnemonic contributes its 1-based index, in order. The result is
/// cut to `max_length` (keeping the earliest opcodes) and right-padded with 0.
pub fn oiva(listing: &OpcodeListing, vocab: &OpcodeVocabulary, max_length: usize) -> OciVector {
    assert!(max_length >= 1, "max_length must be at least 1");
    let mut indices = Vec::with_capacity(max_length);
    'outer: for entry in &listing.mnemonics {
        for tok in entry.split_whitespace() {
            if indices.len() == max_length {
                break 'outer;
            }
            if let Some(i) = vocab.index_of(tok) {
                indices.push(i as u32);
            }
        }
    }
    indices.resize(max_length, 0);
    OciVector { indices }
}
