use std::sync::Arc;

use crate::align::LexiconTable;
use crate::autodiff::SparseColumns;
use crate::{Error, Result};

/// Per-sentence `|V_e| x |F|` lexicon matrix.
pub type LexiconMatrix = SparseColumns;

/// Column `j` holds `p(e | f_j)` for every target `e` listed in the table.
/// Source words missing from the table give an all-zero column. Entries
/// whose target id falls outside `tgt_vocab_size` are dropped.
pub fn build_lexicon_matrix(
    source: &[u32],
    table: &LexiconTable,
    tgt_vocab_size: usize,
) -> LexiconMatrix {
    let columns = source
        .iter()
        .map(|&f| {
            table
                .distribution(f)
                .iter()
                .filter(|&&(e, _)| (e as usize) < tgt_vocab_size)
                .map(|&(e, p)| (e as usize, p))
                .collect()
        })
        .collect();
    SparseColumns {
        rows: tgt_vocab_size,
        columns,
    }
}

/// A lexicon table together with the smoothing constant added before the log.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconBias {
    pub table: Arc<LexiconTable>,
    pub epsilon: f64,
}

impl LexiconBias {
    pub fn new(table: LexiconTable, epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        Ok(Self {
            table: Arc::new(table),
            epsilon,
        })
    }
}
