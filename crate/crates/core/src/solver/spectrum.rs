//! Singular values of the stacked observed-row matrix, for choosing the rank.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::Dataset;

/// Rows are folded into a running triangular factor this many at a time, so
/// memory stays `O(ℓ²)` regardless of cohort size.
const CHUNK_ROWS: usize = 2048;

/// Top `k` singular values (descending) of the matrix whose rows are all
/// observed rows of all subjects.
pub fn singular_spectrum(d: &Dataset, k: usize) -> Result<Vec<f64>> {
    let l = d.row_len().ok_or(Error::EmptyDataset)?;
    let rows = d.total_observed_rows();
    let available = l.min(rows);
    if k > available {
        return Err(Error::RankExceedsData {
            requested: k,
            available,
        });
    }
    let mut sv = singular_values(d.stacked_rows(), l);
    sv.truncate(k);
    Ok(sv)
}

/// All `min(rows, width)` singular values of the matrix with the given rows,
/// in descending order. Uses a tall-skinny QR followed by an SVD of `R`.
pub fn singular_values<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Vec<f64> {
    let mut r: Option<DMatrix<f64>> = None;
    let mut chunk: Vec<f64> = Vec::with_capacity(CHUNK_ROWS * width);
    let mut total = 0;
    let fold = |r: &mut Option<DMatrix<f64>>, chunk: &mut Vec<f64>| {
        let n = chunk.len() / width;
        if n == 0 {
            return;
        }
        let block = DMatrix::from_row_slice(n, width, chunk);
        chunk.clear();
        let stacked = match r.take() {
            Some(prev) => {
                let mut s = DMatrix::zeros(prev.nrows() + n, width);
                s.rows_mut(0, prev.nrows()).copy_from(&prev);
                s.rows_mut(prev.nrows(), n).copy_from(&block);
                s
            }
            None => block,
        };
        *r = Some(stacked.qr().r());
    };
    for row in rows {
        debug_assert_eq!(row.len(), width);
        chunk.extend_from_slice(row);
        total += 1;
        if chunk.len() == CHUNK_ROWS * width {
            fold(&mut r, &mut chunk);
        }
    }
    fold(&mut r, &mut chunk);
    let Some(r) = r else {
        return Vec::new();
    };
    let mut sv: Vec<f64> = r.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(total.min(width));
    sv
}
