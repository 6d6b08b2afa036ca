//! Initial basis from a plain NMF of all observed rows stacked together.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::series::Dataset;
use crate::solver::BasisSet;

pub const DEFAULT_INIT_ITERATIONS: usize = 200;

const FLOOR: f64 = 1e-9;

/// Stacks every observed row into one matrix, factors it with
/// [`nmf_multiplicative`] and returns the normalized right factor.
pub fn init_basis(d: &Dataset, r: usize, seed: u64) -> Result<BasisSet> {
    init_basis_with(d, r, seed, DEFAULT_INIT_ITERATIONS)
}

pub(crate) fn init_basis_with(d: &Dataset, r: usize, seed: u64, iterations: usize) -> Result<BasisSet> {
    let l = d.row_len().ok_or(Error::EmptyDataset)?;
    let rows = d.total_observed_rows();
    check_rank(r, l, rows)?;
    let mut y = DMatrix::zeros(rows, l);
    for (k, row) in d.stacked_rows().enumerate() {
        y.row_mut(k).copy_from_slice(row);
    }
    let (_, h) = nmf_multiplicative(&y, r, iterations, seed)?;
    let functions: Vec<Vec<f64>> = (0..r).map(|j| h.row(j).iter().copied().collect()).collect();
    BasisSet::normalized(functions)
}

pub(crate) fn check_rank(r: usize, l: usize, rows: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let available = l.min(rows);
    if r > available {
        return Err(Error::RankExceedsData {
            requested: r,
            available,
        });
    }
    Ok(())
}

/// Lee–Seung multiplicative updates for `Y ≈ W H` with `W ≥ 0` (`m × r`) and
/// `H ≥ 0` (`r × n`). Factors start uniform in `(0, s]` with
/// `s = sqrt(mean(Y) / r)`; denominators are floored at `1e-9`.
pub fn nmf_multiplicative(
    y: &DMatrix<f64>,
    r: usize,
    iterations: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, n) = y.shape();
    check_rank(r, n, m)?;
    if y.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("NMF input must be nonnegative".into()));
    }
    let mean = y.mean();
    let scale = if mean > 0.0 { (mean / r as f64).sqrt() } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1 - U[0,1) lies in (0, 1]
    let mut draw = |_, _| scale * (1.0 - rng.random::<f64>());
    let mut w = DMatrix::from_fn(m, r, &mut draw);
    let mut h = DMatrix::from_fn(r, n, &mut draw);
    for _ in 0..iterations {
        let num = w.tr_mul(y);
        let den = w.tr_mul(&w) * &h;
        h.zip_zip_apply(&num, &den, |hv, a, b| *hv *= a / b.max(FLOOR));
        let num = y * h.transpose();
        let den = &w * (&h * h.transpose());
        w.zip_zip_apply(&num, &den, |wv, a, b| *wv *= a / b.max(FLOOR));
    }
    Ok((w, h))
}
