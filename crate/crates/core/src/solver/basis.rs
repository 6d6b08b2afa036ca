//! Basis subproblem: for fixed coefficients the fit term decouples over the
//! `ℓ` sample positions, each an `r`-dimensional NNLS with a shared Hessian.

use crate::error::{Error, Result};
use crate::series::{Dataset, DayRows};
use crate::solver::nnls::nnls_dense;
use crate::solver::{norm2, BasisSet, CoefficientSet};

/// Result of a basis step.
#[derive(Debug, Clone)]
pub struct BasisUpdate {
    pub basis: BasisSet,
    /// Components whose function collapsed to zero and was reseeded.
    pub reseeded: Vec<usize>,
}

/// Minimizes the fit term over `F ≥ 0` column by column, then scales each
/// function to unit norm. Coefficients are left untouched.
pub fn update_basis(d: &Dataset, coeffs: &[CoefficientSet]) -> Result<BasisUpdate> {
    let rank = check_aligned(d, coeffs)?;
    let raw = solve_columns(d, coeffs, rank, &vec![0.0; rank])?;
    finish(d, coeffs, raw)
}

/// Exact block minimization over the basis *and* per-component coefficient
/// scales: writing `G_j = s_j F_j` the objective restricted to this block is
/// the convex problem
/// `Σ fit(C, G) + λ Σ_j ‖G_j‖² Σ_n ‖D C[n]_j‖²`, separable over columns.
/// Afterwards `F_j = G_j / ‖G_j‖` and `C_j ← ‖G_j‖ C_j`, so the full
/// objective never increases. Reseeded components get zero coefficients.
pub fn update_basis_rescaling(
    d: &Dataset,
    coeffs: &mut [CoefficientSet],
    lambda: f64,
) -> Result<BasisUpdate> {
    let rank = check_aligned(d, coeffs)?;
    let mut ridge = vec![0.0; rank];
    if lambda > 0.0 {
        for c in coeffs.iter() {
            for (j, rj) in ridge.iter_mut().enumerate() {
                *rj += lambda * super::second_difference_energy(&c.trajectory(j));
            }
        }
    }
    let raw = solve_columns(d, coeffs, rank, &ridge)?;
    let norms: Vec<f64> = raw.iter().map(|f| norm2(f)).collect();
    for c in coeffs.iter_mut() {
        for (j, &s) in norms.iter().enumerate() {
            c.scale_component(j, s);
        }
    }
    let update = finish(d, coeffs, raw)?;
    for c in coeffs.iter_mut() {
        for &j in &update.reseeded {
            c.scale_component(j, 0.0);
        }
    }
    Ok(update)
}

fn check_aligned(d: &Dataset, coeffs: &[CoefficientSet]) -> Result<usize> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if coeffs.len() != d.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficient sets for {} subjects",
            coeffs.len(),
            d.len()
        )));
    }
    let rank = coeffs[0].rank();
    for (y, c) in d.series().iter().zip(coeffs) {
        if c.subject_id() != y.subject_id() || c.days() != y.observed() || c.rank() != rank {
            return Err(Error::ShapeMismatch(format!(
                "coefficients of {} do not match its observed rows",
                y.subject_id()
            )));
        }
    }
    Ok(rank)
}

/// Solves the `ℓ` column problems with Hessian `Σ c cᵀ + diag(ridge)`.
/// Returns the unnormalized functions.
fn solve_columns(
    d: &Dataset,
    coeffs: &[CoefficientSet],
    rank: usize,
    ridge: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let l = d.row_len().expect("dataset is nonempty");
    let mut hess = vec![0.0; rank * rank];
    // rhs[i * r + j] = Σ_t c_j(t) y_t[i]
    let mut rhs = vec![0.0; l * rank];
    for (y, c) in d.series().iter().zip(coeffs) {
        for k in 0..y.num_observed() {
            let ck = c.row(k);
            if ck.iter().all(|&v| v == 0.0) {
                continue;
            }
            for j in 0..rank {
                for m in 0..rank {
                    hess[j * rank + m] += ck[j] * ck[m];
                }
            }
            for (i, &yi) in y.row(k).iter().enumerate() {
                if yi != 0.0 {
                    for j in 0..rank {
                        rhs[i * rank + j] += ck[j] * yi;
                    }
                }
            }
        }
    }
    for j in 0..rank {
        hess[j * rank + j] += ridge[j];
    }
    let mut functions = vec![vec![0.0; l]; rank];
    for i in 0..l {
        let sol = nnls_dense(rank, hess.clone(), &rhs[i * rank..(i + 1) * rank], None)?;
        for (j, v) in sol.x.into_iter().enumerate() {
            functions[j][i] = v;
        }
    }
    Ok(functions)
}

fn finish(d: &Dataset, coeffs: &[CoefficientSet], mut raw: Vec<Vec<f64>>) -> Result<BasisUpdate> {
    let zero: Vec<usize> = (0..raw.len()).filter(|&j| norm2(&raw[j]) == 0.0).collect();
    if !zero.is_empty() {
        let seeds = reseed_rows(d, coeffs, &raw, zero.len())?;
        for (&j, seed) in zero.iter().zip(seeds) {
            raw[j] = seed;
        }
    }
    Ok(BasisUpdate {
        basis: BasisSet::normalized(raw)?,
        reseeded: zero,
    })
}

/// Positive parts of the `count` observed rows with the largest residual
/// norm under the current (unnormalized) basis, falling back to the raw row.
fn reseed_rows(
    d: &Dataset,
    coeffs: &[CoefficientSet],
    functions: &[Vec<f64>],
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let l = functions[0].len();
    let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut rec = vec![0.0; l];
    for (y, c) in d.series().iter().zip(coeffs) {
        for k in 0..y.num_observed() {
            rec.iter_mut().for_each(|v| *v = 0.0);
            for (f, &cj) in functions.iter().zip(c.row(k)) {
                for (o, &fi) in rec.iter_mut().zip(f) {
                    *o += cj * fi;
                }
            }
            let row = y.row(k);
            let resid: Vec<f64> = row.iter().zip(&rec).map(|(a, b)| a - b).collect();
            let positive: Vec<f64> = resid.iter().map(|v| v.max(0.0)).collect();
            let seed = if norm2(&positive) > 0.0 {
                positive
            } else {
                row.to_vec()
            };
            scored.push((norm2(&resid), seed));
        }
    }
    // stable sort keeps subject/day order among ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let seeds: Vec<Vec<f64>> = scored
        .into_iter()
        .map(|(_, s)| s)
        .filter(|s| norm2(s) > 0.0)
        .take(count)
        .collect();
    if seeds.len() < count {
        return Err(Error::DegenerateComponent {
            component: functions.iter().position(|f| norm2(f) == 0.0).unwrap_or(0),
        });
    }
    Ok(seeds)
}
