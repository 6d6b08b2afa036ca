//! Per-subject coefficient subproblem.
//!
//! For fixed basis `F` the coefficients of one subject solve a convex QP in
//! the `r·|T|` stacked unknowns. Ordering the unknowns day-major
//! (`k·r + j`) makes the Hessian banded with half-bandwidth `2r`: the fit
//! term couples components within a day through the Gram matrix of `F`, and
//! the smoothing term couples up to two neighbouring days within a component.

use crate::error::Result;
use crate::series::{DayRows, SeriesMatrix};
use crate::solver::difference::STENCIL;
use crate::solver::nnls::{active_set, projected_gradient, NnlsSolution, KKT_TOL};
use crate::solver::qp::{BandedSym, QpMatrix};
use crate::solver::{dot, BasisSet, CoefficientSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemOptions {
    /// Above this many stacked unknowns the projected-gradient engine is used.
    pub size_cap: usize,
    pub pg_max_iter: usize,
    pub tol: f64,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self {
            size_cap: 250_000,
            pg_max_iter: 200_000,
            tol: KKT_TOL,
        }
    }
}

/// Exact minimizer of the coefficient subproblem for one subject.
pub fn update_coefficients(y: &SeriesMatrix, basis: &BasisSet, lambda: f64) -> Result<CoefficientSet> {
    update_coefficients_with(y, basis, lambda, None, &SubproblemOptions::default())
}

/// As [`update_coefficients`], optionally warm-started from a previous
/// solution on the same days.
pub fn update_coefficients_with(
    y: &SeriesMatrix,
    basis: &BasisSet,
    lambda: f64,
    warm: Option<&CoefficientSet>,
    opts: &SubproblemOptions,
) -> Result<CoefficientSet> {
    if y.row_len() != basis.len() {
        return Err(crate::Error::ShapeMismatch(format!(
            "series rows have {} samples, basis functions {}",
            y.row_len(),
            basis.len()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(crate::Error::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let (q, b) = assemble(y, basis, lambda);
    let start = warm
        .filter(|w| w.days() == y.observed() && w.rank() == basis.rank())
        .map(|w| w.values());
    let NnlsSolution { x, .. } = if q.dim() > opts.size_cap {
        projected_gradient(&q, &b, start, opts.tol, opts.pg_max_iter)?
    } else {
        active_set(&q, &b, start, opts.tol)?
    };
    Ok(CoefficientSet::from_raw(
        y.subject_id().to_string(),
        y.observed().to_vec(),
        basis.rank(),
        x,
    ))
}

/// Hessian and linear term of `Σ_t ‖y_t − Σ_j C_j(t) F_j‖² + λ Σ_j ‖D C_j‖²`
/// written as `½ xᵀQx − bᵀx` up to a factor of two and a constant.
pub(crate) fn assemble(y: &SeriesMatrix, basis: &BasisSet, lambda: f64) -> (BandedSym, Vec<f64>) {
    let r = basis.rank();
    let m = y.num_observed();
    let n = r * m;
    let gram = basis.gram();
    let mut q = BandedSym::zeros(n, 2 * r);
    let mut b = vec![0.0; n];
    for k in 0..m {
        let row = y.row(k);
        for j in 0..r {
            b[k * r + j] = dot(basis.function(j), row);
            for l in 0..=j {
                q.add(k * r + j, k * r + l, gram[j * r + l]);
            }
        }
    }
    if lambda > 0.0 {
        for s in 0..m.saturating_sub(2) {
            for a in 0..3 {
                for c in 0..=a {
                    let v = lambda * STENCIL[a] * STENCIL[c];
                    for j in 0..r {
                        q.add((s + a) * r + j, (s + c) * r + j, v);
                    }
                }
            }
        }
    }
    (q, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::solver::qp::QpMatrix;
    use crate::solver::second_difference_energy;

    fn unit(l: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; l];
        v[i] = 1.0;
        v
    }

    fn series(rows: &[Vec<f64>]) -> SeriesMatrix {
        let l = rows[0].len();
        SeriesMatrix::new(
            "s",
            rows.len(),
            l,
            (1..=rows.len()).collect(),
            rows.concat(),
        )
        .unwrap()
    }

    /// Direct evaluation of the subproblem objective.
    fn subproblem_value(y: &SeriesMatrix, basis: &BasisSet, lambda: f64, c: &CoefficientSet) -> f64 {
        let mut fit = 0.0;
        let mut rec = vec![0.0; basis.len()];
        for k in 0..y.num_observed() {
            basis.combine(c.row(k), &mut rec);
            fit += y.row(k).iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let smooth: f64 = (0..basis.rank())
            .map(|j| second_difference_energy(&c.trajectory(j)))
            .sum();
        fit + lambda * smooth
    }

    #[test]
    fn rank_one_unit_basis_recovers_column() {
        let vals = [0.2, 0.9, 0.0, 0.4, 0.7];
        let rows: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v, 0.3, 0.1]).collect();
        let y = series(&rows);
        let basis = BasisSet::new(vec![unit(3, 0)]).unwrap();
        let c = update_coefficients(&y, &basis, 0.0).unwrap();
        for (a, b) in c.trajectory(0).iter().zip(vals) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn assembled_quadratic_matches_direct_evaluation() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|t| (0..4).map(|i| ((t * 5 + i * 3) % 7) as f64 / 7.0).collect())
            .collect();
        let y = series(&rows);
        let basis = BasisSet::normalized(vec![vec![1.0, 2.0, 0.0, 1.0], vec![0.0, 1.0, 3.0, 1.0]]).unwrap();
        let lambda = 3.5;
        let (q, b) = assemble(&y, &basis, lambda);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).cos().abs()).collect();
        let mut qx = vec![0.0; 12];
        q.mul(&x, &mut qx);
        let quad = dot(&x, &qx) - 2.0 * dot(&b, &x)
            + y.values().iter().map(|v| v * v).sum::<f64>();
        let c = CoefficientSet::new("s", (1..=6).collect(), 2, x).unwrap();
        let direct = subproblem_value(&y, &basis, lambda, &c);
        assert!((quad - direct).abs() < 1e-10, "{quad} vs {direct}");
    }

    #[test]
    fn solution_is_locally_optimal_under_feasible_perturbations() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|t| (0..5).map(|i| ((t * 3 + i * 11) % 9) as f64 / 9.0).collect())
            .collect();
        let y = series(&rows);
        let basis = BasisSet::normalized(vec![
            vec![1.0, 1.0, 0.0, 0.0, 0.2],
            vec![0.0, 0.5, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 1.0, 1.0],
        ])
        .unwrap();
        let lambda = 10.0;
        let c = update_coefficients(&y, &basis, lambda).unwrap();
        let base = subproblem_value(&y, &basis, lambda, &c);
        let mut state = 12345u64;
        for _ in 0..200 {
            let mut v = c.values().to_vec();
            for x in v.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                *x = (*x + 1e-4 * u).max(0.0);
            }
            let p = CoefficientSet::new("s", c.days().to_vec(), 3, v).unwrap();
            assert!(subproblem_value(&y, &basis, lambda, &p) >= base - 1e-10);
        }
    }

    fn arb_problem() -> impl Strategy<Value = (SeriesMatrix, BasisSet)> {
        (
            proptest::collection::btree_set(1usize..30, 3..10),
            proptest::collection::vec(0.0f64..1.0, 40),
            proptest::collection::vec(0.0f64..1.0, 8),
        )
            .prop_filter_map("nonzero basis", |(days, vals, f)| {
                let days: Vec<usize> = days.into_iter().collect();
                let y = SeriesMatrix::new("s", 30, 4, days.clone(), vals[..days.len() * 4].to_vec()).ok()?;
                let basis = BasisSet::normalized(vec![f[..4].to_vec(), f[4..].to_vec()]).ok()?;
                Some((y, basis))
            })
    }

    fn terms(y: &SeriesMatrix, basis: &BasisSet, c: &CoefficientSet) -> (f64, f64) {
        let smooth: f64 = (0..basis.rank()).map(|j| second_difference_energy(&c.trajectory(j))).sum();
        (subproblem_value(y, basis, 0.0, c), smooth)
    }

    proptest! {
        #[test]
        fn larger_lambda_trades_fit_for_smoothness((y, basis) in arb_problem()) {
            let mut prev: Option<(f64, f64)> = None;
            for lambda in [0.0, 0.1, 10.0, 1e3] {
                let c = update_coefficients(&y, &basis, lambda).unwrap();
                let (fit, smooth) = terms(&y, &basis, &c);
                if let Some((pf, ps)) = prev {
                    prop_assert!(fit >= pf - 1e-7 * (1.0 + pf), "fit {} after {}", fit, pf);
                    prop_assert!(smooth <= ps + 1e-7 * (1.0 + ps), "smoothness {} after {}", smooth, ps);
                }
                prev = Some((fit, smooth));
            }
        }

        #[test]
        fn trailing_missing_rows_and_day_shifts_do_not_matter((y, basis) in arb_problem(), shift in 1usize..20) {
            let c = update_coefficients(&y, &basis, 5.0).unwrap();
            let padded = y.clone().with_num_rows(80).unwrap();
            let p = update_coefficients(&padded, &basis, 5.0).unwrap();
            prop_assert_eq!(p.values(), c.values());
            let days: Vec<usize> = y.observed().iter().map(|d| d + shift).collect();
            let moved = SeriesMatrix::new("s", 60, 4, days, y.values().to_vec()).unwrap();
            let m = update_coefficients(&moved, &basis, 5.0).unwrap();
            prop_assert_eq!(m.values(), c.values());
        }
    }
}
