//! Alternating minimization of the full objective.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::series::{Dataset, DayRows};
use crate::solver::basis::{update_basis, update_basis_rescaling};
use crate::solver::coefficients::{update_coefficients_with, SubproblemOptions};
use crate::solver::init::{check_rank, init_basis_with, DEFAULT_INIT_ITERATIONS};
use crate::solver::{second_difference_energy, BasisSet, CoefficientSet, FactorModel};

/// How the basis half-step treats the scale shared between `F_j` and `C_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasisStep {
    /// Minimizes jointly over the basis and one scale per component, then
    /// moves the scale into the coefficients. The objective is monotone.
    #[default]
    Rescaling,
    /// Solves the unregularized column problems and normalizes, leaving the
    /// coefficients as they are. With `λ > 0` a sweep can increase the
    /// objective slightly.
    NormalizeOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_outer: usize,
    /// Stop once `(prev − cur) / prev` drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub basis_step: BasisStep,
    pub init_iterations: usize,
    pub subproblem: SubproblemOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            rel_tol: 1e-5,
            seed: 0,
            basis_step: BasisStep::default(),
            init_iterations: DEFAULT_INIT_ITERATIONS,
            subproblem: SubproblemOptions::default(),
        }
    }
}

/// The two parts of the objective, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `Σ_n Σ_{t∈T_n} ‖y_t − Σ_j C_j(t) F_j‖²`
    pub fit: f64,
    /// `Σ_n Σ_j ‖D C[n]_j‖²`
    pub smoothness: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, lambda: f64) -> f64 {
        self.fit + lambda * self.smoothness
    }

    /// Evaluates both terms for a basis and coefficients aligned with `d`.
    pub fn evaluate(d: &Dataset, basis: &BasisSet, coeffs: &[CoefficientSet]) -> Result<Self> {
        check_model(d, basis, coeffs)?;
        // collect then sum in order so the result does not depend on threads
        let parts: Vec<(f64, f64)> = d
            .series()
            .par_iter()
            .zip(coeffs)
            .map(|(y, c)| {
                let mut rec = vec![0.0; basis.len()];
                let mut fit = 0.0;
                for k in 0..y.num_observed() {
                    basis.combine(c.row(k), &mut rec);
                    fit += y.row(k).iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                let smooth = (0..c.rank()).map(|j| second_difference_energy(&c.trajectory(j))).sum();
                (fit, smooth)
            })
            .collect();
        let (fit, smoothness) = parts.iter().fold((0.0, 0.0), |(f, s), (a, b)| (f + a, s + b));
        Ok(Self { fit, smoothness })
    }
}

/// Value of the objective for a fitted model on `d`.
pub fn objective(d: &Dataset, m: &FactorModel) -> Result<f64> {
    Ok(ObjectiveTerms::evaluate(d, &m.basis, &m.coeffs)?.total(m.lambda))
}

fn check_model(d: &Dataset, basis: &BasisSet, coeffs: &[CoefficientSet]) -> Result<()> {
    if coeffs.len() != d.len() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} subjects, dataset {}",
            coeffs.len(),
            d.len()
        )));
    }
    for (y, c) in d.series().iter().zip(coeffs) {
        if y.row_len() != basis.len() {
            return Err(Error::ShapeMismatch(format!(
                "basis length {} differs from row length {}",
                basis.len(),
                y.row_len()
            )));
        }
        if c.subject_id() != y.subject_id() || c.days() != y.observed() || c.rank() != basis.rank() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients of {} do not match the dataset",
                y.subject_id()
            )));
        }
    }
    Ok(())
}

/// Fits a rank-`r` model starting from the NMF initialization.
pub fn fit(d: &Dataset, r: usize, lambda: f64, opts: &FitOptions) -> Result<FactorModel> {
    let l = d.row_len().ok_or(Error::EmptyDataset)?;
    check_rank(r, l, d.total_observed_rows())?;
    let basis = init_basis_with(d, r, opts.seed, opts.init_iterations)?;
    fit_from(d, basis, lambda, opts)
}

/// Fits starting from a given basis.
///
/// Each outer iteration updates the basis and then all coefficients, so the
/// returned coefficients are always optimal for the returned basis.
/// `objective_trace[0]` is the objective right after the first coefficient
/// sweep; every further entry follows one outer iteration.
pub fn fit_from(d: &Dataset, basis: BasisSet, lambda: f64, opts: &FitOptions) -> Result<FactorModel> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    if !(opts.rel_tol >= 0.0) {
        return Err(Error::InvalidArgument("rel_tol must be nonnegative".into()));
    }
    let mut basis = basis;
    let mut coeffs = coefficient_sweep(d, &basis, lambda, None, &opts.subproblem)?;
    let mut trace = vec![ObjectiveTerms::evaluate(d, &basis, &coeffs)?.total(lambda)];
    let mut converged = trace[0] == 0.0;

    for _ in 0..opts.max_outer {
        if converged {
            break;
        }
        let up = match opts.basis_step {
            BasisStep::Rescaling => update_basis_rescaling(d, &mut coeffs, lambda)?,
            BasisStep::NormalizeOnly => update_basis(d, &coeffs)?,
        };
        basis = up.basis;
        coeffs = coefficient_sweep(d, &basis, lambda, Some(&coeffs), &opts.subproblem)?;
        let cur = ObjectiveTerms::evaluate(d, &basis, &coeffs)?.total(lambda);
        let prev = *trace.last().expect("trace is nonempty");
        trace.push(cur);
        converged = cur == 0.0 || (prev - cur) / prev < opts.rel_tol && up.reseeded.is_empty();
    }

    Ok(FactorModel {
        basis,
        coeffs,
        lambda,
        objective_trace: trace,
        converged,
    })
}

fn coefficient_sweep(
    d: &Dataset,
    basis: &BasisSet,
    lambda: f64,
    warm: Option<&[CoefficientSet]>,
    opts: &SubproblemOptions,
) -> Result<Vec<CoefficientSet>> {
    d.series()
        .par_iter()
        .enumerate()
        .map(|(n, y)| update_coefficients_with(y, basis, lambda, warm.map(|w| &w[n]), opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::SeriesMatrix;
    use crate::solver::second_difference;

    fn small_dataset() -> Dataset {
        let series = (0..3)
            .map(|n| {
                let days: Vec<usize> = (1..=12).filter(|t| (t + n) % 4 != 0).collect();
                let values: Vec<f64> = days
                    .iter()
                    .flat_map(|&t| (0..6).map(move |i| (((t * 5 + i * 3 + n * 7) % 11) as f64) / 11.0))
                    .collect();
                SeriesMatrix::new(format!("s{n}"), 12, 6, days, values).unwrap()
            })
            .collect();
        Dataset::new(series).unwrap()
    }

    /// Direct triple loop over subjects, days and samples.
    fn naive_objective(d: &Dataset, m: &FactorModel) -> f64 {
        let mut total = 0.0;
        for (y, c) in d.series().iter().zip(&m.coeffs) {
            for k in 0..y.num_observed() {
                for i in 0..y.row_len() {
                    let mut rec = 0.0;
                    for j in 0..m.rank() {
                        rec += c.get(k, j) * m.basis.function(j)[i];
                    }
                    total += (y.row(k)[i] - rec).powi(2);
                }
            }
            for j in 0..m.rank() {
                total += m.lambda * second_difference(&c.trajectory(j)).iter().map(|v| v * v).sum::<f64>();
            }
        }
        total
    }

    #[test]
    fn objective_matches_naive_sum() {
        let d = small_dataset();
        let opts = FitOptions {
            max_outer: 3,
            ..FitOptions::default()
        };
        let m = fit(&d, 2, 2.5, &opts).unwrap();
        let a = objective(&d, &m).unwrap();
        let b = naive_objective(&d, &m);
        assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        assert_eq!(*m.objective_trace.last().unwrap(), a);
    }

    #[test]
    fn zero_coefficients_give_data_energy() {
        let d = small_dataset();
        let basis = BasisSet::normalized(vec![vec![1.0; 6]]).unwrap();
        let coeffs: Vec<CoefficientSet> = d
            .series()
            .iter()
            .map(|y| CoefficientSet::new(y.subject_id(), y.observed().to_vec(), 1, vec![0.0; y.num_observed()]).unwrap())
            .collect();
        let terms = ObjectiveTerms::evaluate(&d, &basis, &coeffs).unwrap();
        let energy: f64 = d.stacked_rows().flatten().map(|v| v * v).sum();
        assert!((terms.fit - energy).abs() < 1e-12);
        assert_eq!(terms.smoothness, 0.0);
    }

    #[test]
    fn trace_is_monotone_and_constraints_hold() {
        let d = small_dataset();
        for step in [BasisStep::Rescaling] {
            let opts = FitOptions {
                max_outer: 40,
                rel_tol: 0.0,
                basis_step: step,
                ..FitOptions::default()
            };
            let m = fit(&d, 3, 10.0, &opts).unwrap();
            for w in m.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-10), "{} -> {}", w[0], w[1]);
            }
            for f in m.basis.functions() {
                assert!((crate::solver::norm2(f) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn misaligned_model_is_rejected() {
        let d = small_dataset();
        let m = fit(&d, 1, 0.0, &FitOptions { max_outer: 1, ..FitOptions::default() }).unwrap();
        let other = Dataset::new(d.series()[..2].to_vec()).unwrap();
        assert_eq!(objective(&other, &m).unwrap_err().code(), "shape-mismatch");
    }

    #[test]
    fn empty_dataset() {
        let d = Dataset::new(Vec::new()).unwrap();
        assert_eq!(fit(&d, 1, 0.0, &FitOptions::default()).unwrap_err().code(), "empty-dataset");
    }

    #[test]
    fn deterministic_trace() {
        let d = small_dataset();
        let opts = FitOptions {
            max_outer: 10,
            seed: 5,
            ..FitOptions::default()
        };
        let a = fit(&d, 2, 1.0, &opts).unwrap();
        let b = fit(&d, 2, 1.0, &opts).unwrap();
        assert_eq!(a, b);
    }
}
