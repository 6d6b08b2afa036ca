//! Fitting the nonnegative, time-smoothed factor model.
//!
//! Every subject `n` is approximated row by row as
//! `Y[n](t, ·) ≈ Σ_j C[n]_j(t) F_j` on its observed rows, with `F_j ≥ 0`,
//! `‖F_j‖₂ = 1`, `C ≥ 0`, and a penalty `λ Σ_j ‖D C[n]_j‖²` where `D` is the
//! second-difference operator applied to the coefficients of consecutive
//! observed rows.

mod basis;
mod coefficients;
mod difference;
mod fit;
mod init;
mod nnls;
mod qp;
mod spectrum;

pub use basis::{update_basis, update_basis_rescaling, BasisUpdate};
pub use coefficients::{update_coefficients, update_coefficients_with, SubproblemOptions};
pub use difference::{second_difference, second_difference_energy};
pub use fit::{fit, fit_from, objective, BasisStep, FitOptions, ObjectiveTerms};
pub use init::{init_basis, nmf_multiplicative, DEFAULT_INIT_ITERATIONS};
pub use nnls::{nnls_solve, KktReport, NnlsSolution, KKT_TOL};
pub use spectrum::{singular_spectrum, singular_values};

use crate::error::{Error, Result};
use crate::series::DayRows;

/// Tolerance on the unit-norm constraint of basis functions.
pub const NORM_TOL: f64 = 1e-9;

/// `r` nonnegative basis functions of a common length, each with unit
/// Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    len: usize,
    functions: Vec<Vec<f64>>,
}

impl BasisSet {
    /// Validates nonnegativity and unit norm.
    pub fn new(functions: Vec<Vec<f64>>) -> Result<Self> {
        let Some(len) = functions.first().map(Vec::len) else {
            return Err(Error::InvalidArgument("basis needs at least one function".into()));
        };
        for (j, f) in functions.iter().enumerate() {
            if f.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "basis function {j} has length {}, expected {len}",
                    f.len()
                )));
            }
            if f.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "basis function {j} has a negative or non-finite entry"
                )));
            }
            let norm = norm2(f);
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "basis function {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { len, functions })
    }

    /// Scales every function to unit norm. Zero functions are rejected.
    pub fn normalized(mut functions: Vec<Vec<f64>>) -> Result<Self> {
        for (j, f) in functions.iter_mut().enumerate() {
            let norm = norm2(f);
            if norm == 0.0 {
                return Err(Error::DegenerateComponent { component: j });
            }
            f.iter_mut().for_each(|v| *v = (*v / norm).max(0.0));
        }
        Self::new(functions)
    }

    pub fn rank(&self) -> usize {
        self.functions.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn function(&self, j: usize) -> &[f64] {
        &self.functions[j]
    }

    pub fn functions(&self) -> &[Vec<f64>] {
        &self.functions
    }

    /// `G[j][k] = ⟨F_j, F_k⟩`, row-major `r × r`.
    pub fn gram(&self) -> Vec<f64> {
        let r = self.rank();
        let mut g = vec![0.0; r * r];
        for j in 0..r {
            for k in 0..=j {
                let v = dot(&self.functions[j], &self.functions[k]);
                g[j * r + k] = v;
                g[k * r + j] = v;
            }
        }
        g
    }

    /// Writes `Σ_j c_j F_j` into `out`.
    pub fn combine(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (f, &cj) in self.functions.iter().zip(c) {
            if cj != 0.0 {
                for (o, &fi) in out.iter_mut().zip(f) {
                    *o += cj * fi;
                }
            }
        }
    }
}

/// One subject's coefficient trajectories, indexed by its observed days.
/// Stored row-major: row `k` holds `(C_1(t_k), …, C_r(t_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    subject_id: String,
    days: Vec<usize>,
    rank: usize,
    values: Vec<f64>,
}

impl CoefficientSet {
    pub fn new(
        subject_id: impl Into<String>,
        days: Vec<usize>,
        rank: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        crate::series::check_days(&days)?;
        if values.len() != days.len() * rank {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for {} days at rank {rank}",
                values.len(),
                days.len()
            )));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "coefficients must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            days,
            rank,
            values,
        })
    }

    /// Builds from per-component trajectories `C_1..C_r`.
    pub fn from_trajectories(
        subject_id: impl Into<String>,
        days: Vec<usize>,
        trajectories: &[Vec<f64>],
    ) -> Result<Self> {
        let rank = trajectories.len();
        let m = days.len();
        if trajectories.iter().any(|c| c.len() != m) {
            return Err(Error::ShapeMismatch(
                "trajectory lengths differ from the number of days".into(),
            ));
        }
        let mut values = vec![0.0; m * rank];
        for (j, c) in trajectories.iter().enumerate() {
            for (k, &v) in c.iter().enumerate() {
                values[k * rank + j] = v;
            }
        }
        Self::new(subject_id, days, rank, values)
    }

    pub(crate) fn from_raw(subject_id: String, days: Vec<usize>, rank: usize, values: Vec<f64>) -> Self {
        Self {
            subject_id,
            days,
            rank,
            values,
        }
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.rank + j]
    }

    /// Component `j` as a vector over the observed days.
    pub fn trajectory(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.rank).copied().collect()
    }

    pub(crate) fn scale_component(&mut self, j: usize, s: f64) {
        for v in self.values.iter_mut().skip(j).step_by(self.rank) {
            *v *= s;
        }
    }

    /// Restricts to days in `[start, end)`; `None` if no day falls inside.
    pub fn window(&self, start: usize, end: usize) -> Option<Self> {
        let mut days = Vec::new();
        let mut values = Vec::new();
        for (k, &d) in self.days.iter().enumerate() {
            if d >= start && d < end {
                days.push(d);
                values.extend_from_slice(self.row(k));
            }
        }
        (!days.is_empty()).then(|| Self::from_raw(self.subject_id.clone(), days, self.rank, values))
    }
}

impl DayRows for CoefficientSet {
    fn days(&self) -> &[usize] {
        &self.days
    }
    fn width(&self) -> usize {
        self.rank
    }
    fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.rank..(k + 1) * self.rank]
    }
}

/// A fitted model: shared basis, per-subject coefficients and fit metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub basis: BasisSet,
    pub coeffs: Vec<CoefficientSet>,
    pub lambda: f64,
    /// Objective after the initial coefficient sweep, then after every outer
    /// iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Number of outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }

    pub fn coefficients_of(&self, subject_id: &str) -> Option<&CoefficientSet> {
        self.coeffs.iter().find(|c| c.subject_id() == subject_id)
    }

    /// Low-rank reconstruction of one subject on its coefficient days.
    pub fn reconstruct(&self, coeffs: &CoefficientSet) -> crate::series::DayTable {
        reconstruct(&self.basis, coeffs)
    }
}

/// Rows `Σ_j C_j(t) F_j` for every day of `coeffs`; values are not clipped.
pub fn reconstruct<R: DayRows + ?Sized>(basis: &BasisSet, coeffs: &R) -> crate::series::DayTable {
    debug_assert_eq!(coeffs.width(), basis.rank());
    let l = basis.len();
    let mut values = vec![0.0; coeffs.num_observed() * l];
    for k in 0..coeffs.num_observed() {
        basis.combine(coeffs.row(k), &mut values[k * l..(k + 1) * l]);
    }
    crate::series::DayTable::new(coeffs.days().to_vec(), l, values)
        .expect("days of a coefficient set are valid")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
