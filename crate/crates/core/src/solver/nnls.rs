//! Nonnegative quadratic programs `min ½ xᵀQx − bᵀx  s.t.  x ≥ 0`.
//!
//! The primary engine is a primal active-set method in the style of
//! Lawson–Hanson, written for the QP form so that it works on any positive
//! semidefinite `Q` (dense or banded). Each pass solves the equality-constrained
//! problem on the free set exactly, so the returned point is a KKT point up
//! to rounding. Entering variables are chosen by most negative gradient,
//! lowest index on ties.
//!
//! A projected-gradient engine with the same exit test is provided for
//! problems too large for the factorization budget.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::solver::qp::{DenseSym, Pivot, QpMatrix};

/// Default KKT tolerance.
pub const KKT_TOL: f64 = 1e-8;

/// First-order optimality measures at a returned point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `min_i (Qx − b)_i`, which should be `≥ −tol·scale`.
    pub min_gradient: f64,
    /// `xᵀ(Qx − b)`.
    pub complementarity: f64,
    /// `bᵀx`.
    pub linear_term: f64,
    /// Magnitude used to scale the tolerance: `1 + ‖b‖∞`.
    pub scale: f64,
    /// Bound on the floating-point error of each gradient entry,
    /// `32·ε·‖Q‖∞·‖x‖∞`. Matters only for badly conditioned `Q`.
    pub rounding: f64,
    pub x_l1: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.min_gradient >= -(tol * self.scale + self.rounding)
            && self.complementarity.abs()
                <= tol * self.scale * (1.0 + self.linear_term.abs()) + self.rounding * self.x_l1
    }

    fn gradient_floor(&self, tol: f64) -> f64 {
        -(tol * self.scale + self.rounding)
    }
}

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub kkt: KktReport,
}

fn kkt_report<M: QpMatrix>(q: &M, b: &[f64], x: &[f64], grad: &mut [f64]) -> KktReport {
    q.mul(x, grad);
    for (g, bi) in grad.iter_mut().zip(b) {
        *g -= bi;
    }
    let xmax = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let bmax = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    KktReport {
        min_gradient: grad.iter().copied().fold(f64::INFINITY, f64::min),
        complementarity: x.iter().zip(grad.iter()).map(|(a, g)| a * g).sum(),
        linear_term: x.iter().zip(b).map(|(a, c)| a * c).sum(),
        scale: 1.0 + bmax,
        rounding: 32.0 * f64::EPSILON * q.gershgorin() * xmax,
        x_l1: x.iter().map(|v| v.abs()).sum(),
    }
}

/// Active-set solve. `start` (clamped at zero) seeds the free set; without it
/// the clamped unconstrained minimizer is used when it exists.
pub(crate) fn active_set<M: QpMatrix>(
    q: &M,
    b: &[f64],
    start: Option<&[f64]>,
    tol: f64,
) -> Result<NnlsSolution> {
    let n = q.dim();
    debug_assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    match start {
        Some(s) => {
            for (xi, &si) in x.iter_mut().zip(s) {
                *xi = si.max(0.0);
            }
        }
        None => {
            let all: Vec<usize> = (0..n).collect();
            if let Ok(z) = q.solve_free(&all, b) {
                for (xi, zi) in x.iter_mut().zip(z) {
                    *xi = zi.max(0.0);
                }
            }
        }
    }
    let mut free: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    // Variables that sit on a zero-curvature direction of the free set.
    let mut degenerate = vec![false; n];
    // A variable that left immediately after entering; skipped until another
    // variable enters successfully.
    let mut stalled: Option<usize> = None;
    let mut entered: Option<usize> = None;
    let mut grad = vec![0.0; n];
    let max_iter = 30 * n + 100;
    let mut iterations = 0;

    loop {
        // Inner loop: move to the minimizer on the current free set.
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NotConverged { iterations });
            }
            let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
            if idx.is_empty() {
                break;
            }
            let rhs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            let z = match q.solve_free(&idx, &rhs) {
                Ok(z) => z,
                Err(Pivot::Negative(pivot)) => return Err(Error::IllPosedSubproblem { pivot }),
                Err(Pivot::Singular(pos)) => {
                    let i = idx[pos];
                    degenerate[i] = true;
                    free[i] = false;
                    x[i] = 0.0;
                    continue;
                }
            };
            if z.iter().all(|&v| v > 0.0) {
                for (&i, zi) in idx.iter().zip(z) {
                    x[i] = zi;
                }
                break;
            }
            let mut alpha = 1.0;
            let mut blocking = None;
            for (&i, &zi) in idx.iter().zip(&z) {
                if zi <= 0.0 {
                    let a = x[i] / (x[i] - zi);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
            }
            for (&i, &zi) in idx.iter().zip(&z) {
                x[i] += alpha * (zi - x[i]);
                if Some(i) == blocking || x[i] <= 0.0 {
                    x[i] = 0.0;
                    free[i] = false;
                }
            }
        }

        match entered.take() {
            Some(i) if !free[i] => stalled = Some(i),
            Some(_) => stalled = None,
            None => {}
        }

        let kkt = kkt_report(q, b, &x, &mut grad);
        let threshold = kkt.gradient_floor(tol);
        let mut best: Option<usize> = None;
        for i in 0..n {
            if free[i] || degenerate[i] || stalled == Some(i) {
                continue;
            }
            if grad[i] < threshold && best.is_none_or(|j| grad[i] < grad[j]) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => {
                free[i] = true;
                entered = Some(i);
            }
            None => {
                return Ok(NnlsSolution {
                    x,
                    iterations,
                    kkt,
                })
            }
        }
    }
}

/// Accelerated projected gradient with adaptive restart, stopping on the same
/// KKT test as the active-set engine.
pub(crate) fn projected_gradient<M: QpMatrix>(
    q: &M,
    b: &[f64],
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<NnlsSolution> {
    let n = q.dim();
    let lip = q.gershgorin().max(f64::MIN_POSITIVE);
    let mut x: Vec<f64> = match start {
        Some(s) => s.iter().map(|v| v.max(0.0)).collect(),
        None => vec![0.0; n],
    };
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut grad = vec![0.0; n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        q.mul(&y, &mut grad);
        for i in 0..n {
            next[i] = (y[i] - (grad[i] - b[i]) / lip).max(0.0);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // restart when the momentum direction opposes the gradient step
        let uphill: f64 = (0..n).map(|i| (y[i] - next[i]) * (next[i] - x[i])).sum();
        if uphill > 0.0 {
            t = 1.0;
            y.copy_from_slice(&next);
        } else {
            let beta = (t - 1.0) / t_next;
            for i in 0..n {
                y[i] = next[i] + beta * (next[i] - x[i]);
            }
            t = t_next;
        }
        std::mem::swap(&mut x, &mut next);
        if it % 10 == 0 || it == max_iter {
            let kkt = kkt_report(q, b, &x, &mut grad);
            if kkt.satisfied(tol) {
                return Ok(NnlsSolution {
                    x,
                    iterations: it,
                    kkt,
                });
            }
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
    })
}

/// Solves `min ½ xᵀQx − bᵀx` subject to `x ≥ 0` for a dense symmetric
/// positive semidefinite `Q`.
///
/// Fails with [`Error::IllPosedSubproblem`] if a working direction with
/// negative curvature is found.
pub fn nnls_solve(q: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let n = b.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "Q is {}x{}, b has {} entries",
            q.nrows(),
            q.ncols(),
            n
        )));
    }
    let mut a = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            a.push(0.5 * (q[(i, j)] + q[(j, i)]));
        }
    }
    active_set(&DenseSym::new(n, a), b.as_slice(), None, KKT_TOL)
}

pub(crate) fn nnls_dense(n: usize, q: Vec<f64>, b: &[f64], start: Option<&[f64]>) -> Result<NnlsSolution> {
    active_set(&DenseSym::new(n, q), b, start, KKT_TOL)
}
