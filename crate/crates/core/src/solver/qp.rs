//! Symmetric matrices for the box-constrained quadratic programs, with
//! Cholesky solves restricted to a subset of free variables.

/// Failure of a restricted Cholesky factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Pivot {
    /// Clearly negative pivot: the matrix is not positive semidefinite on the
    /// working subspace.
    Negative(f64),
    /// Pivot within rounding of zero at this position of the free list.
    Singular(usize),
}

pub(crate) trait QpMatrix {
    fn dim(&self) -> usize;
    /// `out = Q x`
    fn mul(&self, x: &[f64], out: &mut [f64]);
    /// Gershgorin bound on the largest eigenvalue.
    fn gershgorin(&self) -> f64;
    /// Solves `Q[free, free] z = rhs`.
    fn solve_free(&self, free: &[usize], rhs: &[f64]) -> Result<Vec<f64>, Pivot>;
}

fn pivot_threshold(max_diag: f64, bandwidth: usize) -> f64 {
    16.0 * f64::EPSILON * (bandwidth + 1) as f64 * max_diag
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct DenseSym {
    n: usize,
    a: Vec<f64>,
}

impl DenseSym {
    pub(crate) fn new(n: usize, a: Vec<f64>) -> Self {
        debug_assert_eq!(a.len(), n * n);
        Self { n, a }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }
}

impl QpMatrix for DenseSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a[i * self.n..(i + 1) * self.n]
                .iter()
                .zip(x)
                .map(|(q, v)| q * v)
                .sum();
        }
    }

    fn gershgorin(&self) -> f64 {
        (0..self.n)
            .map(|i| self.a[i * self.n..(i + 1) * self.n].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn solve_free(&self, free: &[usize], rhs: &[f64]) -> Result<Vec<f64>, Pivot> {
        let m = free.len();
        let scale = free.iter().map(|&i| self.at(i, i).abs()).fold(0.0, f64::max);
        let thr = pivot_threshold(scale, m.saturating_sub(1));
        let mut l = vec![0.0; m * m];
        for j in 0..m {
            let mut d = self.at(free[j], free[j]);
            for k in 0..j {
                d -= l[j * m + k] * l[j * m + k];
            }
            if d <= thr {
                return Err(if d < -thr {
                    Pivot::Negative(d)
                } else {
                    Pivot::Singular(j)
                });
            }
            let d = d.sqrt();
            l[j * m + j] = d;
            for i in j + 1..m {
                let mut s = self.at(free[i], free[j]);
                for k in 0..j {
                    s -= l[i * m + k] * l[j * m + k];
                }
                l[i * m + j] = s / d;
            }
        }
        let mut z = rhs.to_vec();
        for i in 0..m {
            let s: f64 = (0..i).map(|k| l[i * m + k] * z[k]).sum();
            z[i] = (z[i] - s) / l[i * m + i];
        }
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|k| l[k * m + i] * z[k]).sum();
            z[i] = (z[i] - s) / l[i * m + i];
        }
        Ok(z)
    }
}

/// Symmetric banded matrix; `band[i * (w + 1) + d]` holds `Q[i][i - d]`.
#[derive(Debug, Clone)]
pub(crate) struct BandedSym {
    n: usize,
    w: usize,
    band: Vec<f64>,
}

impl BandedSym {
    pub(crate) fn zeros(n: usize, w: usize) -> Self {
        Self {
            n,
            w,
            band: vec![0.0; n * (w + 1)],
        }
    }

    /// Adds `v` to `Q[i][j]` (and its mirror). Requires `|i - j| <= w`.
    #[inline]
    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.w);
        self.band[hi * (self.w + 1) + (hi - lo)] += v;
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.w {
            0.0
        } else {
            self.band[hi * (self.w + 1) + (hi - lo)]
        }
    }
}

impl QpMatrix for BandedSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        let w = self.w;
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n {
            let row = &self.band[i * (w + 1)..(i + 1) * (w + 1)];
            out[i] += row[0] * x[i];
            for d in 1..=w.min(i) {
                let j = i - d;
                out[i] += row[d] * x[j];
                out[j] += row[d] * x[i];
            }
        }
    }

    fn gershgorin(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            for d in 0..=self.w.min(i) {
                let v = self.band[i * (self.w + 1) + d].abs();
                sums[i] += v;
                if d > 0 {
                    sums[i - d] += v;
                }
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    fn solve_free(&self, free: &[usize], rhs: &[f64]) -> Result<Vec<f64>, Pivot> {
        let m = free.len();
        let w = self.w;
        let stride = w + 1;
        // Free indices are increasing, so the compressed submatrix keeps
        // bandwidth <= w.
        let scale = free.iter().map(|&i| self.at(i, i).abs()).fold(0.0, f64::max);
        let thr = pivot_threshold(scale, w);
        let mut l = vec![0.0; m * stride];
        for i in 0..m {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let mut s = self.at(free[i], free[j]);
                // sum_k L[i][k] L[j][k] for k in max(lo_i, lo_j)..j
                let kmin = lo.max(j.saturating_sub(w));
                for k in kmin..j {
                    s -= l[i * stride + (i - k)] * l[j * stride + (j - k)];
                }
                if i == j {
                    if s <= thr {
                        return Err(if s < -thr {
                            Pivot::Negative(s)
                        } else {
                            Pivot::Singular(i)
                        });
                    }
                    l[i * stride] = s.sqrt();
                } else {
                    l[i * stride + (i - j)] = s / l[j * stride];
                }
            }
        }
        let mut z = rhs.to_vec();
        for i in 0..m {
            let mut s = z[i];
            for k in i.saturating_sub(w)..i {
                s -= l[i * stride + (i - k)] * z[k];
            }
            z[i] = s / l[i * stride];
        }
        for i in (0..m).rev() {
            let mut s = z[i];
            for k in i + 1..(i + w + 1).min(m) {
                s -= l[k * stride + (k - i)] * z[k];
            }
            z[i] = s / l[i * stride];
        }
        Ok(z)
    }
}
