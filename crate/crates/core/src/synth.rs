//! Seeded synthetic cohorts with a known factorization, and small oracles
//! for checking fits against them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::series::{Dataset, DayRows, SeriesMatrix};
use crate::solver::{dot, norm2, BasisSet, CoefficientSet, FactorModel};

/// Subpopulations that differ only in the trajectory shape of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedGroups {
    /// 0-based component index.
    pub component: usize,
    /// Number of groups, at most 4.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub num_rows: usize,
    pub row_len: usize,
    pub rank: usize,
    pub noise_std: f64,
    pub missing_fraction: f64,
    pub seed: u64,
    /// Let bumps spread over the whole period instead of one segment each.
    pub overlap: bool,
    pub groups: Option<PlantedGroups>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 20,
            num_rows: 200,
            row_len: 48,
            rank: 3,
            noise_std: 0.0,
            missing_fraction: 0.0,
            seed: 0,
            overlap: false,
            groups: None,
        }
    }
}

impl SynthSpec {
    /// Sleep-diary sized cohort: 100 subjects, 700 days,
    /// 144 ten-minute samples per day, rank 5.
    pub fn sleep_like(seed: u64) -> Self {
        Self {
            subjects: 100,
            num_rows: 700,
            row_len: 144,
            rank: 5,
            noise_std: 0.05,
            missing_fraction: 0.3,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.subjects == 0 || self.num_rows == 0 {
            return bad("need at least one subject and one row".into());
        }
        if self.rank == 0 || self.rank > self.row_len {
            return bad(format!("rank {} does not fit row length {}", self.rank, self.row_len));
        }
        if self.row_len < 2 {
            return bad("row length must be at least 2".into());
        }
        if !self.overlap && self.row_len / self.rank < MIN_SEGMENT {
            return bad(format!(
                "{} separated bumps need at least {} samples per row",
                self.rank,
                self.rank * MIN_SEGMENT
            ));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad("noise_std must be finite and nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1)".into());
        }
        if let Some(g) = self.groups {
            if g.component >= self.rank || !(1..=4).contains(&g.count) {
                return bad("planted groups need a valid component and 1 to 4 groups".into());
            }
        }
        Ok(())
    }
}

const MIN_SEGMENT: usize = 3;

/// Everything `generate` produced.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub basis: BasisSet,
    /// Coefficients on every row `1..=num_rows`.
    pub coeffs: Vec<CoefficientSet>,
    /// Exact synthesis on every row.
    pub clean: Dataset,
    /// Noisy, clamped and row-masked observations.
    pub observed: Dataset,
    /// Planted group of each subject, if requested.
    pub labels: Option<Vec<usize>>,
}

impl GroundTruth {
    /// The true factors as a model aligned with `observed`.
    pub fn model(&self, lambda: f64) -> FactorModel {
        let coeffs = self
            .observed
            .series()
            .iter()
            .zip(&self.coeffs)
            .map(|(y, c)| restrict(c, y.observed()))
            .collect();
        FactorModel {
            basis: self.basis.clone(),
            coeffs,
            lambda,
            objective_trace: Vec::new(),
            converged: true,
        }
    }
}

fn restrict(c: &CoefficientSet, days: &[usize]) -> CoefficientSet {
    let mut values = Vec::with_capacity(days.len() * c.rank());
    for &d in days {
        let k = c.position(d).expect("truth covers every day");
        values.extend_from_slice(c.row(k));
    }
    CoefficientSet::from_raw(c.subject_id().to_string(), days.to_vec(), c.rank(), values)
}

/// Draws a cohort from `spec`. Subject `n` uses its own random stream, so the
/// output does not depend on the number of threads.
pub fn generate(spec: &SynthSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = draw_basis(spec, &mut rng)?;
    // Cap amplitudes so that a clean row never exceeds 1.
    let share = if spec.overlap { spec.rank as f64 } else { 1.0 };
    let caps: Vec<f64> = basis
        .functions()
        .iter()
        .map(|f| 1.0 / (share * f.iter().copied().fold(0.0, f64::max)))
        .collect();
    let labels = spec.groups.map(|g| (0..spec.subjects).map(|n| n % g.count).collect::<Vec<_>>());

    let subjects: Vec<(CoefficientSet, SeriesMatrix, SeriesMatrix)> = (0..spec.subjects)
        .into_par_iter()
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(n as u64 + 1);
            let group = labels.as_ref().map(|l| l[n]);
            draw_subject(spec, &basis, &caps, n, group, &mut rng)
        })
        .collect::<Result<_>>()?;

    let mut coeffs = Vec::with_capacity(spec.subjects);
    let mut clean = Vec::with_capacity(spec.subjects);
    let mut observed = Vec::with_capacity(spec.subjects);
    for (c, y, o) in subjects {
        coeffs.push(c);
        clean.push(y);
        observed.push(o);
    }
    Ok(GroundTruth {
        basis,
        coeffs,
        clean: Dataset::new(clean)?,
        observed: Dataset::new(observed)?,
        labels,
    })
}

fn draw_basis(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<BasisSet> {
    let l = spec.row_len;
    let seg = l / spec.rank;
    let mut functions = Vec::with_capacity(spec.rank);
    for j in 0..spec.rank {
        let lo = j * seg;
        let hi = if j + 1 == spec.rank { l } else { lo + seg };
        let width = (hi - lo) as f64;
        let center = lo as f64 + width * rng.random_range(0.35..0.65);
        let sigma = width * rng.random_range(0.12..0.25);
        let f: Vec<f64> = (0..l)
            .map(|i| {
                if !spec.overlap && (i < lo || i >= hi) {
                    return 0.0;
                }
                let z = (i as f64 - center) / sigma;
                (-0.5 * z * z).exp()
            })
            .collect();
        functions.push(f);
    }
    BasisSet::normalized(functions)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic ramp (or decay) from 0 to `amp`, clipped so that it is exactly
/// zero on one side of `mid` and exactly `amp` on the other.
fn trajectory(t_len: usize, amp: f64, rising: bool, mid: f64, width: f64) -> Vec<f64> {
    const CLIP: f64 = 0.05;
    (1..=t_len)
        .map(|t| {
            let s = logistic((t as f64 - mid) / width);
            let s = ((s - CLIP) / (1.0 - 2.0 * CLIP)).clamp(0.0, 1.0);
            amp * if rising { s } else { 1.0 - s }
        })
        .collect()
}

/// Subject `n` leads with component `n mod r`: every other free component
/// runs in the opposite direction, so near one end of the series only the
/// leading component is active. These pure rows make the factorization
/// identifiable.
fn draw_subject(
    spec: &SynthSpec,
    basis: &BasisSet,
    caps: &[f64],
    n: usize,
    group: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(CoefficientSet, SeriesMatrix, SeriesMatrix)> {
    let t_len = spec.num_rows;
    let tf = t_len as f64;
    let lead = n % spec.rank;
    let lead_rising = rng.random_bool(0.5);
    let mut traj = Vec::with_capacity(spec.rank);
    for (j, &cap) in caps.iter().enumerate() {
        let planted = spec.groups.filter(|g| g.component == j).zip(group);
        let c = match planted {
            // fixed, well separated shapes per group
            Some((_, g)) => {
                let (rising, mid) = [(true, 0.3), (false, 0.3), (true, 0.7), (false, 0.7)][g];
                trajectory(t_len, 0.8 * cap, rising, mid * tf, 0.05 * tf + 1.0)
            }
            None => {
                let amp = rng.random_range(0.3..0.9) * cap;
                let mid = rng.random_range(0.25..0.75) * tf;
                let width = rng.random_range(0.02..0.06) * tf + 0.5;
                trajectory(t_len, amp, lead_rising == (j == lead), mid, width)
            }
        };
        traj.push(c);
    }
    let id = format!("s{:04}", n + 1);
    let days: Vec<usize> = (1..=t_len).collect();
    let coeffs = CoefficientSet::from_trajectories(id.clone(), days.clone(), &traj)?;

    let l = spec.row_len;
    let mut clean = vec![0.0; t_len * l];
    for k in 0..t_len {
        basis.combine(coeffs.row(k), &mut clean[k * l..(k + 1) * l]);
    }
    // guard against rounding just above 1
    clean.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let mut kept_days = Vec::new();
    let mut values = Vec::new();
    for k in 0..t_len {
        let drop = rng.random_bool(spec.missing_fraction);
        // draw noise for every row so masking does not shift the stream
        let row: Vec<f64> = clean[k * l..(k + 1) * l]
            .iter()
            .map(|&v| {
                let e = if spec.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                (v + e).clamp(0.0, 1.0)
            })
            .collect();
        if !drop {
            kept_days.push(k + 1);
            values.extend(row);
        }
    }
    if kept_days.is_empty() {
        let k = rng.random_range(0..t_len);
        kept_days.push(k + 1);
        values.extend_from_slice(&clean[k * l..(k + 1) * l]);
    }
    let clean = SeriesMatrix::new(id.clone(), t_len, l, days, clean)?;
    let observed = SeriesMatrix::new(id, t_len, l, kept_days, values)?;
    Ok((coeffs, clean, observed))
}

/// Per-component recovery errors, indexed by true component.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// `assignment[j]` is the learned component matched to true component `j`.
    pub assignment: Vec<usize>,
    /// `‖F̂_{π(j)} − F_j‖₂`
    pub basis_err: Vec<f64>,
    /// `‖s_j Ĉ_{π(j)} − C_j‖ / ‖C_j‖` over the model's days, with `s_j` the
    /// least-squares scale.
    pub coeff_err: Vec<f64>,
}

impl Recovery {
    pub fn max_basis_err(&self) -> f64 {
        self.basis_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_coeff_err(&self) -> f64 {
        self.coeff_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Matches learned to true components by the assignment that maximizes the
/// total basis inner product, then measures the errors.
pub fn recovery_error(m: &FactorModel, gt: &GroundTruth) -> Result<Recovery> {
    let r = gt.basis.rank();
    if m.rank() != r || m.basis.len() != gt.basis.len() {
        return Err(Error::ShapeMismatch(format!(
            "model has rank {} and length {}, truth {} and {}",
            m.rank(),
            m.basis.len(),
            r,
            gt.basis.len()
        )));
    }
    let mut score = vec![0.0; r * r];
    for j in 0..r {
        for k in 0..r {
            score[j * r + k] = dot(gt.basis.function(j), m.basis.function(k));
        }
    }
    let assignment = best_assignment(r, &score);

    let mut basis_err = Vec::with_capacity(r);
    let mut coeff_err = Vec::with_capacity(r);
    for (j, &k) in assignment.iter().enumerate() {
        let diff: Vec<f64> = gt
            .basis
            .function(j)
            .iter()
            .zip(m.basis.function(k))
            .map(|(a, b)| a - b)
            .collect();
        basis_err.push(norm2(&diff));

        let (mut tt, mut th, mut hh) = (0.0, 0.0, 0.0);
        for c in &m.coeffs {
            let truth = gt
                .coeffs
                .iter()
                .find(|t| t.subject_id() == c.subject_id())
                .ok_or_else(|| Error::ShapeMismatch(format!("subject {} not in truth", c.subject_id())))?;
            for (kk, &day) in c.days().iter().enumerate() {
                let p = truth
                    .position(day)
                    .ok_or_else(|| Error::ShapeMismatch(format!("day {day} outside the truth")))?;
                let (a, b) = (truth.get(p, j), c.get(kk, k));
                tt += a * a;
                th += a * b;
                hh += b * b;
            }
        }
        let s = if hh > 0.0 { th / hh } else { 0.0 };
        // ‖sĈ − C‖² = s²hh − 2s·th + tt
        let resid = (s * s * hh - 2.0 * s * th + tt).max(0.0).sqrt();
        coeff_err.push(if tt > 0.0 { resid / tt.sqrt() } else { resid });
    }
    Ok(Recovery {
        assignment,
        basis_err,
        coeff_err,
    })
}

/// Exact maximum-weight assignment by dynamic programming over subsets of
/// learned components. Ties go to the lexicographically first assignment.
fn best_assignment(r: usize, score: &[f64]) -> Vec<usize> {
    let full = 1usize << r;
    // best[mask]: best total for true components 0..popcount(mask) using `mask`
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if best[mask] == f64::NEG_INFINITY {
            continue;
        }
        let j = mask.count_ones() as usize;
        if j == r {
            continue;
        }
        for k in 0..r {
            if mask & (1 << k) != 0 {
                continue;
            }
            let next = mask | (1 << k);
            let v = best[mask] + score[j * r + k];
            if v > best[next] {
                best[next] = v;
                choice[next] = k;
            }
        }
    }
    let mut assignment = vec![0; r];
    let mut mask = full - 1;
    for j in (0..r).rev() {
        let k = choice[mask];
        assignment[j] = k;
        mask &= !(1 << k);
    }
    assignment
}

/// Least-squares affine sequence `a + b·k` through `y`. With `nonneg`, the
/// fit is restricted to nonnegative sequences; since an affine sequence is
/// nonnegative iff both endpoints are, the optimum is found by enumerating
/// which endpoints are pinned at zero.
pub fn affine_fit_oracle(y: &[f64], nonneg: bool) -> Vec<f64> {
    let m = y.len();
    if m == 0 {
        return Vec::new();
    }
    if m == 1 {
        return vec![if nonneg { y[0].max(0.0) } else { y[0] }];
    }
    let mf = m as f64;
    let kbar = (mf - 1.0) / 2.0;
    let ybar = y.iter().sum::<f64>() / mf;
    let sxx: f64 = (0..m).map(|k| (k as f64 - kbar).powi(2)).sum();
    let sxy: f64 = y.iter().enumerate().map(|(k, v)| (k as f64 - kbar) * (v - ybar)).sum();
    let slope = sxy / sxx;
    let free: Vec<f64> = (0..m).map(|k| ybar + slope * (k as f64 - kbar)).collect();
    if !nonneg || (free[0] >= 0.0 && free[m - 1] >= 0.0) {
        return free;
    }
    // line through zero at one end: x_k = b·u_k with u_k ≥ 0 on the sequence
    let pinned = |u: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let uu: f64 = (0..m).map(|k| u(k) * u(k)).sum();
        let uy: f64 = (0..m).map(|k| u(k) * y[k]).sum();
        let b = (uy / uu).max(0.0);
        (0..m).map(|k| b * u(k)).collect()
    };
    let first = pinned(&|k| k as f64);
    let last = pinned(&|k| (m - 1 - k) as f64);
    let sse = |x: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    // b clamped at 0 covers the both-pinned case
    if sse(&first) <= sse(&last) {
        first
    } else {
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;

    #[test]
    fn noiseless_rank_one_is_exactly_rank_one() {
        let gt = generate(&SynthSpec {
            rank: 1,
            subjects: 3,
            num_rows: 20,
            row_len: 8,
            ..SynthSpec::default()
        })
        .unwrap();
        let f = gt.basis.function(0);
        for y in gt.observed.series() {
            for k in 0..y.num_observed() {
                let row = y.row(k);
                let c = dot(row, f);
                for (a, b) in row.iter().zip(f) {
                    assert!((a - c * b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn missing_fraction_is_respected() {
        let gt = generate(&SynthSpec {
            subjects: 1,
            num_rows: 1000,
            row_len: 6,
            rank: 2,
            missing_fraction: 0.5,
            seed: 9,
            ..SynthSpec::default()
        })
        .unwrap();
        // binomial(1000, 0.5) has sd ≈ 15.8; 0.05 is about three sd
        let frac = gt.observed.series()[0].observed_fraction();
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn basis_supports_are_separated() {
        let gt = generate(&SynthSpec {
            rank: 4,
            row_len: 20,
            ..SynthSpec::default()
        })
        .unwrap();
        let g = gt.basis.gram();
        for j in 0..4 {
            for k in 0..4 {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((g[j * 4 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infeasible_specs() {
        let s = SynthSpec {
            rank: 4,
            row_len: 10,
            ..SynthSpec::default()
        };
        assert_eq!(generate(&s).unwrap_err().code(), "infeasible-spec");
        assert!(generate(&SynthSpec { overlap: true, ..s }).is_ok());
    }

    #[test]
    fn deterministic_per_seed() {
        let s = SynthSpec {
            noise_std: 0.05,
            missing_fraction: 0.3,
            seed: 4,
            ..SynthSpec::default()
        };
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn truth_and_permuted_truth_have_zero_error() {
        let gt = generate(&SynthSpec {
            missing_fraction: 0.2,
            seed: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let m = gt.model(0.0);
        let rec = recovery_error(&m, &gt).unwrap();
        assert_eq!(rec.assignment, vec![0, 1, 2]);
        assert!(rec.max_basis_err() < 1e-12 && rec.max_coeff_err() < 1e-12);

        let perm = [2, 0, 1];
        let basis = BasisSet::new(perm.iter().map(|&j| gt.basis.function(j).to_vec()).collect()).unwrap();
        let coeffs = m
            .coeffs
            .iter()
            .map(|c| {
                let traj: Vec<Vec<f64>> = perm.iter().map(|&j| c.trajectory(j).iter().map(|v| 2.0 * v).collect()).collect();
                CoefficientSet::from_trajectories(c.subject_id(), c.days().to_vec(), &traj).unwrap()
            })
            .collect();
        let permuted = FactorModel { basis, coeffs, ..m };
        let rec = recovery_error(&permuted, &gt).unwrap();
        assert_eq!(rec.assignment, vec![1, 2, 0]);
        assert!(rec.max_basis_err() < 1e-12 && rec.max_coeff_err() < 1e-12);
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for r in 1..=5 {
            for _ in 0..20 {
                let score: Vec<f64> = (0..r * r).map(|_| rng.random::<f64>()).collect();
                let dp = best_assignment(r, &score);
                let total = |p: &[usize]| p.iter().enumerate().map(|(j, &k)| score[j * r + k]).sum::<f64>();
                let brute = (0..r)
                    .permutations(r)
                    .map(|p| total(&p))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((total(&dp) - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_oracle_cases() {
        let y = [0.5, 1.0, 1.5, 2.0];
        assert_eq!(affine_fit_oracle(&y, false), y.to_vec());
        for v in affine_fit_oracle(&[0.0, 1.0, 0.0], false) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(affine_fit_oracle(&y, true), affine_fit_oracle(&y, false));
    }

    #[test]
    fn nonnegative_affine_fit_beats_every_feasible_line() {
        let y = [3.0, 0.1, 0.0, 0.0, 0.0, 0.2];
        let x = affine_fit_oracle(&[5.0, 2.0, 0.0, 0.0, 0.0, 0.0], true);
        assert!(x.iter().all(|&v| v >= 0.0));
        let fit = affine_fit_oracle(&y, true);
        let sse = |x: &[f64]| x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = sse(&fit);
        for ia in 0..=60 {
            for ib in 0..=60 {
                // both endpoints on a grid over [0, 3]
                let (a, b) = (ia as f64 * 0.05, ib as f64 * 0.05);
                let line: Vec<f64> = (0..6).map(|k| a + (b - a) * k as f64 / 5.0).collect();
                assert!(sse(&line) >= best - 1e-12);
            }
        }
    }
}
