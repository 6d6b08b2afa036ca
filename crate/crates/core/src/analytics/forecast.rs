//! Forecasting a future window from a past window with Nadaraya–Watson
//! kernel regression, plus the mean and raw-data baselines.
//!
//! Windows are half-open day ranges `[start, end)`.

use rayon::prelude::*;

use crate::analytics::distance::masked_distance;
use crate::analytics::kmeans::mean_table;
use crate::error::{Error, Result};
use crate::series::{Dataset, DayRows, DayTable, SeriesMatrix};
use crate::solver::{reconstruct, update_coefficients, BasisSet, CoefficientSet};

pub const DEFAULT_MIN_OBSERVED_FRACTION: f64 = 0.7;

/// Past and future windows of a forecasting experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastTask {
    pub past: (usize, usize),
    pub future: (usize, usize),
    /// A subject takes part only if at least this fraction of the days in
    /// both windows together is observed.
    pub min_observed_fraction: f64,
}

impl ForecastTask {
    pub fn new(past: (usize, usize), future: (usize, usize)) -> Result<Self> {
        let task = Self {
            past,
            future,
            min_observed_fraction: DEFAULT_MIN_OBSERVED_FRACTION,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let (p0, p1) = self.past;
        let (f0, f1) = self.future;
        if p0 == 0 || p0 >= p1 || f0 >= f1 || p1 > f0 {
            return Err(Error::InvalidArgument(format!(
                "windows [{p0}, {p1}) and [{f0}, {f1}) must be nonempty, start at day 1 or later, and be ordered"
            )));
        }
        if !(self.min_observed_fraction > 0.0 && self.min_observed_fraction <= 1.0) {
            return Err(Error::InvalidArgument(
                "min_observed_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn span(&self) -> usize {
        (self.past.1 - self.past.0) + (self.future.1 - self.future.0)
    }

    /// Enough observed days overall and at least one in each window.
    pub fn eligible(&self, y: &SeriesMatrix) -> bool {
        let past = y.observed_in(self.past.0, self.past.1);
        let future = y.observed_in(self.future.0, self.future.1);
        past > 0
            && future > 0
            && (past + future) as f64 >= self.min_observed_fraction * self.span() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// Mean absolute error per entry.
    #[default]
    Mae,
    /// Root mean squared error per entry.
    Rmse,
}

/// Error of `pred` against the observed rows of `truth` inside `window`.
/// Truth days missing from `pred` are skipped. Predictions are compared as
/// they are, without clipping.
pub fn evaluate_forecast<P: DayRows + ?Sized>(
    pred: &P,
    truth: &SeriesMatrix,
    window: (usize, usize),
    metric: Metric,
) -> Result<f64> {
    if pred.width() != truth.row_len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction rows have {} entries, truth {}",
            pred.width(),
            truth.row_len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, &day) in truth.observed().iter().enumerate() {
        if day < window.0 || day >= window.1 {
            continue;
        }
        let Some(p) = pred.position(day) else {
            continue;
        };
        for (a, b) in pred.row(p).iter().zip(truth.row(k)) {
            let e = a - b;
            sum += match metric {
                Metric::Mae => e.abs(),
                Metric::Rmse => e * e,
            };
        }
        count += truth.row_len();
    }
    if count == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mean = sum / count as f64;
    Ok(match metric {
        Metric::Mae => mean,
        Metric::Rmse => mean.sqrt(),
    })
}

/// Coefficients of `y` restricted to `window`, for a fixed basis.
pub fn fit_coefficients_fixed_basis(
    y: &SeriesMatrix,
    window: (usize, usize),
    basis: &BasisSet,
    lambda: f64,
) -> Result<CoefficientSet> {
    let w = y.window(window.0, window.1).ok_or(Error::EmptySeries)?;
    update_coefficients(&w, basis, lambda)
}

/// A kernel-regression forecast: one row per future day.
#[derive(Debug, Clone, PartialEq)]
pub struct KrPrediction {
    pub table: DayTable,
    /// Some day had all kernel weights underflow; it got the plain mean of
    /// the training subjects observed that day.
    pub fallback: bool,
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// One weight vector applied to a set of output columns.
struct Group<'a> {
    weights: Vec<f64>,
    columns: &'a [usize],
}

/// Weighted per-day average of the training futures. On every day only the
/// training subjects observed that day contribute.
fn nadaraya_watson<F: DayRows + ?Sized>(futures: &[&F], groups: &[Group<'_>], width: usize) -> KrPrediction {
    let mut days: Vec<usize> = futures.iter().flat_map(|f| f.days().iter().copied()).collect();
    days.sort_unstable();
    days.dedup();
    let mut values = vec![0.0; days.len() * width];
    let mut fallback = false;
    let mut observers: Vec<(usize, usize)> = Vec::with_capacity(futures.len());
    for (k, &day) in days.iter().enumerate() {
        observers.clear();
        observers.extend(
            futures
                .iter()
                .enumerate()
                .filter_map(|(n, f)| f.position(day).map(|p| (n, p))),
        );
        let out = &mut values[k * width..(k + 1) * width];
        for g in groups {
            let den: f64 = observers.iter().map(|&(n, _)| g.weights[n]).sum();
            let (den, weighted) = if den > 0.0 && den.is_finite() {
                (den, true)
            } else {
                fallback = true;
                (observers.len() as f64, false)
            };
            for &c in g.columns {
                let num: f64 = observers
                    .iter()
                    .map(|&(n, p)| {
                        let w = if weighted { g.weights[n] } else { 1.0 };
                        w * futures[n].row(p)[c]
                    })
                    .sum();
                out[c] = num / den;
            }
        }
    }
    KrPrediction {
        table: DayTable::new(days, width, values).expect("sorted unique days"),
        fallback,
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn optional_distance<A: DayRows + ?Sized, B: DayRows + ?Sized>(
    a: &A,
    b: &B,
    columns: Option<&[usize]>,
) -> Result<Option<f64>> {
    match masked_distance(a, b, columns) {
        Ok(d) => Ok(Some(d)),
        Err(Error::NoOverlap) => Ok(None),
        Err(e) => Err(e),
    }
}

fn weights(dists: &[Option<f64>], sigma: f64) -> Vec<f64> {
    dists.iter().map(|d| d.map_or(0.0, |d| gaussian(d, sigma))).collect()
}

/// Forecasts future coefficients component by component: component `i` is
/// a kernel-weighted average of the training futures, with weights from the
/// masked distance between past trajectories on component `i` only.
pub fn kr_forecast(
    train: &[(CoefficientSet, CoefficientSet)],
    test_past: &CoefficientSet,
    sigma: f64,
) -> Result<KrPrediction> {
    check_sigma(sigma)?;
    let r = test_past.rank();
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.iter().any(|(p, f)| p.rank() != r || f.rank() != r) {
        return Err(Error::ShapeMismatch("training and test ranks differ".into()));
    }
    let columns: Vec<[usize; 1]> = (0..r).map(|i| [i]).collect();
    let mut groups = Vec::with_capacity(r);
    let mut any = false;
    for cols in &columns {
        let d = train
            .iter()
            .map(|(p, _)| optional_distance(p, test_past, Some(cols)))
            .collect::<Result<Vec<_>>>()?;
        any |= d.iter().any(Option::is_some);
        groups.push(Group {
            weights: weights(&d, sigma),
            columns: cols,
        });
    }
    if !any {
        return Err(Error::NoOverlap);
    }
    let futures: Vec<&CoefficientSet> = train.iter().map(|(_, f)| f).collect();
    Ok(nadaraya_watson(&futures, &groups, r))
}

/// Kernel regression on the raw rows: one weight per training subject from
/// the masked distance between past windows over all samples.
pub fn kr_raw(train: &[(SeriesMatrix, SeriesMatrix)], test_past: &SeriesMatrix, sigma: f64) -> Result<KrPrediction> {
    check_sigma(sigma)?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = train
        .iter()
        .map(|(p, _)| optional_distance(p, test_past, None))
        .collect::<Result<Vec<_>>>()?;
    if d.iter().all(Option::is_none) {
        return Err(Error::NoOverlap);
    }
    let l = test_past.row_len();
    let all: Vec<usize> = (0..l).collect();
    let futures: Vec<&SeriesMatrix> = train.iter().map(|(_, f)| f).collect();
    Ok(nadaraya_watson(
        &futures,
        &[Group {
            weights: weights(&d, sigma),
            columns: &all,
        }],
        l,
    ))
}

/// Per (day, sample) mean over the training subjects observed that day.
pub fn mean_baseline<F: DayRows>(train_futures: &[F]) -> Result<DayTable> {
    let width = train_futures.first().ok_or(Error::EmptyDataset)?.width();
    Ok(mean_table(train_futures.iter(), width))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOptions {
    /// Smoothing weight used when computing coefficients on each window.
    pub lambda: f64,
    pub metric: Metric,
    pub folds: usize,
    pub grid_points: usize,
    /// Fixed bandwidths; cross-validated when `None`.
    pub sigma_nmf: Option<f64>,
    pub sigma_raw: Option<f64>,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            lambda: 1e5,
            metric: Metric::Mae,
            folds: 5,
            grid_points: 10,
            sigma_nmf: None,
            sigma_raw: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Per-day mean of the training futures.
    Mean,
    /// Kernel regression on raw rows.
    KrRaw,
    /// Kernel regression on coefficients, reconstructed with the basis.
    KrNmfTs,
    /// Best reconstruction of the true future with the trained basis.
    RankTruth,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mean, Method::KrRaw, Method::KrNmfTs, Method::RankTruth];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mean => "mean",
            Method::KrRaw => "kr_raw",
            Method::KrNmfTs => "kr_nmf_ts",
            Method::RankTruth => "rank_truth",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean over test subjects of the per-subject error.
    pub mean: f64,
    /// Sample standard deviation of the per-subject errors.
    pub std: f64,
    /// Per-subject errors, aligned with [`ForecastReport::test_ids`].
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectForecast {
    pub subject_id: String,
    pub mean: DayTable,
    pub kr_raw: DayTable,
    pub kr_nmf_coeffs: DayTable,
    pub kr_nmf: DayTable,
    pub rank_truth: DayTable,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub task: ForecastTask,
    pub metric: Metric,
    pub sigma_nmf: f64,
    pub sigma_raw: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Test subjects that were not eligible or had nothing to compare.
    pub skipped: Vec<String>,
    pub summaries: Vec<MethodSummary>,
    pub forecasts: Vec<SubjectForecast>,
}

impl ForecastReport {
    pub fn summary(&self, method: Method) -> &MethodSummary {
        self.summaries
            .iter()
            .find(|s| s.method == method)
            .expect("every method is summarized")
    }
}

/// Windows of one subject, raw and as coefficients.
struct Prepared {
    id: String,
    past_raw: SeriesMatrix,
    future_raw: SeriesMatrix,
    past_coef: CoefficientSet,
    future_coef: CoefficientSet,
}

fn prepare(d: &Dataset, task: &ForecastTask, basis: &BasisSet, lambda: f64) -> Result<(Vec<Prepared>, Vec<String>)> {
    let (eligible, skipped): (Vec<&SeriesMatrix>, Vec<&SeriesMatrix>) =
        d.series().iter().partition(|y| task.eligible(y));
    let prepared = eligible
        .par_iter()
        .map(|y| {
            let past_raw = y.window(task.past.0, task.past.1).expect("eligible");
            let future_raw = y.window(task.future.0, task.future.1).expect("eligible");
            Ok(Prepared {
                id: y.subject_id().to_string(),
                past_coef: update_coefficients(&past_raw, basis, lambda)?,
                future_coef: update_coefficients(&future_raw, basis, lambda)?,
                past_raw,
                future_raw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((prepared, skipped.iter().map(|y| y.subject_id().to_string()).collect()))
}

/// Pairwise distances between training pasts, one `n × n` matrix per group
/// of columns.
fn pairwise<P: DayRows + Sync>(pasts: &[&P], groups: &[Option<Vec<usize>>]) -> Result<Vec<Vec<Option<f64>>>> {
    let n = pasts.len();
    groups
        .iter()
        .map(|cols| {
            let rows = (0..n)
                .into_par_iter()
                .map(|a| {
                    (0..n)
                        .map(|b| optional_distance(pasts[a], pasts[b], cols.as_deref()))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(rows.concat())
        })
        .collect()
}

fn sigma_grid(dist: &[Vec<Option<f64>>], n: usize, points: usize) -> Vec<f64> {
    let mut all: Vec<f64> = Vec::new();
    for m in dist {
        for a in 0..n {
            for b in a + 1..n {
                if let Some(d) = m[a * n + b] {
                    all.push(d);
                }
            }
        }
    }
    let median = if all.is_empty() {
        0.0
    } else {
        crate::analytics::stats::percentile(&all, 50.0)
    };
    let base = if median > 0.0 { median } else { 1.0 };
    if points <= 1 {
        return vec![base];
    }
    (0..points)
        .map(|g| base * 10f64.powf(-1.0 + 2.0 * g as f64 / (points - 1) as f64))
        .collect()
}

/// Chooses the bandwidth with the lowest mean validation MAE over a
/// `folds`-fold split of the training subjects (subject `i` in fold
/// `i mod folds`). `predict(train, val, σ)` returns the raw-scale forecast
/// for validation subject `val` from the training indices `train`.
fn cross_validate(
    n: usize,
    grid: &[f64],
    folds: usize,
    futures: &[&SeriesMatrix],
    future_window: (usize, usize),
    predict: impl Fn(&[usize], usize, f64) -> Result<Option<DayTable>> + Sync,
) -> Result<f64> {
    let folds = folds.clamp(1, n.max(1));
    if n < 2 || folds < 2 {
        return Ok(grid[grid.len() / 2]);
    }
    let scores = grid
        .par_iter()
        .map(|&sigma| {
            let mut total = 0.0;
            let mut count = 0usize;
            for f in 0..folds {
                let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
                for val in (0..n).filter(|i| i % folds == f) {
                    let Some(pred) = predict(&train, val, sigma)? else {
                        continue;
                    };
                    match evaluate_forecast(&pred, futures[val], future_window, Metric::Mae) {
                        Ok(e) => {
                            total += e;
                            count += 1;
                        }
                        Err(Error::NoGroundTruth) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok(if count > 0 { total / count as f64 } else { f64::INFINITY })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(grid[best])
}

/// Runs all four forecasters on the test cohort and scores them on the
/// future window. `basis` should come from a model fitted on `train`.
pub fn run_forecast(
    basis: &BasisSet,
    train: &Dataset,
    test: &Dataset,
    task: &ForecastTask,
    opts: &ForecastOptions,
) -> Result<ForecastReport> {
    task.validate()?;
    let (tr, _) = prepare(train, task, basis, opts.lambda)?;
    if tr.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (te, mut skipped) = prepare(test, task, basis, opts.lambda)?;
    let n = tr.len();
    let r = basis.rank();

    let tr_future_raw: Vec<&SeriesMatrix> = tr.iter().map(|p| &p.future_raw).collect();
    let tr_future_coef: Vec<&CoefficientSet> = tr.iter().map(|p| &p.future_coef).collect();

    // coefficient kernel regression: one distance matrix per component
    let sigma_nmf = match opts.sigma_nmf {
        Some(s) => s,
        None => {
            let pasts: Vec<&CoefficientSet> = tr.iter().map(|p| &p.past_coef).collect();
            let groups: Vec<Option<Vec<usize>>> = (0..r).map(|i| Some(vec![i])).collect();
            let dist = pairwise(&pasts, &groups)?;
            let grid = sigma_grid(&dist, n, opts.grid_points);
            let cols: Vec<[usize; 1]> = (0..r).map(|i| [i]).collect();
            cross_validate(n, &grid, opts.folds, &tr_future_raw, task.future, |idx, val, sigma| {
                let futures: Vec<&CoefficientSet> = idx.iter().map(|&i| tr_future_coef[i]).collect();
                let groups: Vec<Group<'_>> = cols
                    .iter()
                    .enumerate()
                    .map(|(c, col)| Group {
                        weights: weights(&idx.iter().map(|&i| dist[c][val * n + i]).collect::<Vec<_>>(), sigma),
                        columns: col,
                    })
                    .collect();
                let pred = nadaraya_watson(&futures, &groups, r);
                Ok(Some(reconstruct(basis, &pred.table)))
            })?
        }
    };
    check_sigma(sigma_nmf)?;

    let sigma_raw = match opts.sigma_raw {
        Some(s) => s,
        None => {
            let pasts: Vec<&SeriesMatrix> = tr.iter().map(|p| &p.past_raw).collect();
            let dist = pairwise(&pasts, &[None])?;
            let grid = sigma_grid(&dist, n, opts.grid_points);
            let l = basis.len();
            let all: Vec<usize> = (0..l).collect();
            cross_validate(n, &grid, opts.folds, &tr_future_raw, task.future, |idx, val, sigma| {
                let futures: Vec<&SeriesMatrix> = idx.iter().map(|&i| tr_future_raw[i]).collect();
                let d: Vec<Option<f64>> = idx.iter().map(|&i| dist[0][val * n + i]).collect();
                let group = Group {
                    weights: weights(&d, sigma),
                    columns: &all,
                };
                Ok(Some(nadaraya_watson(&futures, &[group], l).table))
            })?
        }
    };
    check_sigma(sigma_raw)?;

    let mean = mean_baseline(&tr.iter().map(|p| p.future_raw.clone()).collect::<Vec<_>>())?;
    let coef_pairs: Vec<(CoefficientSet, CoefficientSet)> =
        tr.iter().map(|p| (p.past_coef.clone(), p.future_coef.clone())).collect();
    let raw_pairs: Vec<(SeriesMatrix, SeriesMatrix)> =
        tr.iter().map(|p| (p.past_raw.clone(), p.future_raw.clone())).collect();

    let results = te
        .par_iter()
        .map(|p| {
            let kr = match kr_forecast(&coef_pairs, &p.past_coef, sigma_nmf) {
                Ok(k) => k,
                Err(Error::NoOverlap) => return Ok(None),
                Err(e) => return Err(e),
            };
            let raw = match kr_raw(&raw_pairs, &p.past_raw, sigma_raw) {
                Ok(k) => k,
                Err(Error::NoOverlap) => return Ok(None),
                Err(e) => return Err(e),
            };
            let f = SubjectForecast {
                subject_id: p.id.clone(),
                mean: mean.clone(),
                kr_raw: raw.table,
                kr_nmf: reconstruct(basis, &kr.table),
                kr_nmf_coeffs: kr.table,
                rank_truth: reconstruct(basis, &p.future_coef),
                fallback: kr.fallback || raw.fallback,
            };
            let mut errs = [0.0; 4];
            for (e, table) in errs.iter_mut().zip([&f.mean, &f.kr_raw, &f.kr_nmf, &f.rank_truth]) {
                match evaluate_forecast(table, &p.future_raw, task.future, opts.metric) {
                    Ok(v) => *e = v,
                    Err(Error::NoGroundTruth) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some((f, errs)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut forecasts = Vec::new();
    let mut errors: Vec<[f64; 4]> = Vec::new();
    for (p, res) in te.iter().zip(results) {
        match res {
            Some((f, e)) => {
                forecasts.push(f);
                errors.push(e);
            }
            None => skipped.push(p.id.clone()),
        }
    }
    if forecasts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let summaries = Method::ALL
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let e: Vec<f64> = errors.iter().map(|row| row[m]).collect();
            let (mean, std) = mean_std(&e);
            MethodSummary {
                method,
                mean,
                std,
                errors: e,
            }
        })
        .collect();
    Ok(ForecastReport {
        task: *task,
        metric: opts.metric,
        sigma_nmf,
        sigma_raw,
        train_ids: tr.iter().map(|p| p.id.clone()).collect(),
        test_ids: forecasts.iter().map(|f| f.subject_id.clone()).collect(),
        skipped,
        summaries,
        forecasts,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
