//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process exits non-zero if any check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tslr_core::analytics::{
    adjusted_rand_index, kmeans, masked_distance, run_forecast, ClusterSpace, ForecastOptions, ForecastTask,
    KMeansOptions, Method,
};
use tslr_core::ingest::{ingest_logs, Event, EventKind, EventLog, FilterRules};
use tslr_core::solver::{
    fit, nnls_solve, second_difference_energy, update_coefficients, FitOptions, ObjectiveTerms,
};
use tslr_core::synth::{affine_fit_oracle, generate, recovery_error, PlantedGroups, SynthSpec};
use tslr_core::{io, Dataset, DayRows, DayTable};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noisy_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        subjects: 20,
        num_rows: 200,
        row_len: 48,
        rank: 3,
        noise_std: 0.05,
        missing_fraction: 0.3,
        seed,
        ..SynthSpec::default()
    }
}

/// Solves the strictly convex problem by trying every support: the unique
/// point with `x_S = Q_SS⁻¹ b_S ≥ 0` and a nonnegative gradient off `S`.
fn nnls_by_enumeration(q: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let d = b.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << d) {
        let support: Vec<usize> = (0..d).filter(|&i| mask & (1 << i) != 0).collect();
        let mut x = vec![0.0; d];
        if !support.is_empty() {
            let qs = DMatrix::from_fn(support.len(), support.len(), |i, j| q[(support[i], support[j])]);
            let bs = DVector::from_iterator(support.len(), support.iter().map(|&i| b[i]));
            let Some(xs) = qs.cholesky().map(|c| c.solve(&bs)) else { continue };
            if xs.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (k, &i) in support.iter().enumerate() {
                x[i] = xs[k];
            }
        }
        let xv = DVector::from_column_slice(&x);
        let value = 0.5 * xv.dot(&(q * &xv)) - b.dot(&xv);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, x));
        }
    }
    best.expect("the empty support is always feasible").1
}

fn nnls_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=3);
        let a = DMatrix::from_fn(d + 2, d, |_, _| rng.random_range(-1.0..1.0));
        let q = a.transpose() * &a + DMatrix::identity(d, d) * 0.05;
        let b = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let got = nnls_solve(&q, &b).map_err(|e| e.to_string())?;
        let want = nnls_by_enumeration(&q, &b);
        for (g, w) in got.x.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-8 && elapsed < Duration::from_secs(5),
        format!("1000 instances, max coordinate error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn monotone_descent() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = f64::NEG_INFINITY;
    for seed in 0..20 {
        let gt = generate(&noisy_spec(seed)).map_err(|e| e.to_string())?;
        let m = fit(&gt.observed, 3, 1e5, &FitOptions { seed, ..FitOptions::default() }).map_err(|e| e.to_string())?;
        for w in m.objective_trace.windows(2) {
            worst = worst.max((w[1] - w[0]) / w[0]);
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-10 && elapsed < Duration::from_secs(120),
        format!("20 datasets, largest relative increase {worst:.2e}, {elapsed:.2?}"),
    )
}

fn exact_recovery() -> Outcome {
    let gt = generate(&SynthSpec { seed: 1, ..SynthSpec::default() }).map_err(|e| e.to_string())?;
    let opts = FitOptions {
        rel_tol: 1e-12,
        max_outer: 200,
        ..FitOptions::default()
    };
    let m = fit(&gt.observed, 3, 0.0, &opts).map_err(|e| e.to_string())?;
    let energy: f64 = gt.observed.stacked_rows().flatten().map(|v| v * v).sum();
    let rel = (m.final_objective().unwrap_or(f64::INFINITY) / energy).sqrt();
    let rec = recovery_error(&m, &gt).map_err(|e| e.to_string())?;
    check(
        rel < 1e-6 && rec.max_basis_err() < 1e-3 && m.iterations() <= 200,
        format!(
            "relative error {rel:.2e}, basis errors {:?}, {} iterations",
            rec.basis_err.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>(),
            m.iterations()
        ),
    )
}

fn smoothing_tradeoff() -> Outcome {
    let gt = generate(&noisy_spec(5)).map_err(|e| e.to_string())?;
    let mut terms = Vec::new();
    for lambda in [0.0, 10.0, 1e3, 1e5, 1e6] {
        let coeffs = gt
            .observed
            .series()
            .iter()
            .map(|y| update_coefficients(y, &gt.basis, lambda))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        terms.push(ObjectiveTerms::evaluate(&gt.observed, &gt.basis, &coeffs).map_err(|e| e.to_string())?);
    }
    let slack = |x: f64| 1e-9 * x.abs().max(1.0);
    let ok = terms.windows(2).all(|w| {
        w[1].smoothness <= w[0].smoothness + slack(w[0].smoothness) && w[1].fit >= w[0].fit - slack(w[0].fit)
    });
    let detail = terms
        .iter()
        .map(|t| format!("({:.4}, {:.3e})", t.fit, t.smoothness))
        .collect::<Vec<_>>()
        .join(" ");
    check(ok, format!("(fit, smoothness) by lambda: {detail}"))
}

fn affine_limit() -> Outcome {
    let spec = SynthSpec {
        subjects: 5,
        noise_std: 0.05,
        seed: 3,
        ..SynthSpec::default()
    };
    let gt = generate(&spec).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for y in gt.observed.series() {
        let c = update_coefficients(y, &gt.basis, 1e12).map_err(|e| e.to_string())?;
        for j in 0..gt.basis.rank() {
            let f = gt.basis.function(j);
            let proj: Vec<f64> = (0..y.num_observed())
                .map(|k| y.row(k).iter().zip(f).map(|(a, b)| a * b).sum())
                .collect();
            let want = affine_fit_oracle(&proj, true);
            let got = c.trajectory(j);
            let err: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = want.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
            if second_difference_energy(&got) > 1e-6 * norm * norm {
                return Err(format!("component {j} of {} is not affine", y.subject_id()));
            }
        }
    }
    check(worst < 1e-3, format!("largest relative deviation {worst:.2e}"))
}

fn random_table(rng: &mut ChaCha8Rng, forced_day: usize) -> DayTable {
    let mut days: Vec<usize> = (1..=60).filter(|_| rng.random_bool(0.4)).collect();
    if !days.contains(&forced_day) {
        days.push(forced_day);
        days.sort_unstable();
    }
    let values = (0..days.len() * 4).map(|_| rng.random_range(0.0..1.0)).collect();
    DayTable::new(days, 4, values).expect("valid table")
}

/// Every day `d` becomes days `2d − 1` and `2d` with the same row.
fn doubled(t: &DayTable) -> DayTable {
    let mut days = Vec::new();
    let mut values = Vec::new();
    for (k, &d) in t.days().iter().enumerate() {
        for nd in [2 * d - 1, 2 * d] {
            days.push(nd);
            values.extend_from_slice(t.row(k));
        }
    }
    DayTable::new(days, t.width(), values).expect("valid table")
}

/// `b` with its rows on the days it shares with `a` replaced by `a`'s rows.
fn agree_on_common(a: &DayTable, b: &DayTable) -> DayTable {
    let mut values = b.values().to_vec();
    for (k, d) in b.days().iter().enumerate() {
        if let Ok(i) = a.days().binary_search(d) {
            values[k * 4..(k + 1) * 4].copy_from_slice(a.row(i));
        }
    }
    DayTable::new(b.days().to_vec(), 4, values).expect("valid table")
}

fn distance_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let day = rng.random_range(1..=60);
        let a = random_table(&mut rng, day);
        let b = random_table(&mut rng, day);
        let cols: &[usize] = &[0, 2];
        for sel in [None, Some(cols)] {
            let d = |x: &DayTable, y: &DayTable| masked_distance(x, y, sel).map_err(|e| e.to_string());
            let ab = d(&a, &b)?;
            worst = worst.max((ab - d(&b, &a)?).abs());
            worst = worst.max(d(&a, &a)?);
            worst = worst.max(d(&a, &agree_on_common(&a, &b))?);
            worst = worst.max((ab - d(&doubled(&a), &doubled(&b))?).abs());
            if ab <= 0.0 {
                return Err("distinct random rows at distance zero".into());
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("1000 pairs, largest violation {worst:.2e}"),
    )
}

fn planted_clusters() -> Outcome {
    let mut aris = Vec::new();
    for seed in 0..10 {
        let spec = SynthSpec {
            subjects: 40,
            groups: Some(PlantedGroups { component: 1, count: 2 }),
            ..noisy_spec(seed)
        };
        let gt = generate(&spec).map_err(|e| e.to_string())?;
        let m = fit(&gt.observed, 3, 1e3, &FitOptions { seed, ..FitOptions::default() }).map_err(|e| e.to_string())?;
        let matched = recovery_error(&m, &gt).map_err(|e| e.to_string())?.assignment[1];
        let a = kmeans(
            ClusterSpace::Coefficients { model: &m, components: &[matched] },
            &KMeansOptions::new(2, seed),
        )
        .map_err(|e| e.to_string())?;
        aris.push(adjusted_rand_index(&a.labels, gt.labels.as_ref().expect("planted labels")));
    }
    check(
        aris.iter().all(|&x| x == 1.0),
        format!("ARI per seed {aris:?}"),
    )
}

fn forecast_ordering() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let spec = SynthSpec { subjects: 125, ..noisy_spec(seed) };
        let gt = generate(&spec).map_err(|e| e.to_string())?;
        let series = gt.observed.series();
        let train = Dataset::new(series[..100].to_vec()).map_err(|e| e.to_string())?;
        let test = Dataset::new(series[100..].to_vec()).map_err(|e| e.to_string())?;
        let m = fit(&train, 3, 1e3, &FitOptions { seed, ..FitOptions::default() }).map_err(|e| e.to_string())?;
        let task = ForecastTask::new((1, 101), (101, 201)).map_err(|e| e.to_string())?;
        let report = run_forecast(&m.basis, &train, &test, &task, &ForecastOptions::default()).map_err(|e| e.to_string())?;
        let mae = |method| report.summary(method).mean;
        let (truth, kr, mean) = (mae(Method::RankTruth), mae(Method::KrNmfTs), mae(Method::Mean));
        ok &= truth <= kr && kr <= mean + 0.005 && !report.test_ids.is_empty();
        lines.push(format!(
            "seed {seed}: rank_truth {truth:.4} kr_nmf_ts {kr:.4} mean {mean:.4} ({} scored)",
            report.test_ids.len()
        ));
    }
    check(ok, lines.join("; "))
}

const NIGHT: f64 = 22.0 * 60.0;
const DAY: f64 = 1440.0;

fn log(id: &str, intervals: &[(f64, f64)]) -> EventLog {
    let events = intervals
        .iter()
        .flat_map(|&(s, e)| {
            [
                Event { timestamp: s, kind: EventKind::SleepStart },
                Event { timestamp: e, kind: EventKind::SleepEnd },
            ]
        })
        .collect();
    EventLog { subject_id: id.into(), events }
}

/// 22:00 to 06:00 starting on each of the given days.
fn nights(days: impl IntoIterator<Item = usize>) -> Vec<(f64, f64)> {
    days.into_iter()
        .map(|d| {
            let s = (d - 1) as f64 * DAY + NIGHT;
            (s, s + 8.0 * 60.0)
        })
        .collect()
}

fn at(day: usize, hour: f64) -> f64 {
    (day - 1) as f64 * DAY + hour * 60.0
}

fn preprocessing_rules() -> Outcome {
    let mut a = nights(1..=4);
    // 17 hours asleep from day 5 22:00: days 5 and 6
    a.push((at(5, 22.0), at(6, 15.0)));
    a.extend(nights(6..=8));
    // no sleep between 21:00 and 07:00 on day 10, only a nap
    a.push((at(9, 19.0), at(9, 23.5)));
    a.push((at(10, 11.0), at(10, 14.0)));
    a.push((at(11, 0.5), at(11, 7.0)));
    a.extend(nights(11..=15));
    // awake from day 16 06:00 to day 17 03:00: days 16 and 17
    a.push((at(17, 3.0), at(17, 6.0)));
    a.extend(nights(17..=25));
    // day 32 has five empty days on both sides
    a.push((at(32, 1.0), at(32, 6.0)));
    a.extend(nights(38..=45));

    // 8 of 100 days observed
    let sparse: Vec<_> = nights((1..=3).chain(97..=99));
    // 11 of 100 days observed, just above the threshold
    let borderline: Vec<_> = nights((1..=3).chain(94..=99));

    let logs = [log("a", &a), log("borderline", &borderline), log("sparse", &sparse)];
    let report = ingest_logs(&logs, 10, &FilterRules::default()).map_err(|e| e.to_string())?;

    let kept: Vec<&str> = report.dataset.series().iter().map(|s| s.subject_id()).collect();
    let removed_a: Vec<usize> = {
        let m = report.dataset.get("a").ok_or("subject a was dropped")?;
        let logged: Vec<usize> = (1..=26).chain([32]).chain(38..=46).collect();
        logged.into_iter().filter(|d| m.day(*d).is_none()).collect()
    };
    let b = report.dataset.get("borderline").map(|m| m.observed().len());
    let ok = kept == ["a", "borderline"]
        && report.sparse == ["sparse"]
        && report.skipped.is_empty()
        && removed_a == [5, 6, 10, 16, 17, 32]
        && b == Some(11);
    check(
        ok,
        format!("kept {kept:?}, sparse {:?}, removed days of a {removed_a:?}", report.sparse),
    )
}

fn files_below(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            for e in fs::read_dir(&p).expect("readable dir") {
                stack.push(e.expect("dir entry").path());
            }
        } else {
            let bytes = fs::read(&p).expect("readable file");
            out.push((p.strip_prefix(root).expect("below root").to_path_buf(), bytes));
        }
    }
    out.sort();
    out
}

fn deterministic_output() -> Outcome {
    let gt = generate(&noisy_spec(9)).map_err(|e| e.to_string())?;
    let opts = FitOptions { seed: 4, ..FitOptions::default() };
    let dirs = [tempfile::tempdir(), tempfile::tempdir()];
    let mut snapshots = Vec::new();
    for dir in &dirs {
        let dir = dir.as_ref().map_err(|e| e.to_string())?;
        let m = fit(&gt.observed, 3, 1e5, &opts).map_err(|e| e.to_string())?;
        io::write_model(dir.path(), &m).map_err(|e| e.to_string())?;
        snapshots.push(files_below(dir.path()));
    }
    check(
        snapshots[0] == snapshots[1] && !snapshots[0].is_empty(),
        format!("{} files compared", snapshots[0].len()),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("nnls-exact", nnls_exact),
        ("monotone-descent", monotone_descent),
        ("exact-recovery", exact_recovery),
        ("smoothing-tradeoff", smoothing_tradeoff),
        ("affine-limit", affine_limit),
        ("masked-distance", distance_properties),
        ("planted-clusters", planted_clusters),
        ("forecast-ordering", forecast_ordering),
        ("preprocessing-rules", preprocessing_rules),
        ("deterministic-output", deterministic_output),
    ];
    let mut failed = 0;
    for (i, (name, run)) in checks.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
