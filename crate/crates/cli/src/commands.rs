use std::fmt::Write as _;
use std::path::Path;

use tslr_core::analytics::{
    detect_outliers, kmeans, run_forecast, trend_stats, ClusterSpace, ForecastTask, Method,
};
use tslr_core::io::{
    format_exact, format_value, parse_key_values, read_dataset, read_events, read_matrix, read_model,
    read_text, write_atomic, write_dataset, write_model, write_table,
};
use tslr_core::ingest::ingest_logs;
use tslr_core::solver::{fit, singular_spectrum};
use tslr_core::synth::{generate, PlantedGroups, SynthSpec};
use tslr_core::{DayRows, FactorModel};

use crate::config::{parse_components, parse_lambda, RunConfig};
use crate::manifest::{manifest_path, Manifest};
use crate::render::pgm;
use crate::{Cli, CliError, Command};

const RULE_KEYS: [&str; 6] = [
    "max_sleep_hours",
    "max_awake_hours",
    "night_start_hour",
    "night_end_hour",
    "isolation_gap_days",
    "max_missing_fraction",
];

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Ingest {
            events,
            sample_minutes,
            rules,
            out,
        } => {
            if let Some(path) = rules {
                for (k, v) in parse_key_values(&read_text(path)?, path)? {
                    if !RULE_KEYS.contains(&k.as_str()) {
                        return Err(CliError::Usage(format!("unknown rules key {k:?}")));
                    }
                    cfg.set(&k, &v)?;
                }
            }
            if let Some(s) = sample_minutes {
                cfg.sample_minutes = *s;
            }
            cfg.validate()?;
            let logs = read_events(events)?;
            let report = ingest_logs(&logs, cfg.sample_minutes, &cfg.rules)?;
            write_dataset(out, &report.dataset)?;
            let mut removed = String::new();
            for (id, reason) in &report.skipped {
                writeln!(removed, "{id}: {reason}").expect("string write");
            }
            for id in &report.sparse {
                writeln!(removed, "{id}: too few observed days").expect("string write");
            }
            write_atomic(&out.join("removed.txt"), removed.as_bytes())?;
            finish("ingest", &cfg, out, true, &[events.as_path()], &[], || {
                format!(
                    "ingested {} subjects from {} logs ({} removed)",
                    report.dataset.len(),
                    logs.len(),
                    report.skipped.len() + report.sparse.len()
                )
            })
        }
        Command::Fit { data, rank, lambda, out } => {
            if let Some(r) = rank {
                cfg.set("rank", &r.to_string())?;
            }
            if let Some(l) = lambda {
                cfg.lambda = parse_lambda(l)?;
            }
            let d = read_dataset(data)?;
            let m = fit(&d, cfg.rank, cfg.lambda, &cfg.fit_options())?;
            write_model(out, &m)?;
            finish("fit", &cfg, out, true, &[data.as_path()], &[], || {
                format!(
                    "fitted rank {} on {} subjects: {} iterations, objective {}, converged={}",
                    m.rank(),
                    d.len(),
                    m.iterations(),
                    format_exact(m.final_objective().unwrap_or(f64::NAN)),
                    m.converged
                )
            })
        }
        Command::Svd { data, k, out } => {
            let d = read_dataset(data)?;
            let s = singular_spectrum(&d, *k)?;
            let mut text = String::from("index,singular_value\n");
            for (i, v) in s.iter().enumerate() {
                writeln!(text, "{},{}", i + 1, format_exact(*v)).expect("string write");
            }
            match out {
                Some(out) => {
                    write_atomic(out, text.as_bytes())?;
                    finish("svd", &cfg, out, false, &[data.as_path()], &[("k", k.to_string())], || {
                        format!("wrote {} singular values", s.len())
                    })
                }
                None => {
                    print_stdout(&text);
                    Ok(())
                }
            }
        }
        Command::Trends { model, out } => {
            let m = read_model(model)?;
            let t = trend_stats(&m);
            let mut text = String::from("component,day");
            for p in &t.levels {
                write!(text, ",p{p}").expect("string write");
            }
            text.push('\n');
            for (j, table) in t.components.iter().enumerate() {
                for (k, day) in table.days().iter().enumerate() {
                    write!(text, "{},{day}", j + 1).expect("string write");
                    for v in table.row(k) {
                        write!(text, ",{}", format_value(*v)).expect("string write");
                    }
                    text.push('\n');
                }
            }
            write_atomic(out, text.as_bytes())?;
            finish("trends", &cfg, out, false, &[model.as_path()], &[], || {
                format!("trend percentiles for {} components over {} subjects", m.rank(), m.coeffs.len())
            })
        }
        Command::Outliers {
            model,
            component,
            percentile,
            out,
        } => {
            if let Some(p) = percentile {
                cfg.set("outlier_percentile", &p.to_string())?;
            }
            if *component == 0 {
                return Err(CliError::Usage("components are numbered from 1".into()));
            }
            let m = read_model(model)?;
            let rep = detect_outliers(&m, component - 1, cfg.outlier_percentile)?;
            let mut text = String::from("subject_id,distance,outlier\n");
            for (id, d) in &rep.distances {
                let flag = u8::from(rep.flagged.contains(id));
                writeln!(text, "{id},{},{flag}", format_exact(*d)).expect("string write");
            }
            write_atomic(out, text.as_bytes())?;
            let params = [("component", component.to_string())];
            finish("outliers", &cfg, out, false, &[model.as_path()], &params, || {
                format!(
                    "{} of {} subjects beyond the p{} distance {}",
                    rep.flagged.len(),
                    rep.distances.len(),
                    rep.percentile,
                    format_exact(rep.threshold)
                )
            })
        }
        Command::Cluster {
            model,
            data,
            k,
            components,
            restarts,
            out,
        } => {
            if let Some(k) = k {
                cfg.set("k", &k.to_string())?;
            }
            if let Some(c) = components {
                cfg.components = parse_components(c)?;
            }
            if let Some(r) = restarts {
                cfg.set("restarts", &r.to_string())?;
            }
            let opts = cfg.kmeans_options();
            let (a, input) = match (model, data) {
                (Some(model), None) => {
                    let m: FactorModel = read_model(model)?;
                    let comps: Vec<usize> = cfg.components.iter().map(|c| c - 1).collect();
                    let space = ClusterSpace::Coefficients {
                        model: &m,
                        components: &comps,
                    };
                    (kmeans(space, &opts)?, model)
                }
                (None, Some(data)) => {
                    let d = read_dataset(data)?;
                    (kmeans(ClusterSpace::Raw(&d), &opts)?, data)
                }
                _ => return Err(CliError::Usage("give exactly one of --model and --data".into())),
            };
            let mut text = String::from("subject_id,cluster\n");
            for (id, l) in a.subject_ids.iter().zip(&a.labels) {
                writeln!(text, "{id},{}", l + 1).expect("string write");
            }
            write_atomic(out, text.as_bytes())?;
            let space = if model.is_some() { "coefficients" } else { "raw" };
            finish("cluster", &cfg, out, false, &[input.as_path()], &[("space", space.into())], || {
                format!(
                    "k={} sizes {:?}, cost {}, {} iterations, converged={}",
                    a.k,
                    a.sizes(),
                    format_exact(a.cost),
                    a.iterations,
                    a.converged
                )
            })
        }
        Command::Forecast {
            model,
            train,
            test,
            past,
            future,
            out,
        } => {
            let mut task = ForecastTask::new(parse_window(past)?, parse_window(future)?)?;
            task.min_observed_fraction = cfg.min_observed_fraction;
            let m = read_model(model)?;
            let train_d = read_dataset(train)?;
            let test_d = read_dataset(test)?;
            let opts = cfg.forecast_options(m.lambda);
            let rep = run_forecast(&m.basis, &train_d, &test_d, &task, &opts)?;

            let mut summary = String::from("method,mean,std,subjects\n");
            for s in &rep.summaries {
                writeln!(
                    summary,
                    "{},{},{},{}",
                    s.method.name(),
                    format_exact(s.mean),
                    format_exact(s.std),
                    s.errors.len()
                )
                .expect("string write");
            }
            write_atomic(&out.join("summary.csv"), summary.as_bytes())?;

            let mut errors = String::from("subject_id");
            for m in Method::ALL {
                write!(errors, ",{}", m.name()).expect("string write");
            }
            errors.push('\n');
            for (i, id) in rep.test_ids.iter().enumerate() {
                errors.push_str(id);
                for s in &rep.summaries {
                    write!(errors, ",{}", format_exact(s.errors[i])).expect("string write");
                }
                errors.push('\n');
            }
            write_atomic(&out.join("errors.csv"), errors.as_bytes())?;

            for f in &rep.forecasts {
                let dir = out.join("predictions");
                let tables = [
                    (Method::Mean, &f.mean),
                    (Method::KrRaw, &f.kr_raw),
                    (Method::KrNmfTs, &f.kr_nmf),
                    (Method::RankTruth, &f.rank_truth),
                ];
                for (m, t) in tables {
                    write_table(&dir.join(m.name()).join(format!("{}.csv", f.subject_id)), "c", t)?;
                }
                write_table(&dir.join("kr_nmf_ts_coeffs").join(format!("{}.csv", f.subject_id)), "C", &f.kr_nmf_coeffs)?;
            }

            let info = format!(
                "sigma_nmf={}\nsigma_raw={}\ntrain_subjects={}\ntest_subjects={}\nskipped={}\nfallback_subjects={}\n",
                format_exact(rep.sigma_nmf),
                format_exact(rep.sigma_raw),
                rep.train_ids.len(),
                rep.test_ids.len(),
                rep.skipped.join(","),
                rep.forecasts.iter().filter(|f| f.fallback).count()
            );
            write_atomic(&out.join("forecast.txt"), info.as_bytes())?;

            let params = [("past", past.clone()), ("future", future.clone())];
            let inputs = [model.as_path(), train.as_path(), test.as_path()];
            finish("forecast", &cfg, out, true, &inputs, &params, || {
                let parts: Vec<String> = rep
                    .summaries
                    .iter()
                    .map(|s| format!("{} {}", s.method.name(), format_value(s.mean)))
                    .collect();
                format!("{} test subjects: {}", rep.test_ids.len(), parts.join(", "))
            })
        }
        Command::Synth { spec, out } => {
            let mut s = SynthSpec {
                seed: cfg.seed,
                ..SynthSpec::default()
            };
            if let Some(path) = spec {
                apply_synth_spec(&mut s, &read_text(path)?, path)?;
            }
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let gt = generate(&s)?;
            write_dataset(out, &gt.observed)?;
            let truth = FactorModel {
                basis: gt.basis.clone(),
                coeffs: gt.coeffs.clone(),
                lambda: 0.0,
                objective_trace: Vec::new(),
                converged: true,
            };
            write_model(&out.join("truth"), &truth)?;
            if let Some(labels) = &gt.labels {
                let mut text = String::from("subject_id,group\n");
                for (y, l) in gt.observed.series().iter().zip(labels) {
                    writeln!(text, "{},{}", y.subject_id(), l + 1).expect("string write");
                }
                write_atomic(&out.join("truth").join("labels.csv"), text.as_bytes())?;
            }
            let inputs: Vec<&Path> = spec.iter().map(|p| p.as_path()).collect();
            let params = synth_params(&s);
            finish("synth", &cfg, out, true, &inputs, &params, || {
                format!(
                    "generated {} subjects, {} days of {} samples, rank {}",
                    s.subjects, s.num_rows, s.row_len, s.rank
                )
            })
        }
        Command::Render { matrix, rows, out } => {
            let id = matrix.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
            let mut y = read_matrix(matrix, id, None)?;
            if let Some(r) = rows {
                y = y.with_num_rows(*r)?;
            }
            write_atomic(out, &pgm(&y))?;
            let params = [("rows", y.num_rows().to_string())];
            finish("render", &cfg, out, false, &[matrix.as_path()], &params, || {
                format!("rendered {} x {} graymap", y.row_len(), y.num_rows())
            })
        }
    }
}

/// Writes the manifest, then prints the summary and the resolved config.
#[allow(clippy::too_many_arguments)]
fn finish(
    command: &str,
    cfg: &RunConfig,
    out: &Path,
    out_is_dir: bool,
    inputs: &[&Path],
    params: &[(&str, String)],
    summary: impl FnOnce() -> String,
) -> Result<(), CliError> {
    let mut m = Manifest::new(command);
    for p in inputs {
        m.input(p)?;
    }
    for (k, v) in params {
        m.param(k, v);
    }
    m.config(cfg);
    m.write(&manifest_path(out, out_is_dir))?;
    let mut text = format!("{}\nresolved config:\n", summary());
    for (k, v) in cfg.entries() {
        writeln!(text, "  {k}={v}").expect("string write");
    }
    print_stdout(&text);
    Ok(())
}

/// A closed stdout (say, piped into `head`) is not an error worth dying for.
fn print_stdout(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

/// `start:end`, half-open.
fn parse_window(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("window must look like start:end, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn apply_synth_spec(s: &mut SynthSpec, text: &str, path: &Path) -> Result<(), CliError> {
    let mut component = None;
    let mut groups = None;
    for (k, v) in parse_key_values(text, path)? {
        let bad = || CliError::Usage(format!("invalid value {v:?} for {k} in {}", path.display()));
        match k.as_str() {
            "subjects" => s.subjects = v.parse().map_err(|_| bad())?,
            "days" => s.num_rows = v.parse().map_err(|_| bad())?,
            "row_len" => s.row_len = v.parse().map_err(|_| bad())?,
            "rank" => s.rank = v.parse().map_err(|_| bad())?,
            "noise_std" => s.noise_std = v.parse().map_err(|_| bad())?,
            "missing_fraction" => s.missing_fraction = v.parse().map_err(|_| bad())?,
            "seed" => s.seed = v.parse().map_err(|_| bad())?,
            "overlap" => s.overlap = v.parse().map_err(|_| bad())?,
            "planted_component" => {
                let c: usize = v.parse().map_err(|_| bad())?;
                if c == 0 {
                    return Err(bad());
                }
                component = Some(c - 1);
            }
            "planted_groups" => groups = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => return Err(CliError::Usage(format!("unknown synth key {k:?} in {}", path.display()))),
        }
    }
    s.groups = match (component, groups) {
        (None, None) => None,
        (c, g) => Some(PlantedGroups {
            component: c.unwrap_or(1),
            count: g.unwrap_or(2),
        }),
    };
    Ok(())
}

fn synth_params(s: &SynthSpec) -> Vec<(&'static str, String)> {
    let mut p = vec![
        ("subjects", s.subjects.to_string()),
        ("days", s.num_rows.to_string()),
        ("row_len", s.row_len.to_string()),
        ("rank", s.rank.to_string()),
        ("noise_std", format_exact(s.noise_std)),
        ("missing_fraction", format_exact(s.missing_fraction)),
        ("seed", s.seed.to_string()),
        ("overlap", s.overlap.to_string()),
    ];
    if let Some(g) = s.groups {
        p.push(("planted_component", (g.component + 1).to_string()));
        p.push(("planted_groups", g.count.to_string()));
    }
    p
}
