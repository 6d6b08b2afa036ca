//! Run configuration: `key=value` settings with built-in defaults, an
//! optional config file on top, and command-line flags on top of that.

use std::path::Path;

use tslr_core::analytics::{ForecastOptions, KMeansOptions, Metric, DEFAULT_OUTLIER_PERCENTILE};
use tslr_core::ingest::FilterRules;
use tslr_core::io::{parse_key_values, read_text};
use tslr_core::solver::{BasisStep, FitOptions, SubproblemOptions};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rank: usize,
    pub lambda: f64,
    pub seed: u64,
    pub sample_minutes: u32,
    pub rules: FilterRules,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub init_iterations: usize,
    pub basis_step: BasisStep,
    pub subproblem: SubproblemOptions,
    /// 1-based components used for clustering.
    pub components: Vec<usize>,
    pub k: usize,
    pub restarts: usize,
    pub kmeans_max_iter: usize,
    pub outlier_percentile: f64,
    pub metric: Metric,
    pub cv_folds: usize,
    pub sigma_grid_points: usize,
    pub min_observed_fraction: f64,
    pub sigma_nmf: Option<f64>,
    pub sigma_raw: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        let forecast = ForecastOptions::default();
        Self {
            rank: 5,
            lambda: 1e5,
            seed: 0,
            sample_minutes: 10,
            rules: FilterRules::default(),
            max_outer: fit.max_outer,
            rel_tol: fit.rel_tol,
            init_iterations: fit.init_iterations,
            basis_step: fit.basis_step,
            subproblem: fit.subproblem,
            components: vec![1, 2, 3],
            k: 2,
            restarts: KMeansOptions::new(2, 0).restarts,
            kmeans_max_iter: KMeansOptions::new(2, 0).max_iter,
            outlier_percentile: DEFAULT_OUTLIER_PERCENTILE,
            metric: forecast.metric,
            cv_folds: forecast.folds,
            sigma_grid_points: forecast.grid_points,
            min_observed_fraction: tslr_core::analytics::forecast::DEFAULT_MIN_OBSERVED_FRACTION,
            sigma_nmf: None,
            sigma_raw: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn positive(key: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{key} must be positive")))
    }
}

fn nonzero(key: &str, v: usize) -> Result<usize, CliError> {
    if v > 0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{key} must be at least 1")))
    }
}

fn sigma(key: &str, v: &str) -> Result<Option<f64>, CliError> {
    if v == "auto" {
        Ok(None)
    } else {
        positive(key, parse(key, v)?).map(Some)
    }
}

pub fn parse_components(v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',')
        .map(|s| {
            let j: usize = parse("components", s.trim())?;
            nonzero("components", j)
        })
        .collect()
}

pub fn parse_lambda(v: &str) -> Result<f64, CliError> {
    let l: f64 = parse("lambda", v)?;
    if l.is_finite() && l >= 0.0 {
        Ok(l)
    } else {
        Err(CliError::Usage("lambda must be finite and nonnegative".into()))
    }
}

impl RunConfig {
    /// Defaults overlaid with the file, if any.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut c = Self::default();
        if let Some(p) = path {
            for (k, v) in parse_key_values(&read_text(p)?, p)? {
                c.set(&k, &v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "rank" => self.rank = nonzero(key, parse(key, v)?)?,
            "lambda" => self.lambda = parse_lambda(v)?,
            "seed" => self.seed = parse(key, v)?,
            "sample_minutes" => self.sample_minutes = parse(key, v)?,
            "max_sleep_hours" => self.rules.max_sleep_hours = parse(key, v)?,
            "max_awake_hours" => self.rules.max_awake_hours = parse(key, v)?,
            "night_start_hour" => self.rules.night_start_hour = parse(key, v)?,
            "night_end_hour" => self.rules.night_end_hour = parse(key, v)?,
            "isolation_gap_days" => self.rules.isolation_gap_days = parse(key, v)?,
            "max_missing_fraction" => self.rules.max_missing_fraction = parse(key, v)?,
            "max_outer" => self.max_outer = nonzero(key, parse(key, v)?)?,
            "rel_tol" => self.rel_tol = positive(key, parse(key, v)?)?,
            "init_iterations" => self.init_iterations = parse(key, v)?,
            "basis_step" => {
                self.basis_step = match v {
                    "rescaling" => BasisStep::Rescaling,
                    "normalize" => BasisStep::NormalizeOnly,
                    _ => return Err(CliError::Usage(format!("basis_step must be rescaling or normalize, got {v:?}"))),
                }
            }
            "kkt_tol" => self.subproblem.tol = positive(key, parse(key, v)?)?,
            "size_cap" => self.subproblem.size_cap = nonzero(key, parse(key, v)?)?,
            "pg_max_iter" => self.subproblem.pg_max_iter = nonzero(key, parse(key, v)?)?,
            "components" => self.components = parse_components(v)?,
            "k" => self.k = nonzero(key, parse(key, v)?)?,
            "restarts" => self.restarts = nonzero(key, parse(key, v)?)?,
            "kmeans_max_iter" => self.kmeans_max_iter = nonzero(key, parse(key, v)?)?,
            "outlier_percentile" => {
                let p: f64 = parse(key, v)?;
                if !(p > 0.0 && p < 100.0) {
                    return Err(CliError::Usage("outlier_percentile must lie in (0, 100)".into()));
                }
                self.outlier_percentile = p;
            }
            "metric" => {
                self.metric = match v {
                    "mae" => Metric::Mae,
                    "rmse" => Metric::Rmse,
                    _ => return Err(CliError::Usage(format!("metric must be mae or rmse, got {v:?}"))),
                }
            }
            "cv_folds" => self.cv_folds = nonzero(key, parse(key, v)?)?,
            "sigma_grid_points" => self.sigma_grid_points = nonzero(key, parse(key, v)?)?,
            "min_observed_fraction" => {
                let f: f64 = parse(key, v)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(CliError::Usage("min_observed_fraction must lie in (0, 1]".into()));
                }
                self.min_observed_fraction = f;
            }
            "sigma_nmf" => self.sigma_nmf = sigma(key, v)?,
            "sigma_raw" => self.sigma_raw = sigma(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Checks the settings that depend on each other; call once everything
    /// is applied.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.sample_minutes == 0 {
            return Err(CliError::Usage("sample_minutes must be at least 1".into()));
        }
        self.rules.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Every setting as `key=value`, in a fixed order. Reading these lines
    /// back with [`RunConfig::set`] reproduces the configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| v.to_string();
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), f);
        let r = &self.rules;
        vec![
            ("rank", self.rank.to_string()),
            ("lambda", f(self.lambda)),
            ("seed", self.seed.to_string()),
            ("sample_minutes", self.sample_minutes.to_string()),
            ("max_sleep_hours", f(r.max_sleep_hours)),
            ("max_awake_hours", f(r.max_awake_hours)),
            ("night_start_hour", f(r.night_start_hour)),
            ("night_end_hour", f(r.night_end_hour)),
            ("isolation_gap_days", r.isolation_gap_days.to_string()),
            ("max_missing_fraction", f(r.max_missing_fraction)),
            ("max_outer", self.max_outer.to_string()),
            ("rel_tol", f(self.rel_tol)),
            ("init_iterations", self.init_iterations.to_string()),
            (
                "basis_step",
                match self.basis_step {
                    BasisStep::Rescaling => "rescaling",
                    BasisStep::NormalizeOnly => "normalize",
                }
                .to_string(),
            ),
            ("kkt_tol", f(self.subproblem.tol)),
            ("size_cap", self.subproblem.size_cap.to_string()),
            ("pg_max_iter", self.subproblem.pg_max_iter.to_string()),
            (
                "components",
                self.components.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("k", self.k.to_string()),
            ("restarts", self.restarts.to_string()),
            ("kmeans_max_iter", self.kmeans_max_iter.to_string()),
            ("outlier_percentile", f(self.outlier_percentile)),
            (
                "metric",
                match self.metric {
                    Metric::Mae => "mae",
                    Metric::Rmse => "rmse",
                }
                .to_string(),
            ),
            ("cv_folds", self.cv_folds.to_string()),
            ("sigma_grid_points", self.sigma_grid_points.to_string()),
            ("min_observed_fraction", f(self.min_observed_fraction)),
            ("sigma_nmf", opt(self.sigma_nmf)),
            ("sigma_raw", opt(self.sigma_raw)),
        ]
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_outer: self.max_outer,
            rel_tol: self.rel_tol,
            seed: self.seed,
            basis_step: self.basis_step,
            init_iterations: self.init_iterations,
            subproblem: self.subproblem.clone(),
        }
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            k: self.k,
            seed: self.seed,
            restarts: self.restarts,
            max_iter: self.kmeans_max_iter,
        }
    }

    pub fn forecast_options(&self, lambda: f64) -> ForecastOptions {
        ForecastOptions {
            lambda,
            metric: self.metric,
            folds: self.cv_folds,
            grid_points: self.sigma_grid_points,
            sigma_nmf: self.sigma_nmf,
            sigma_raw: self.sigma_raw,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_roundtrip() {
        let mut c = RunConfig::default();
        c.set("lambda", "1e3").unwrap();
        c.set("components", "2").unwrap();
        c.set("sigma_raw", "0.5").unwrap();
        c.set("basis_step", "normalize").unwrap();
        let mut back = RunConfig::default();
        for (k, v) in c.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn defaults_echo() {
        let e = RunConfig::default().entries();
        assert!(e.contains(&("rank", "5".to_string())));
        assert!(e.contains(&("lambda", "100000".to_string())));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("rnak", "5"), Err(CliError::Usage(_))));
        assert!(c.set("rank", "0").is_err());
        assert!(c.set("lambda", "-1").is_err());
        assert!(c.set("metric", "mape").is_err());
        c.set("night_start_hour", "25").unwrap();
        assert!(c.validate().is_err());
        assert!(c.set("outlier_percentile", "100").is_err());
    }
}
