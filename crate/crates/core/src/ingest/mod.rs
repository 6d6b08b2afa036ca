//! Turning raw logs and sampled series into period-aligned matrices.

mod events;
mod filter;

pub use events::{
    day_of, rasterize_events, rasterize_sanitized, sanitize, Event, EventKind, EventLog,
    SanitizedLog, SleepInterval, MINUTES_PER_DAY,
};
pub use filter::{filter_implausible_days, filter_sparse_subjects, FilterRules, RunEvidence};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::series::{Dataset, Grid, SeriesMatrix};

/// Reshapes 1-based `(index, value)` samples into rows of `row_len`.
///
/// Sample `(t - 1) * row_len + i` lands in row `t`, column `i`. A row is
/// observed only if all of its samples are present; partially present rows
/// are dropped.
pub fn reshape_series(
    subject_id: &str,
    samples: &[(usize, f64)],
    row_len: usize,
) -> Result<SeriesMatrix> {
    if row_len < 2 {
        return Err(Error::InvalidPeriod(row_len));
    }
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut rows: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for &(index, value) in samples {
        if index == 0 {
            return Err(Error::InvalidSampleIndex(index));
        }
        let day = (index - 1) / row_len + 1;
        let slot = &mut rows.entry(day).or_insert_with(|| vec![None; row_len])[(index - 1) % row_len];
        if slot.replace(value).is_some() {
            return Err(Error::InvalidSampleIndex(index));
        }
    }
    let num_rows = *rows.keys().next_back().expect("samples is nonempty");
    let mut observed = Vec::new();
    let mut values = Vec::new();
    for (day, row) in rows {
        if row.iter().all(Option::is_some) {
            observed.push(day);
            values.extend(row.into_iter().flatten());
        }
    }
    if observed.is_empty() {
        return Err(Error::EmptySeries);
    }
    SeriesMatrix::new(subject_id, num_rows, row_len, observed, values)
}

/// Outcome of running a cohort of event logs through the whole pipeline.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub dataset: Dataset,
    /// Subjects whose log produced no usable day, with the reason.
    pub skipped: Vec<(String, String)>,
    /// Subjects dropped by the sparse-subject rule.
    pub sparse: Vec<String>,
}

/// Sanitize, rasterize and filter every log, then drop sparse subjects.
pub fn ingest_logs(
    logs: &[EventLog],
    sample_minutes: u32,
    rules: &FilterRules,
) -> Result<IngestReport> {
    rules.validate()?;
    let mut series = Vec::new();
    let mut skipped = Vec::new();
    for log in logs {
        let clean = sanitize(log)?;
        let m = match rasterize_sanitized(&clean, sample_minutes) {
            Ok(m) => m,
            Err(Error::EmptySeries) => {
                skipped.push((log.subject_id.clone(), "no valid sleep interval".into()));
                continue;
            }
            Err(e) => return Err(e),
        };
        match filter_implausible_days(&m, rules, RunEvidence::Intervals(&clean.intervals)) {
            Some(m) => series.push(m),
            None => skipped.push((log.subject_id.clone(), "every day implausible".into())),
        }
    }
    let all = Dataset::new(series)?.with_grid(Grid {
        period_minutes: MINUTES_PER_DAY,
        sample_minutes: sample_minutes as f64,
    });
    let dataset = filter_sparse_subjects(&all, rules);
    let sparse = all
        .series()
        .iter()
        .filter(|s| dataset.get(s.subject_id()).is_none())
        .map(|s| s.subject_id().to_string())
        .collect();
    Ok(IngestReport {
        dataset,
        skipped,
        sparse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::series::DayRows;

    #[test]
    fn contiguous_samples_fill_rows() {
        let samples: Vec<(usize, f64)> = (1..=6).map(|i| (i, i as f64 / 10.0)).collect();
        let m = reshape_series("a", &samples, 3).unwrap();
        assert_eq!(m.num_rows(), 2);
        assert_eq!(m.observed(), &[1, 2]);
        assert_eq!(m.row(0), &[0.1, 0.2, 0.3]);
        assert_eq!(m.row(1), &[0.4, 0.5, 0.6]);
    }

    #[test]
    fn gap_becomes_missing_row() {
        let samples: Vec<(usize, f64)> = (1..=3).chain(7..=9).map(|i| (i, 0.5)).collect();
        let m = reshape_series("a", &samples, 3).unwrap();
        assert_eq!(m.num_rows(), 3);
        assert_eq!(m.observed(), &[1, 3]);
        assert!(m.day(2).is_none());
    }

    #[test]
    fn partial_row_is_missing() {
        let samples = [(1, 0.1), (2, 0.2), (3, 0.3), (4, 0.4)];
        let m = reshape_series("a", &samples, 3).unwrap();
        assert_eq!(m.observed(), &[1]);
        assert_eq!(m.num_rows(), 2);
    }

    #[test]
    fn errors() {
        assert_eq!(reshape_series("a", &[(1, 0.0)], 1).unwrap_err().code(), "invalid-period");
        assert_eq!(reshape_series("a", &[], 3).unwrap_err().code(), "empty-series");
        assert_eq!(
            reshape_series("a", &[(0, 0.0)], 3).unwrap_err().code(),
            "invalid-sample-index"
        );
    }

    #[test]
    fn two_year_diary_shape() {
        let samples: Vec<(usize, f64)> = (1..=730 * 144).map(|i| (i, 0.0)).collect();
        let m = reshape_series("a", &samples, 144).unwrap();
        assert_eq!(m.num_rows(), 730);
        assert_eq!(m.row_len(), 144);
    }

    proptest! {
        #[test]
        fn flatten_inverts_reshape(
            rows in proptest::collection::btree_map(1usize..40, proptest::collection::vec(0.0f64..=1.0, 5), 1..15)
        ) {
            let samples: Vec<(usize, f64)> = rows
                .iter()
                .flat_map(|(&day, v)| v.iter().enumerate().map(move |(i, &x)| ((day - 1) * 5 + i + 1, x)))
                .collect();
            let m = reshape_series("a", &samples, 5).unwrap();
            prop_assert_eq!(m.flatten(), samples);
            prop_assert_eq!(m.num_rows(), *rows.keys().next_back().unwrap());
        }
    }
}
