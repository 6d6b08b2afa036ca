//! Plausibility filters for days and subjects.

use crate::error::{Error, Result};
use crate::ingest::events::{SleepInterval, MINUTES_PER_DAY};
use crate::series::{Dataset, DayRows, SeriesMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRules {
    pub max_sleep_hours: f64,
    pub max_awake_hours: f64,
    /// Clock hours `[start, end)`; wraps past midnight when `start > end`.
    pub night_start_hour: f64,
    pub night_end_hour: f64,
    /// A day is isolated when at least this many consecutive days are
    /// missing immediately before *and* after it.
    pub isolation_gap_days: usize,
    pub max_missing_fraction: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            max_sleep_hours: 16.0,
            max_awake_hours: 20.0,
            night_start_hour: 21.0,
            night_end_hour: 7.0,
            isolation_gap_days: 5,
            max_missing_fraction: 0.9,
        }
    }
}

impl FilterRules {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_sleep_hours", self.max_sleep_hours),
            ("max_awake_hours", self.max_awake_hours),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        for (name, h) in [
            ("night_start_hour", self.night_start_hour),
            ("night_end_hour", self.night_end_hour),
        ] {
            if !(0.0..24.0).contains(&h) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 24)")));
            }
        }
        if self.night_start_hour == self.night_end_hour {
            return Err(Error::InvalidArgument("night window is empty".into()));
        }
        if self.isolation_gap_days == 0 {
            return Err(Error::InvalidArgument(
                "isolation_gap_days must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.max_missing_fraction) {
            return Err(Error::InvalidArgument(
                "max_missing_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Night window as minute ranges within one day.
    fn night_ranges(&self) -> Vec<(f64, f64)> {
        let s = self.night_start_hour * 60.0;
        let e = self.night_end_hour * 60.0;
        if s < e {
            vec![(s, e)]
        } else {
            vec![(0.0, e), (s, MINUTES_PER_DAY)]
        }
    }
}

/// Where sleep and awake run lengths are measured from.
#[derive(Debug, Clone, Copy)]
pub enum RunEvidence<'a> {
    /// Sanitized interval list of the subject (preferred).
    Intervals(&'a [SleepInterval]),
    /// Reconstruct runs from the grid: a sample counts as asleep when its
    /// value is at least one half. Samples are `sample_minutes` long.
    Grid { sample_minutes: f64 },
}

/// Removes implausible days from the observed set. Returns `None` if no day
/// survives. Periods are taken to be calendar days.
pub fn filter_implausible_days(
    m: &SeriesMatrix,
    rules: &FilterRules,
    evidence: RunEvidence<'_>,
) -> Option<SeriesMatrix> {
    let grid_runs;
    let intervals = match evidence {
        RunEvidence::Intervals(iv) => iv,
        RunEvidence::Grid { sample_minutes } => {
            grid_runs = intervals_from_grid(m, sample_minutes);
            &grid_runs[..]
        }
    };

    let mut bad = vec![false; m.num_rows() + 2];
    let mut mark_span = |lo: f64, hi: f64| {
        let first = (lo / MINUTES_PER_DAY).floor() as usize + 1;
        // half-open: a run ending exactly at midnight does not touch the next day
        let last = (hi / MINUTES_PER_DAY).ceil().max(1.0) as usize;
        for day in first..=last.min(bad.len() - 1) {
            bad[day] = true;
        }
    };

    let max_sleep = rules.max_sleep_hours * 60.0;
    for iv in intervals.iter().filter(|iv| iv.duration() > max_sleep) {
        mark_span(iv.start, iv.end);
    }
    let max_awake = rules.max_awake_hours * 60.0;
    // A gap running through an unobserved day is missing data, not
    // wakefulness.
    let spans_gap = |lo: f64, hi: f64| {
        let first = (lo / MINUTES_PER_DAY).floor() as usize + 1;
        let last = (hi / MINUTES_PER_DAY).ceil().max(1.0) as usize;
        (first..=last).any(|d| m.day(d).is_none())
    };
    for pair in intervals.windows(2) {
        let (lo, hi) = (pair[0].end, pair[1].start);
        if hi - lo > max_awake && !spans_gap(lo, hi) {
            mark_span(lo, hi);
        }
    }

    let night = rules.night_ranges();
    for &day in m.observed() {
        let base = (day - 1) as f64 * MINUTES_PER_DAY;
        let asleep: f64 = night
            .iter()
            .map(|&(lo, hi)| {
                intervals
                    .iter()
                    .map(|iv| iv.overlap(base + lo, base + hi))
                    .sum::<f64>()
            })
            .sum();
        if asleep <= 0.0 {
            bad[day] = true;
        }
    }

    let mut kept: Vec<usize> = m
        .observed()
        .iter()
        .copied()
        .filter(|&d| !bad[d])
        .collect();
    drop_isolated(&mut kept, rules.isolation_gap_days);
    if kept.is_empty() {
        return None;
    }
    m.retain_days(|d| kept.binary_search(&d).is_ok())
}

/// Repeatedly removes days with at least `gap` missing days on both sides
/// until none remain. Days before the first and after the last row count as
/// missing.
fn drop_isolated(days: &mut Vec<usize>, gap: usize) {
    loop {
        let isolated: Vec<bool> = (0..days.len())
            .map(|k| {
                let before = k
                    .checked_sub(1)
                    .map_or(usize::MAX, |p| days[k] - days[p] - 1);
                let after = days
                    .get(k + 1)
                    .map_or(usize::MAX, |&n| n - days[k] - 1);
                before >= gap && after >= gap
            })
            .collect();
        if !isolated.contains(&true) {
            return;
        }
        let mut flags = isolated.into_iter();
        days.retain(|_| !flags.next().unwrap());
    }
}

fn intervals_from_grid(m: &SeriesMatrix, sample_minutes: f64) -> Vec<SleepInterval> {
    let row_len = m.row_len();
    let mut out: Vec<SleepInterval> = Vec::new();
    for (k, &day) in m.observed().iter().enumerate() {
        for (i, &v) in m.row(k).iter().enumerate() {
            if v < 0.5 {
                continue;
            }
            let start = ((day - 1) * row_len + i) as f64 * sample_minutes;
            let end = start + sample_minutes;
            match out.last_mut() {
                Some(last) if last.end == start => last.end = end,
                _ => out.push(SleepInterval { start, end }),
            }
        }
    }
    out
}

/// Drops subjects whose observed fraction `|T| / num_rows` is below
/// `1 - max_missing_fraction`. Order is preserved.
pub fn filter_sparse_subjects(d: &Dataset, rules: &FilterRules) -> Dataset {
    let min_fraction = 1.0 - rules.max_missing_fraction;
    let kept = d
        .series()
        .iter()
        .filter(|s| s.observed_fraction() >= min_fraction)
        .cloned()
        .collect();
    let out = Dataset::new(kept).expect("subset of a valid dataset is valid");
    match d.grid() {
        Some(g) => out.with_grid(g),
        None => out,
    }
}
