//! Sleep event logs: sanitization into disjoint intervals and rasterization
//! onto a day × sample grid.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::series::SeriesMatrix;

/// Minutes in one day; rows of a rasterized log are calendar days of age.
pub const MINUTES_PER_DAY: f64 = 1440.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SleepStart,
    SleepEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Minutes since the subject's epoch (midnight starting day 1).
    pub timestamp: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub subject_id: String,
    pub events: Vec<Event>,
}

/// Half-open sleep interval `[start, end)` in minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SleepInterval {
    pub start: f64,
    pub end: f64,
}

impl SleepInterval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Length of the intersection with `[lo, hi)`.
    pub fn overlap(&self, lo: f64, hi: f64) -> f64 {
        (self.end.min(hi) - self.start.max(lo)).max(0.0)
    }
}

/// A log reduced to disjoint, sorted sleep intervals plus the days on which
/// at least one retained event was reported.
#[derive(Debug, Clone, PartialEq)]
pub struct SanitizedLog {
    pub subject_id: String,
    pub intervals: Vec<SleepInterval>,
    pub event_days: BTreeSet<usize>,
}

/// 1-based day containing minute `t`.
pub fn day_of(t: f64) -> usize {
    (t / MINUTES_PER_DAY).floor() as usize + 1
}

/// Pairs starts with ends in time order. A start that is followed by another
/// start before any end is dropped, as is an end with no open start and a
/// trailing open start. Overlapping or touching intervals are merged.
pub fn sanitize(log: &EventLog) -> Result<SanitizedLog> {
    let malformed = |reason: String| Error::MalformedLog {
        subject: log.subject_id.clone(),
        reason,
    };
    if let Some(bad) = log
        .events
        .iter()
        .find(|e| !e.timestamp.is_finite() || e.timestamp < 0.0)
    {
        return Err(malformed(format!("invalid timestamp {}", bad.timestamp)));
    }

    let mut events = log.events.clone();
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let mut raw: Vec<SleepInterval> = Vec::new();
    let mut open: Option<f64> = None;
    for e in &events {
        match (e.kind, open) {
            (EventKind::SleepStart, _) => open = Some(e.timestamp),
            (EventKind::SleepEnd, Some(start)) => {
                if e.timestamp > start {
                    raw.push(SleepInterval {
                        start,
                        end: e.timestamp,
                    });
                }
                open = None;
            }
            (EventKind::SleepEnd, None) => {}
        }
    }

    let mut intervals: Vec<SleepInterval> = Vec::with_capacity(raw.len());
    for iv in raw {
        match intervals.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => intervals.push(iv),
        }
    }

    let event_days = intervals
        .iter()
        .flat_map(|iv| [day_of(iv.start), day_of(iv.end)])
        .collect();

    Ok(SanitizedLog {
        subject_id: log.subject_id.clone(),
        intervals,
        event_days,
    })
}

/// Sanitizes `log` and rasterizes it; see [`rasterize_sanitized`].
pub fn rasterize_events(log: &EventLog, sample_minutes: u32) -> Result<SeriesMatrix> {
    rasterize_sanitized(&sanitize(log)?, sample_minutes)
}

/// Entry `(t, i)` is the fraction of the `i`-th sample window of day `t`
/// covered by sleep. Days without any retained event are unobserved.
pub fn rasterize_sanitized(log: &SanitizedLog, sample_minutes: u32) -> Result<SeriesMatrix> {
    if sample_minutes == 0 || (MINUTES_PER_DAY as u32) % sample_minutes != 0 {
        return Err(Error::InvalidArgument(format!(
            "sample length {sample_minutes} min does not divide a day"
        )));
    }
    let row_len = (MINUTES_PER_DAY as u32 / sample_minutes) as usize;
    if row_len < 2 {
        return Err(Error::InvalidPeriod(row_len));
    }
    let Some(&last_day) = log.event_days.iter().next_back() else {
        return Err(Error::EmptySeries);
    };
    let sm = sample_minutes as f64;

    let mut rows: BTreeMap<usize, Vec<f64>> = log
        .event_days
        .iter()
        .map(|&d| (d, vec![0.0; row_len]))
        .collect();
    for iv in &log.intervals {
        let first = (iv.start / sm).floor() as usize;
        let last = (iv.end / sm).ceil() as usize;
        for s in first..last {
            let lo = s as f64 * sm;
            let covered = iv.overlap(lo, lo + sm);
            if covered <= 0.0 {
                continue;
            }
            let day = s / row_len + 1;
            if let Some(row) = rows.get_mut(&day) {
                row[s % row_len] += covered / sm;
            }
        }
    }

    let observed: Vec<usize> = rows.keys().copied().collect();
    let values: Vec<f64> = rows
        .into_values()
        .flatten()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    SeriesMatrix::new(log.subject_id.clone(), last_day, row_len, observed, values)
}
