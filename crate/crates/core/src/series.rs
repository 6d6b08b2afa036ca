//! Period-aligned series matrices and the day-indexed row abstraction shared
//! by raw data, coefficient trajectories and cluster centroids.
//!
//! Days (rows) are 1-based throughout, matching the period numbering of the
//! input: row 1 is the first period of the series.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// A table of rows keyed by strictly increasing 1-based day numbers.
///
/// Implemented by raw series matrices (row width = samples per period),
/// coefficient sets (row width = rank) and centroid tables.
pub trait DayRows {
    /// Sorted, strictly increasing observed days.
    fn days(&self) -> &[usize];
    fn width(&self) -> usize;
    /// Row for the `k`-th observed day (not the day number).
    fn row(&self, k: usize) -> &[f64];

    fn num_observed(&self) -> usize {
        self.days().len()
    }

    /// Position of `day` among the observed days, if present.
    fn position(&self, day: usize) -> Option<usize> {
        self.days().binary_search(&day).ok()
    }
}

/// Plain day-keyed table, used for centroids, medians and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTable {
    days: Vec<usize>,
    width: usize,
    values: Vec<f64>,
}

impl DayTable {
    pub fn new(days: Vec<usize>, width: usize, values: Vec<f64>) -> Result<Self> {
        check_days(&days)?;
        if values.len() != days.len() * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} days of width {}",
                values.len(),
                days.len(),
                width
            )));
        }
        Ok(Self {
            days,
            width,
            values,
        })
    }

    pub fn empty(width: usize) -> Self {
        Self {
            days: Vec::new(),
            width,
            values: Vec::new(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_parts(self) -> (Vec<usize>, usize, Vec<f64>) {
        (self.days, self.width, self.values)
    }
}

impl DayRows for DayTable {
    fn days(&self) -> &[usize] {
        &self.days
    }
    fn width(&self) -> usize {
        self.width
    }
    fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }
}

pub(crate) fn check_days(days: &[usize]) -> Result<()> {
    if days.first() == Some(&0) {
        return Err(Error::InvalidArgument("day numbers start at 1".into()));
    }
    if days.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "observed days must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// One subject's series reshaped into `num_rows` periods of `row_len` samples.
///
/// Only observed rows carry values; they are stored row-major in day order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    subject_id: String,
    num_rows: usize,
    row_len: usize,
    observed: Vec<usize>,
    values: Vec<f64>,
}

impl SeriesMatrix {
    /// Builds a matrix from observed rows. `values` holds `observed.len() * row_len`
    /// entries in row-major order; each must lie in [0, 1].
    pub fn new(
        subject_id: impl Into<String>,
        num_rows: usize,
        row_len: usize,
        observed: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_len < 2 {
            return Err(Error::InvalidPeriod(row_len));
        }
        if observed.is_empty() {
            return Err(Error::EmptySeries);
        }
        check_days(&observed)?;
        if let Some(&last) = observed.last() {
            if last > num_rows {
                return Err(Error::ShapeMismatch(format!(
                    "observed day {last} beyond {num_rows} rows"
                )));
            }
        }
        if values.len() != observed.len() * row_len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} observed rows of length {}",
                values.len(),
                observed.len(),
                row_len
            )));
        }
        for (idx, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let day = observed[idx / row_len];
                return Err(Error::ValueOutOfRange {
                    index: (day - 1) * row_len + idx % row_len + 1,
                    value: v,
                });
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            num_rows,
            row_len,
            observed,
            values,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed.len() as f64 / self.num_rows as f64
    }

    /// Returns the row for `day`, or `None` when that day is unobserved.
    pub fn day(&self, day: usize) -> Option<&[f64]> {
        self.position(day).map(|k| self.row(k))
    }

    /// Keeps only the observed days accepted by `keep`. Returns `None` when
    /// nothing survives (a matrix must have at least one observed row).
    pub fn retain_days(&self, mut keep: impl FnMut(usize) -> bool) -> Option<Self> {
        let mut observed = Vec::new();
        let mut values = Vec::new();
        for (k, &day) in self.observed.iter().enumerate() {
            if keep(day) {
                observed.push(day);
                values.extend_from_slice(self.row(k));
            }
        }
        if observed.is_empty() {
            return None;
        }
        Some(Self {
            subject_id: self.subject_id.clone(),
            num_rows: self.num_rows,
            row_len: self.row_len,
            observed,
            values,
        })
    }

    /// Restricts to days in `[start, end)`, keeping absolute day numbers.
    pub fn window(&self, start: usize, end: usize) -> Option<Self> {
        self.retain_days(|d| d >= start && d < end)
    }

    /// Number of observed days in `[start, end)`.
    pub fn observed_in(&self, start: usize, end: usize) -> usize {
        self.observed
            .iter()
            .filter(|&&d| d >= start && d < end)
            .count()
    }

    /// Same data with a different number of rows (periods). Only growing or
    /// trimming unobserved trailing rows is allowed.
    pub fn with_num_rows(mut self, num_rows: usize) -> Result<Self> {
        if self.observed.last().is_some_and(|&d| d > num_rows) {
            return Err(Error::ShapeMismatch(format!(
                "cannot shrink to {num_rows} rows: day {} is observed",
                self.observed.last().unwrap()
            )));
        }
        self.num_rows = num_rows;
        Ok(self)
    }

    /// Flattens observed rows back to `(sample index, value)` pairs.
    pub fn flatten(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for (k, &day) in self.observed.iter().enumerate() {
            for (i, &v) in self.row(k).iter().enumerate() {
                out.push(((day - 1) * self.row_len + i + 1, v));
            }
        }
        out
    }
}

impl DayRows for SeriesMatrix {
    fn days(&self) -> &[usize] {
        &self.observed
    }
    fn width(&self) -> usize {
        self.row_len
    }
    fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.row_len..(k + 1) * self.row_len]
    }
}

/// Grid metadata carried alongside a dataset, in minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub period_minutes: f64,
    pub sample_minutes: f64,
}

/// A set of subjects sharing the same row length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    series: Vec<SeriesMatrix>,
    grid: Option<Grid>,
}

impl Dataset {
    pub fn new(series: Vec<SeriesMatrix>) -> Result<Self> {
        if let Some(first) = series.first() {
            let row_len = first.row_len();
            if let Some(bad) = series.iter().find(|s| s.row_len() != row_len) {
                return Err(Error::ShapeMismatch(format!(
                    "subject {} has row length {}, expected {}",
                    bad.subject_id(),
                    bad.row_len(),
                    row_len
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &series {
            if !seen.insert(s.subject_id()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate subject id {}",
                    s.subject_id()
                )));
            }
        }
        Ok(Self { series, grid: None })
    }

    pub fn with_grid(mut self, grid: Grid) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn grid(&self) -> Option<Grid> {
        self.grid
    }

    pub fn series(&self) -> &[SeriesMatrix] {
        &self.series
    }

    pub fn into_series(self) -> Vec<SeriesMatrix> {
        self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Samples per period; `None` for an empty dataset.
    pub fn row_len(&self) -> Option<usize> {
        self.series.first().map(SeriesMatrix::row_len)
    }

    pub fn total_observed_rows(&self) -> usize {
        self.series.iter().map(|s| s.observed().len()).sum()
    }

    pub fn get(&self, subject_id: &str) -> Option<&SeriesMatrix> {
        self.series.iter().find(|s| s.subject_id() == subject_id)
    }

    /// Iterates over every observed row of every subject, in subject then day order.
    pub fn stacked_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.series
            .iter()
            .flat_map(|s| (0..s.num_observed()).map(move |k| s.row(k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        let err = SeriesMatrix::new("a", 1, 2, vec![1], vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, Error::ValueOutOfRange { index: 2, .. }));
    }

    #[test]
    fn window_keeps_absolute_days() {
        let m = SeriesMatrix::new("a", 5, 2, vec![1, 3, 5], vec![0.0; 6]).unwrap();
        let w = m.window(2, 5).unwrap();
        assert_eq!(w.observed(), &[3]);
        assert!(m.window(6, 9).is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = SeriesMatrix::new("a", 1, 2, vec![1], vec![0.0; 2]).unwrap();
        assert!(Dataset::new(vec![a.clone(), a]).is_err());
    }
}
