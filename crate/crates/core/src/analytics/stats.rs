//! Cohort order statistics of coefficient trajectories, and outliers
//! relative to the cohort median.

use std::collections::BTreeMap;

use crate::analytics::distance::masked_distance;
use crate::error::{Error, Result};
use crate::series::{DayRows, DayTable};
use crate::solver::{CoefficientSet, FactorModel};

/// Percentile levels reported by [`trend_stats`].
pub const TREND_LEVELS: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

/// Default percentile above which a subject is flagged as an outlier.
pub const DEFAULT_OUTLIER_PERCENTILE: f64 = 98.0;

/// Percentile `p ∈ [0, 100]` of ascending `sorted` data, interpolating
/// linearly between order statistics at position `p/100·(n−1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// As [`percentile_sorted`] for unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

/// Per component, a table over days whose columns are the requested
/// percentiles of the coefficients of all subjects observed that day.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendStats {
    pub levels: Vec<f64>,
    /// One table per component, width `levels.len()`.
    pub components: Vec<DayTable>,
}

/// Groups the coefficient rows of all subjects by day.
fn by_day(coeffs: &[CoefficientSet]) -> BTreeMap<usize, Vec<&[f64]>> {
    let mut days: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for c in coeffs {
        for (k, &d) in c.days().iter().enumerate() {
            days.entry(d).or_default().push(c.row(k));
        }
    }
    days
}

/// The 10/25/50/75/90th percentiles of every component on every day.
pub fn trend_stats(m: &FactorModel) -> TrendStats {
    trend_stats_at(m, &TREND_LEVELS)
}

pub fn trend_stats_at(m: &FactorModel, levels: &[f64]) -> TrendStats {
    let r = m.rank();
    let days = by_day(&m.coeffs);
    let mut values = vec![Vec::with_capacity(days.len() * levels.len()); r];
    let mut buf = Vec::new();
    for rows in days.values() {
        for (j, out) in values.iter_mut().enumerate() {
            buf.clear();
            buf.extend(rows.iter().map(|row| row[j]));
            buf.sort_by(f64::total_cmp);
            out.extend(levels.iter().map(|&p| percentile_sorted(&buf, p)));
        }
    }
    let day_list: Vec<usize> = days.keys().copied().collect();
    TrendStats {
        levels: levels.to_vec(),
        components: values
            .into_iter()
            .map(|v| DayTable::new(day_list.clone(), levels.len(), v).expect("days from a map are sorted"))
            .collect(),
    }
}

/// Per-day median of every component, width `r`. Days no subject observed
/// are absent.
pub fn cohort_median(m: &FactorModel) -> DayTable {
    let t = trend_stats_at(m, &[50.0]);
    let r = m.rank();
    let days = t.components.first().map(|c| c.days().to_vec()).unwrap_or_default();
    let mut values = vec![0.0; days.len() * r];
    for (j, table) in t.components.iter().enumerate() {
        for k in 0..days.len() {
            values[k * r + j] = table.row(k)[0];
        }
    }
    DayTable::new(days, r, values).expect("days from a map are sorted")
}

/// Median trajectory of component `j` (0-based), width 1.
pub fn component_median(m: &FactorModel, j: usize) -> Result<DayTable> {
    check_component(m, j)?;
    let t = trend_stats_at(m, &[50.0]);
    Ok(t.components.into_iter().nth(j).expect("component checked"))
}

fn check_component(m: &FactorModel, j: usize) -> Result<()> {
    if j >= m.rank() {
        return Err(Error::InvalidArgument(format!(
            "component {} out of range for rank {}",
            j + 1,
            m.rank()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    /// 0-based component.
    pub component: usize,
    pub percentile: f64,
    /// Distance at the requested percentile; subjects strictly above it are flagged.
    pub threshold: f64,
    /// `(subject, distance to the median)` in model order.
    pub distances: Vec<(String, f64)>,
    pub flagged: Vec<String>,
}

/// Distance of every subject's component-`j` trajectory to the cohort median
/// of that component; flags the subjects beyond the given percentile of
/// those distances.
pub fn detect_outliers(m: &FactorModel, j: usize, percentile_level: f64) -> Result<OutlierReport> {
    check_component(m, j)?;
    if !(percentile_level > 0.0 && percentile_level < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 100), got {percentile_level}"
        )));
    }
    if m.coeffs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let median = cohort_median(m);
    let distances = m
        .coeffs
        .iter()
        .map(|c| Ok((c.subject_id().to_string(), masked_distance(c, &median, Some(&[j]))?)))
        .collect::<Result<Vec<_>>>()?;
    let d: Vec<f64> = distances.iter().map(|(_, d)| *d).collect();
    let threshold = percentile(&d, percentile_level);
    let flagged = distances
        .iter()
        .filter(|(_, d)| *d > threshold)
        .map(|(id, _)| id.clone())
        .collect();
    Ok(OutlierReport {
        component: j,
        percentile: percentile_level,
        threshold,
        distances,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::BasisSet;
    use proptest::prelude::*;

    fn model(coeffs: Vec<CoefficientSet>) -> FactorModel {
        let r = coeffs[0].rank();
        let basis = BasisSet::new((0..r).map(|j| (0..r).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect())
            .unwrap();
        FactorModel {
            basis,
            coeffs,
            lambda: 0.0,
            objective_trace: Vec::new(),
            converged: true,
        }
    }

    fn subject(id: &str, days: Vec<usize>, traj: &[Vec<f64>]) -> CoefficientSet {
        CoefficientSet::from_trajectories(id, days, traj).unwrap()
    }

    #[test]
    fn symmetric_set_quartiles() {
        let v = [4.0, 0.0, 3.0, 1.0, 2.0];
        assert_eq!(percentile(&v, 50.0), 2.0);
        assert_eq!(percentile(&v, 25.0), 1.0);
        assert_eq!(percentile(&v, 75.0), 3.0);
    }

    #[test]
    fn singleton_cohort() {
        let m = model(vec![subject("a", vec![1, 3], &[vec![0.2, 0.7]])]);
        let t = trend_stats(&m);
        assert_eq!(t.components[0].days(), &[1, 3]);
        assert!(t.components[0].row(1).iter().all(|&v| v == 0.7));
        assert_eq!(component_median(&m, 0).unwrap().values(), &[0.2, 0.7]);
    }

    #[test]
    fn two_subjects_median_is_midpoint() {
        let m = model(vec![
            subject("a", vec![1, 2], &[vec![0.0, 1.0]]),
            subject("b", vec![2, 3], &[vec![3.0, 5.0]]),
        ]);
        let med = component_median(&m, 0).unwrap();
        assert_eq!(med.days(), &[1, 2, 3]);
        assert_eq!(med.values(), &[0.0, 2.0, 5.0]);
    }

    #[test]
    fn clones_have_no_outliers() {
        let c: Vec<CoefficientSet> = (0..6)
            .map(|n| subject(&format!("s{n}"), vec![1, 2, 3], &[vec![0.1, 0.2, 0.3], vec![1.0, 1.0, 1.0]]))
            .collect();
        let r = detect_outliers(&model(c), 0, 90.0).unwrap();
        assert!(r.distances.iter().all(|(_, d)| *d == 0.0));
        assert!(r.flagged.is_empty());
    }

    #[test]
    fn planted_deviant_is_the_unique_flag() {
        let mut c: Vec<CoefficientSet> = (0..9)
            .map(|n| subject(&format!("s{n}"), vec![1, 2, 3], &[vec![0.5, 0.5, 0.5]]))
            .collect();
        c.push(subject("odd", vec![1, 2, 3], &[vec![0.5, 2.0, 3.0]]));
        let r = detect_outliers(&model(c), 0, 90.0).unwrap();
        assert_eq!(r.flagged, vec!["odd".to_string()]);
        assert!(detect_outliers(&model(vec![subject("a", vec![1], &[vec![0.0]])]), 1, 90.0).is_err());
    }

    proptest! {
        #[test]
        fn percentiles_match_sort_oracle_and_never_cross(
            cohort in proptest::collection::vec(proptest::collection::vec(0.0f64..3.0, 4), 1..12)
        ) {
            let coeffs: Vec<CoefficientSet> = cohort
                .iter()
                .enumerate()
                .map(|(n, v)| subject(&format!("s{n}"), vec![1, 2, 5, 9], &[v.clone()]))
                .collect();
            let t = trend_stats(&model(coeffs));
            let table = &t.components[0];
            for k in 0..4 {
                let row = table.row(k);
                prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
                let mut day: Vec<f64> = cohort.iter().map(|v| v[k]).collect();
                day.sort_by(f64::total_cmp);
                let n = day.len();
                for (&p, &got) in TREND_LEVELS.iter().zip(row) {
                    let h = p / 100.0 * (n - 1) as f64;
                    let want = day[h.floor() as usize] + (h - h.floor()) * (day[h.ceil() as usize] - day[h.floor() as usize]);
                    prop_assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }
}
