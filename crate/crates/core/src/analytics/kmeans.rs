//! Lloyd's k-means under the masked distance.
//!
//! Centroids are day tables: the mean over the members observed on each
//! day. Days no member observed are absent from the centroid and therefore
//! ignored by the distance.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytics::distance::masked_distance;
use crate::error::{Error, Result};
use crate::series::{Dataset, DayRows, DayTable};
use crate::solver::FactorModel;

/// What is being clustered.
#[derive(Debug, Clone, Copy)]
pub enum ClusterSpace<'a> {
    /// Coefficient trajectories, compared on the given 0-based components.
    Coefficients {
        model: &'a FactorModel,
        components: &'a [usize],
    },
    /// Raw rows, compared on all samples.
    Raw(&'a Dataset),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            restarts: 10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub subject_ids: Vec<String>,
    /// 0-based cluster of each subject, in input order.
    pub labels: Vec<usize>,
    /// Per cluster, per day mean over members observed that day. Full row
    /// width (all components, or all samples).
    pub centroids: Vec<DayTable>,
    /// `Σ_n d(n, centroid)²`.
    pub cost: f64,
    pub iterations: usize,
    /// False when the iteration cap stopped the best restart.
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

pub fn kmeans(space: ClusterSpace<'_>, opts: &KMeansOptions) -> Result<ClusterAssignment> {
    match space {
        ClusterSpace::Coefficients { model, components } => {
            if let Some(&j) = components.iter().find(|&&j| j >= model.rank()) {
                return Err(Error::InvalidArgument(format!(
                    "component {} out of range for rank {}",
                    j + 1,
                    model.rank()
                )));
            }
            if components.is_empty() {
                return Err(Error::InvalidArgument("no components selected".into()));
            }
            let ids = model.coeffs.iter().map(|c| c.subject_id().to_string()).collect();
            lloyd_restarts(&model.coeffs, Some(components), ids, opts)
        }
        ClusterSpace::Raw(d) => {
            let ids = d.series().iter().map(|s| s.subject_id().to_string()).collect();
            lloyd_restarts(d.series(), None, ids, opts)
        }
    }
}

fn lloyd_restarts<P: DayRows + Sync>(
    points: &[P],
    columns: Option<&[usize]>,
    subject_ids: Vec<String>,
    opts: &KMeansOptions,
) -> Result<ClusterAssignment> {
    let n = points.len();
    if opts.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if opts.k > n {
        return Err(Error::TooManyClusters { k: opts.k, subjects: n });
    }
    let restarts = opts.restarts.max(1);
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let init: Vec<usize> = sample(&mut rng, n, opts.k).into_vec();
            lloyd(points, columns, &init, opts.max_iter)
        })
        .collect::<Result<_>>()?;
    // lowest cost, earliest restart on ties
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.cost < a.cost { b } else { a })
        .expect("at least one restart");
    Ok(ClusterAssignment {
        k: opts.k,
        subject_ids,
        labels: best.labels,
        centroids: best.centroids,
        cost: best.cost,
        iterations: best.iterations,
        converged: best.converged,
    })
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<DayTable>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn distance_or_inf<P: DayRows>(p: &P, c: &DayTable, columns: Option<&[usize]>) -> Result<f64> {
    match masked_distance(p, c, columns) {
        Ok(d) => Ok(d),
        Err(Error::NoOverlap) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn as_table<P: DayRows>(p: &P) -> DayTable {
    let values = (0..p.num_observed()).flat_map(|k| p.row(k).iter().copied()).collect();
    DayTable::new(p.days().to_vec(), p.width(), values).expect("rows of a valid table")
}

/// Per-day mean over the members observed on each day.
pub(crate) fn mean_table<'a, P: DayRows + ?Sized + 'a>(
    members: impl Iterator<Item = &'a P>,
    width: usize,
) -> DayTable {
    let mut acc: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for p in members {
        for (k, &d) in p.days().iter().enumerate() {
            let e = acc.entry(d).or_insert_with(|| (vec![0.0; width], 0));
            for (s, v) in e.0.iter_mut().zip(p.row(k)) {
                *s += v;
            }
            e.1 += 1;
        }
    }
    let days: Vec<usize> = acc.keys().copied().collect();
    let values = acc
        .into_values()
        .flat_map(|(sum, count)| sum.into_iter().map(move |s| s / count as f64))
        .collect();
    DayTable::new(days, width, values).expect("days from a map are sorted")
}

fn assign<P: DayRows + Sync>(
    points: &[P],
    centroids: &[DayTable],
    columns: Option<&[usize]>,
) -> Result<Vec<(usize, f64)>> {
    points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = distance_or_inf(p, centroid, columns)?;
                if d < best.1 {
                    best = (c, d);
                }
            }
            Ok(best)
        })
        .collect()
}

fn lloyd<P: DayRows + Sync>(
    points: &[P],
    columns: Option<&[usize]>,
    init: &[usize],
    max_iter: usize,
) -> Result<Run> {
    let k = init.len();
    let width = points[0].width();
    let mut centroids: Vec<DayTable> = init.iter().map(|&i| as_table(&points[i])).collect();
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let assigned = assign(points, &centroids, columns)?;
        let mut new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        // A point that overlaps no centroid keeps its label.
        for (i, a) in assigned.iter().enumerate() {
            if a.1 == f64::INFINITY {
                new_labels[i] = labels.get(i).copied().unwrap_or(0);
            }
        }
        reseed_empty(&mut new_labels, &assigned, k);
        if new_labels == labels {
            converged = true;
            break;
        }
        labels = new_labels;
        centroids = (0..k)
            .map(|c| {
                let members = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p);
                mean_table(members, width)
            })
            .collect();
    }
    let mut total = 0.0;
    for (p, &l) in points.iter().zip(&labels) {
        let d = distance_or_inf(p, &centroids[l], columns)?;
        total += d * d;
    }
    Ok(Run {
        labels,
        centroids,
        cost: total,
        iterations,
        converged,
    })
}

/// Gives every empty cluster the point farthest from its assigned centroid,
/// taken from clusters that keep at least one member.
fn reseed_empty(labels: &mut [usize], assigned: &[(usize, f64)], k: usize) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)));
        if let Some(i) = far {
            sizes[labels[i]] -= 1;
            labels[i] = c;
            sizes[c] = 1;
        }
    }
}

/// Adjusted Rand index of two labelings of the same items; 1 means identical
/// partitions up to renaming.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ra: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let pairs = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| pairs(m)).sum();
    let sa: f64 = ra.values().map(|&m| pairs(m)).sum();
    let sb: f64 = rb.values().map(|&m| pairs(m)).sum();
    let total = pairs(n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
