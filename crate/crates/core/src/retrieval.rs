//! Exact k-nearest-neighbour retrieval over a prototype store.
//!
//! Search is a brute-force scan with a bounded max-heap per query. Neighbours
//! are ordered by ascending distance, ties broken by ascending row index, so
//! results never depend on scheduling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototypes::PrototypeStore;

pub const DEFAULT_ZERO_DISTANCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Manhattan,
    Chebyshev,
    Hamming,
    Canberra,
    BrayCurtis,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Euclidean,
        Metric::Manhattan,
        Metric::Chebyshev,
        Metric::Hamming,
        Metric::Canberra,
        Metric::BrayCurtis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
            Metric::Hamming => "hamming",
            Metric::Canberra => "canberra",
            Metric::BrayCurtis => "braycurtis",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    pub zero_distance_clamp: f64,
    /// Restricts retrieval to rows whose class label equals this value.
    pub scope: Option<u32>,
}

impl KnnConfig {
    pub fn new(k: usize, metric: Metric) -> Self {
        Self {
            k,
            metric,
            zero_distance_clamp: DEFAULT_ZERO_DISTANCE_CLAMP,
            scope: None,
        }
    }

    pub fn with_scope(mut self, scope: Option<u32>) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborList {
    entries: Vec<Neighbor>,
}

impl NeighborList {
    /// Wraps neighbours found elsewhere, e.g. by an external index. Order is kept.
    pub fn from_entries(entries: Vec<Neighbor>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Neighbor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `k` neighbours. Because ordering is total, this equals a
    /// fresh search with the smaller `k`.
    pub fn prefix(&self, k: usize) -> NeighborList {
        NeighborList {
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }
}

pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(distance_unchecked(a, b, metric))
}

pub(crate) fn distance_unchecked(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    let pairs = a.iter().zip(b).map(|(&x, &y)| (x as f64, y as f64));
    match metric {
        Metric::Euclidean => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Manhattan => pairs.map(|(x, y)| (x - y).abs()).sum(),
        Metric::Chebyshev => pairs.map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        Metric::Hamming => pairs.filter(|(x, y)| x != y).count() as f64,
        Metric::Canberra => pairs
            .map(|(x, y)| {
                let den = x.abs() + y.abs();
                if den == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / den
                }
            })
            .sum(),
        Metric::BrayCurtis => {
            let (num, den) = pairs.fold((0.0, 0.0), |(n, d), (x, y)| (n + (x - y).abs(), d + (x + y).abs()));
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    row: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.row.cmp(&other.row))
    }
}

/// The `k` rows closest to `query`. If the scope leaves fewer than `k` rows,
/// all of them are returned.
pub fn knn(query: &[f32], store: &PrototypeStore, cfg: &KnnConfig) -> Result<NeighborList> {
    if store.is_empty() {
        return Err(Error::Empty("prototype store"));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if query.len() != store.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query has {} components, store dim is {}",
            query.len(),
            store.dim()
        )));
    }

    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(cfg.k + 1);
    let mut admitted = 0usize;
    for (row, proto) in store.rows().enumerate() {
        if let Some(scope) = cfg.scope {
            if store.label(row) != scope {
                continue;
            }
        }
        admitted += 1;
        let candidate = Candidate {
            distance: distance_unchecked(query, proto, cfg.metric),
            row,
        };
        if heap.len() < cfg.k {
            heap.push(candidate);
        } else if let Some(mut worst) = heap.peek_mut() {
            if candidate < *worst {
                *worst = candidate;
            }
        }
    }
    if admitted == 0 {
        return Err(Error::ScopeClassAbsent(cfg.scope.unwrap_or_default()));
    }

    let entries = heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Neighbor {
            row: c.row,
            distance: c.distance,
        })
        .collect();
    Ok(NeighborList { entries })
}

/// Runs `knn` for many queries in parallel; output order follows input order.
pub fn knn_batch<Q>(queries: &[Q], store: &PrototypeStore, cfg: &KnnConfig) -> Result<Vec<NeighborList>>
where
    Q: AsRef<[f32]> + Sync,
{
    queries.par_iter().map(|q| knn(q.as_ref(), store, cfg)).collect()
}

/// Inverse-distance vote over the retrieved neighbours:
/// `P(c) = sum_{n in N_c} 1/d_n / sum_{n in N} 1/d_n`.
///
/// Distances below the configured clamp are raised to it, so an exact
/// duplicate dominates without producing an infinite weight.
pub fn class_probabilities(
    neighbors: &NeighborList,
    store: &PrototypeStore,
    num_classes: usize,
    cfg: &KnnConfig,
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::Empty("neighbor list"));
    }
    let mut votes = vec![0.0; num_classes];
    for n in neighbors.entries() {
        let label = store.retrieval_label(n.row) as usize;
        let slot = votes.get_mut(label).ok_or(Error::InvalidLabel {
            id: n.row as u32,
            label: label as i64,
            num_classes,
        })?;
        *slot += 1.0 / n.distance.max(cfg.zero_distance_clamp);
    }
    let total: f64 = votes.iter().sum();
    votes.iter_mut().for_each(|v| *v /= total);
    Ok(votes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityCoverage {
    pub purity: f64,
    pub coverage: f64,
}

/// Purity and coverage of the euclidean epsilon-balls centred on every
/// prototype.
///
/// A ball is pure when every prototype inside it shares the centre's label.
/// Purity is the fraction of pure balls; coverage is the mean fraction of the
/// store that a ball contains.
pub struct RegionDiagnostics {
    rows: usize,
    /// Per centre, distances to every row (itself included), ascending.
    sorted_rows: Vec<Vec<f64>>,
    /// Per centre, distance to the closest differently-labelled row.
    foreign: Vec<f64>,
    foreign_sorted: Vec<f64>,
    pairwise_sorted: Vec<f64>,
}

impl RegionDiagnostics {
    pub fn new(store: &PrototypeStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Empty("prototype store"));
        }
        let rows = store.len();
        let matrix: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|i| {
                (0..rows)
                    .map(|j| distance_unchecked(store.row(i), store.row(j), Metric::Euclidean))
                    .collect()
            })
            .collect();
        let foreign: Vec<f64> = (0..rows)
            .map(|i| {
                (0..rows)
                    .filter(|&j| store.retrieval_label(j) != store.retrieval_label(i))
                    .map(|j| matrix[i][j])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut pairwise_sorted: Vec<f64> = (0..rows)
            .flat_map(|i| matrix[i][i + 1..].to_vec())
            .collect();
        pairwise_sorted.sort_by(f64::total_cmp);
        pairwise_sorted.dedup();
        let mut foreign_sorted = foreign.clone();
        foreign_sorted.sort_by(f64::total_cmp);
        let sorted_rows = matrix
            .into_iter()
            .map(|mut row| {
                row.sort_by(f64::total_cmp);
                row
            })
            .collect();
        Ok(Self {
            rows,
            sorted_rows,
            foreign,
            foreign_sorted,
            pairwise_sorted,
        })
    }

    pub fn purity(&self, epsilon: f64) -> f64 {
        let impure = self.foreign_sorted.partition_point(|&d| d <= epsilon);
        (self.rows - impure) as f64 / self.rows as f64
    }

    pub fn at(&self, epsilon: f64) -> PurityCoverage {
        let n = self.rows as f64;
        let covered: usize = self
            .sorted_rows
            .iter()
            .map(|row| row.partition_point(|&d| d <= epsilon))
            .sum();
        PurityCoverage {
            purity: self.purity(epsilon),
            coverage: covered as f64 / (n * n),
        }
    }

    /// Largest distance between any two prototypes (0 for a single row).
    pub fn max_pairwise_distance(&self) -> f64 {
        self.pairwise_sorted.last().copied().unwrap_or(0.0)
    }

    /// Distance from each centre to its closest differently-labelled row.
    pub fn foreign_distances(&self) -> &[f64] {
        &self.foreign
    }

    /// Candidate radii: 0, every distinct pairwise distance, and the midpoint
    /// of each consecutive pair of those, ascending.
    pub fn candidate_epsilons(&self) -> Vec<f64> {
        let mut base = vec![0.0];
        base.extend(self.pairwise_sorted.iter().copied().filter(|&d| d > 0.0));
        let mut out = Vec::with_capacity(base.len() * 2);
        for (i, &d) in base.iter().enumerate() {
            if i > 0 {
                out.push(0.5 * (base[i - 1] + d));
            }
            out.push(d);
        }
        out
    }

    pub fn epsilon_star(&self, alpha: f64) -> Result<EpsilonStar> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        // purity need not be monotone for every region definition, so scan
        // from the top instead of bisecting
        let found = self
            .candidate_epsilons()
            .into_iter()
            .rev()
            .find(|&eps| self.purity(eps) >= alpha);
        let (epsilon, satisfied) = match found {
            Some(eps) => (eps, true),
            None => (0.0, false),
        };
        let pc = self.at(epsilon);
        Ok(EpsilonStar {
            epsilon,
            purity: pc.purity,
            coverage: pc.coverage,
            satisfied,
        })
    }
}

pub fn purity_coverage(store: &PrototypeStore, epsilon: f64) -> Result<PurityCoverage> {
    Ok(RegionDiagnostics::new(store)?.at(epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonStar {
    pub epsilon: f64,
    pub purity: f64,
    pub coverage: f64,
    /// False when no candidate reached the purity threshold; `epsilon` is then 0.
    pub satisfied: bool,
}

pub fn find_epsilon_star(store: &PrototypeStore, alpha: f64) -> Result<EpsilonStar> {
    RegionDiagnostics::new(store)?.epsilon_star(alpha)
}
