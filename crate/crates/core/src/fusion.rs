//! Interpolation of baseline logits with retrieval probabilities.
//!
//! The fused score of class `c` is `logit_c + gamma * P_knn(c)`: raw
//! pre-softmax logits plus a scaled probability vector, with `gamma` carrying
//! the scale difference.

use rayon::prelude::*;
use serde::Serialize;

use crate::encoding::{add_encoding, EncodingSpec};
use crate::error::{Error, Result};
use crate::prototypes::{PrototypeStore, StoreKind};
use crate::retrieval::{class_probabilities, knn, knn_batch, KnnConfig, Metric, NeighborList};

pub const DEFAULT_GAMMA: f64 = 8.0;
pub const DEFAULT_K_CLASSIFICATION: usize = 21;
pub const DEFAULT_K_SEGMENTATION: usize = 1;
pub const DEFAULT_K_DETECTION: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedPrediction {
    pub baseline_logits: Vec<f64>,
    pub knn_probs: Vec<f64>,
    pub gamma: f64,
    pub fused: Vec<f64>,
    pub argmax: usize,
}

impl FusedPrediction {
    pub fn baseline_argmax(&self) -> usize {
        argmax(&self.baseline_logits)
    }

    pub fn knn_argmax(&self) -> usize {
        argmax(&self.knn_probs)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("gamma must be finite and nonnegative, got {gamma}")));
    }
    Ok(())
}

pub fn fuse(baseline_logits: &[f64], knn_probs: &[f64], gamma: f64) -> Result<FusedPrediction> {
    if baseline_logits.len() != knn_probs.len() {
        return Err(Error::LengthMismatch {
            expected: baseline_logits.len(),
            found: knn_probs.len(),
        });
    }
    check_gamma(gamma)?;
    let fused: Vec<f64> = if gamma == 0.0 {
        baseline_logits.to_vec()
    } else {
        baseline_logits
            .iter()
            .zip(knn_probs)
            .map(|(&l, &p)| l + gamma * p)
            .collect()
    };
    Ok(FusedPrediction {
        baseline_logits: baseline_logits.to_vec(),
        knn_probs: knn_probs.to_vec(),
        gamma,
        argmax: argmax(&fused),
        fused,
    })
}

pub fn predict_classification(
    query: &[f32],
    store: &PrototypeStore,
    baseline_logits: &[f64],
    cfg: &KnnConfig,
    gamma: f64,
) -> Result<FusedPrediction> {
    let neighbors = knn(query, store, cfg)?;
    let probs = class_probabilities(&neighbors, store, baseline_logits.len(), cfg)?;
    fuse(baseline_logits, &probs, gamma)
}

/// Per-point fusion against a part store.
///
/// With `object_class` set, retrieval is limited to part prototypes taken
/// from samples of that class.
pub fn predict_segmentation<F>(
    point_features: &[F],
    store: &PrototypeStore,
    baseline_logits: &[Vec<f64>],
    cfg: &KnnConfig,
    gamma: f64,
    object_class: Option<u32>,
) -> Result<Vec<FusedPrediction>>
where
    F: AsRef<[f32]> + Sync,
{
    if store.kind() != StoreKind::Part {
        return Err(Error::InvalidConfig(format!("segmentation needs a part store, got {:?}", store.kind())));
    }
    if point_features.len() != baseline_logits.len() {
        return Err(Error::LengthMismatch {
            expected: point_features.len(),
            found: baseline_logits.len(),
        });
    }
    if let Some(class) = object_class {
        if !store.labels().contains(&class) {
            return Err(Error::ScopeClassAbsent(class));
        }
    }
    let cfg = cfg.clone().with_scope(object_class);
    point_features
        .par_iter()
        .zip(baseline_logits.par_iter())
        .map(|(f, logits)| predict_classification(f.as_ref(), store, logits, &cfg, gamma))
        .collect()
}

/// Query vector for a detection proposal: its feature plus the encoding of
/// its predicted position under the store's encoder.
pub fn detection_query(feature: &[f32], position: [f32; 3], store: &PrototypeStore) -> Result<Vec<f32>> {
    let encoder = store.encoder().ok_or(Error::MissingField("store encoding"))?;
    if encoder.dim() != feature.len() {
        return Err(Error::DimensionMismatch(format!(
            "proposal feature has {} components, encoding has {}",
            feature.len(),
            encoder.dim()
        )));
    }
    Ok(add_encoding(feature, &encoder.encode(position)))
}

pub fn predict_detection<F>(
    features: &[F],
    positions: &[[f32; 3]],
    baseline_logits: &[Vec<f64>],
    store: &PrototypeStore,
    cfg: &KnnConfig,
    gamma: f64,
    query_encoding: &EncodingSpec,
) -> Result<Vec<FusedPrediction>>
where
    F: AsRef<[f32]> + Sync,
{
    if store.kind() != StoreKind::Object {
        return Err(Error::InvalidConfig(format!("detection needs an object store, got {:?}", store.kind())));
    }
    if store.encoding() != Some(query_encoding) {
        return Err(Error::EncodingMismatch);
    }
    for len in [positions.len(), baseline_logits.len()] {
        if len != features.len() {
            return Err(Error::LengthMismatch {
                expected: features.len(),
                found: len,
            });
        }
    }
    (0..features.len())
        .into_par_iter()
        .map(|i| {
            let query = detection_query(features[i].as_ref(), positions[i], store)?;
            predict_classification(&query, store, &baseline_logits[i], cfg, gamma)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub k: usize,
    pub gamma: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub metric_name: String,
    pub best: GridPoint,
    /// Row-major over `k_grid` then `gamma_grid`, in the order given.
    pub grid: Vec<GridPoint>,
}

impl SweepResult {
    /// Value at `gamma = 0`, i.e. the baseline alone (identical for every k).
    pub fn baseline_value(&self) -> Option<f64> {
        self.grid.iter().find(|p| p.gamma == 0.0).map(|p| p.value)
    }
}

/// Highest value wins; ties prefer the smaller gamma, then the smaller k.
pub fn select_best(grid: &[GridPoint]) -> Option<GridPoint> {
    grid.iter().copied().reduce(|best, p| {
        let better = p.value > best.value
            || (p.value == best.value && (p.gamma < best.gamma || (p.gamma == best.gamma && p.k < best.k)));
        if better {
            p
        } else {
            best
        }
    })
}

fn check_grids(k_grid: &[usize], gamma_grid: &[f64]) -> Result<()> {
    if k_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be nonempty".into()));
    }
    if k_grid.contains(&0) {
        return Err(Error::InvalidConfig("k grid contains 0".into()));
    }
    if !gamma_grid.contains(&0.0) {
        return Err(Error::InvalidConfig("gamma grid must contain 0".into()));
    }
    gamma_grid.iter().try_for_each(|&g| check_gamma(g))
}

/// Evaluates `objective(k, gamma)` over the full grid.
pub fn sweep_grid<F>(metric_name: &str, k_grid: &[usize], gamma_grid: &[f64], objective: F) -> Result<SweepResult>
where
    F: Fn(usize, f64) -> Result<f64> + Sync,
{
    check_grids(k_grid, gamma_grid)?;
    let pairs: Vec<(usize, f64)> = k_grid
        .iter()
        .flat_map(|&k| gamma_grid.iter().map(move |&g| (k, g)))
        .collect();
    let grid = pairs
        .par_iter()
        .map(|&(k, gamma)| Ok(GridPoint { k, gamma, value: objective(k, gamma)? }))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&grid).expect("grid is nonempty");
    Ok(SweepResult {
        metric_name: metric_name.to_owned(),
        best,
        grid,
    })
}

/// Overall-accuracy sweep for classification.
///
/// Neighbours are retrieved once at the largest k; smaller k reuse the
/// prefix, which equals a fresh search under the total neighbour order.
pub fn sweep<Q>(
    val_queries: &[Q],
    store: &PrototypeStore,
    baseline_logits: &[Vec<f64>],
    labels: &[u32],
    k_grid: &[usize],
    gamma_grid: &[f64],
    metric: Metric,
) -> Result<SweepResult>
where
    Q: AsRef<[f32]> + Sync,
{
    check_grids(k_grid, gamma_grid)?;
    for len in [baseline_logits.len(), labels.len()] {
        if len != val_queries.len() {
            return Err(Error::LengthMismatch {
                expected: val_queries.len(),
                found: len,
            });
        }
    }
    if val_queries.is_empty() {
        return Err(Error::Empty("validation queries"));
    }
    let max_k = *k_grid.iter().max().expect("nonempty");
    let cfg = KnnConfig::new(max_k, metric);
    let neighbors: Vec<NeighborList> = knn_batch(val_queries, store, &cfg)?;
    let num_classes = baseline_logits[0].len();

    sweep_grid("OA", k_grid, gamma_grid, |k, gamma| {
        let cfg = cfg.clone().with_k(k);
        let mut correct = 0usize;
        for ((n, logits), &label) in neighbors.iter().zip(baseline_logits).zip(labels) {
            let probs = class_probabilities(&n.prefix(k), store, num_classes, &cfg)?;
            if fuse(logits, &probs, gamma)?.argmax == label as usize {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    })
}

/// Counts of samples where the baseline and the retrieval vote disagree in
/// correctness, split by whether the fused prediction is right.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RectificationStats {
    pub baseline_right_knn_wrong_fused_right: usize,
    pub baseline_right_knn_wrong_fused_wrong: usize,
    pub baseline_wrong_knn_right_fused_right: usize,
    pub baseline_wrong_knn_right_fused_wrong: usize,
    pub both_wrong_fused_right: usize,
    pub both_wrong_fused_wrong: usize,
    pub both_right: usize,
    pub total: usize,
}

impl RectificationStats {
    /// The five reported rows as (baseline ok, knn ok, fused ok, count).
    pub fn rows(&self) -> [(bool, bool, bool, usize); 5] {
        [
            (true, false, true, self.baseline_right_knn_wrong_fused_right),
            (true, false, false, self.baseline_right_knn_wrong_fused_wrong),
            (false, true, true, self.baseline_wrong_knn_right_fused_right),
            (false, true, false, self.baseline_wrong_knn_right_fused_wrong),
            (false, false, true, self.both_wrong_fused_right),
        ]
    }
}

pub fn rectification_stats(
    baseline_preds: &[usize],
    knn_preds: &[usize],
    fused_preds: &[usize],
    labels: &[u32],
) -> Result<RectificationStats> {
    for len in [knn_preds.len(), fused_preds.len(), labels.len()] {
        if len != baseline_preds.len() {
            return Err(Error::LengthMismatch {
                expected: baseline_preds.len(),
                found: len,
            });
        }
    }
    let mut stats = RectificationStats {
        total: labels.len(),
        ..Default::default()
    };
    for i in 0..labels.len() {
        let label = labels[i] as usize;
        let (b, k, f) = (baseline_preds[i] == label, knn_preds[i] == label, fused_preds[i] == label);
        let slot = match (b, k, f) {
            (true, true, _) => &mut stats.both_right,
            (true, false, true) => &mut stats.baseline_right_knn_wrong_fused_right,
            (true, false, false) => &mut stats.baseline_right_knn_wrong_fused_wrong,
            (false, true, true) => &mut stats.baseline_wrong_knn_right_fused_right,
            (false, true, false) => &mut stats.baseline_wrong_knn_right_fused_wrong,
            (false, false, true) => &mut stats.both_wrong_fused_right,
            (false, false, false) => &mut stats.both_wrong_fused_wrong,
        };
        *slot += 1;
    }
    Ok(stats)
}
