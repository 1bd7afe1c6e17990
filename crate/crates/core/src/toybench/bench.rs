//! Toy benches for the three tasks: standardized feature sets, trained
//! linear heads, and the evaluation and sweep helpers shared by the CLI.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{train_classifier, ToyClassifier, TrainConfig};
use super::dataset::{item_seed, SceneLayout, SceneObject, Splits, ToyDataset};
use super::features::{extract_features, extract_point_features, Standardizer, GLOBAL_DIM, POINT_DIM};
use super::metrics::{classification_metrics, mean_instance_iou, ClassificationMetrics};
use super::shapes::{class_names, part_names, valid_part_map, LabeledCloud, Point, MIN_POINTS};
use crate::detection::{
    class_and_score, evaluate_detection, run_baseline_pipeline, run_detection_pipeline, Box3D, DetectionMetrics,
    NmsConfig, Placement, Proposal, Scene,
};
use crate::encoding::add_encoding;
use crate::error::{Error, Result};
use crate::feature_store::{FeatureKind, FeatureRecord, FeatureSet};
use crate::fusion::{
    fuse, predict_classification, predict_segmentation, rectification_stats, sweep, sweep_grid,
    RectificationStats, SweepResult,
};
use crate::prototypes::PrototypeStore;
use crate::retrieval::{class_probabilities, knn_batch, KnnConfig, Metric, NeighborList};

pub const DEFAULT_GAMMA_GRID: [f64; 6] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0];

pub fn default_k_grid() -> Vec<usize> {
    (1..=32).collect()
}

/// A trained linear head together with the standardization it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub standardizer: Standardizer,
    pub classifier: ToyClassifier,
}

impl TaskModel {
    pub fn logits<F: AsRef<[f32]>>(&self, feature: F) -> Result<Vec<f64>> {
        self.classifier.logits(feature)
    }

    pub fn baseline_logits(&self, set: &FeatureSet) -> Result<Vec<Vec<f64>>> {
        set.records.par_iter().map(|r| self.logits(&r.feature)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.classifier.validate()?;
        if model.standardizer.dim() != model.classifier.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has {} components, classifier expects {}",
                model.standardizer.dim(),
                model.classifier.dim()
            )));
        }
        Ok(model)
    }
}

fn per_split<T, U>(splits: &Splits<Vec<T>>, f: impl Fn(&[T]) -> Result<U>) -> Result<(U, U, U)> {
    Ok((f(&splits.train)?, f(&splits.val)?, f(&splits.test)?))
}

fn features_and_labels(set: &FeatureSet) -> (Vec<&[f32]>, Vec<u32>) {
    set.records.iter().map(|r| (r.feature.as_slice(), r.label)).unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationBench {
    pub model: TaskModel,
    pub sets: Splits<FeatureSet>,
    pub clouds: Splits<Vec<Vec<Point>>>,
}

pub fn classification_bench(dataset: &ToyDataset, train: TrainConfig) -> Result<ClassificationBench> {
    let (raw_train, raw_val, raw_test) = per_split(&dataset.shapes, |clouds: &[LabeledCloud]| {
        clouds.par_iter().map(|c| extract_features(&c.points)).collect::<Result<Vec<_>>>()
    })?;
    let standardizer = Standardizer::fit(&raw_train)?;
    let build = |clouds: &[LabeledCloud], raw: &[Vec<f64>]| -> Result<FeatureSet> {
        let mut set = FeatureSet::new(FeatureKind::Sample, GLOBAL_DIM, class_names());
        for (cloud, f) in clouds.iter().zip(raw) {
            set.push(FeatureRecord::new(0, standardizer.apply(f)?, cloud.class));
        }
        Ok(set)
    };
    let sets = Splits {
        train: build(&dataset.shapes.train, &raw_train)?,
        val: build(&dataset.shapes.val, &raw_val)?,
        test: build(&dataset.shapes.test, &raw_test)?,
    };
    let (x, y) = features_and_labels(&sets.train);
    let classifier = train_classifier(&x, &y, class_names().len(), train)?;
    let points = |clouds: &[LabeledCloud]| clouds.iter().map(|c| c.points.clone()).collect();
    Ok(ClassificationBench {
        model: TaskModel { standardizer, classifier },
        sets,
        clouds: Splits {
            train: points(&dataset.shapes.train),
            val: points(&dataset.shapes.val),
            test: points(&dataset.shapes.test),
        },
    })
}

/// Query vectors matching the store's construction: the sample feature, plus
/// the pooled positional encoding of the cloud when the store carries one.
pub fn classification_queries(set: &FeatureSet, clouds: Option<&[Vec<Point>]>, store: &PrototypeStore) -> Result<Vec<Vec<f32>>> {
    match (store.encoder(), store.pooling()) {
        (Some(encoder), Some(pooling)) => {
            let clouds = clouds.ok_or(Error::MissingField("point clouds"))?;
            if clouds.len() != set.len() {
                return Err(Error::LengthMismatch {
                    expected: set.len(),
                    found: clouds.len(),
                });
            }
            set.records
                .par_iter()
                .zip(clouds.par_iter())
                .map(|(r, cloud)| Ok(add_encoding(&r.feature, &encoder.global_vector(cloud, pooling)?)))
                .collect()
        }
        _ => Ok(set.records.iter().map(|r| r.feature.clone()).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationEval {
    pub baseline: ClassificationMetrics,
    pub knn: ClassificationMetrics,
    pub fused: ClassificationMetrics,
    pub rectification: RectificationStats,
    pub baseline_preds: Vec<u32>,
    pub knn_preds: Vec<u32>,
    pub fused_preds: Vec<u32>,
}

pub fn evaluate_classification(
    set: &FeatureSet,
    clouds: Option<&[Vec<Point>]>,
    store: &PrototypeStore,
    model: &TaskModel,
    cfg: &KnnConfig,
    gamma: f64,
) -> Result<ClassificationEval> {
    let queries = classification_queries(set, clouds, store)?;
    let logits = model.baseline_logits(set)?;
    let labels: Vec<u32> = set.records.iter().map(|r| r.label).collect();
    let fused = queries
        .par_iter()
        .zip(logits.par_iter())
        .map(|(q, l)| predict_classification(q, store, l, cfg, gamma))
        .collect::<Result<Vec<_>>>()?;
    let b: Vec<usize> = fused.iter().map(|f| f.baseline_argmax()).collect();
    let k: Vec<usize> = fused.iter().map(|f| f.knn_argmax()).collect();
    let f: Vec<usize> = fused.iter().map(|f| f.argmax).collect();
    let as_u32 = |v: &[usize]| v.iter().map(|&x| x as u32).collect::<Vec<_>>();
    let (b32, k32, f32_) = (as_u32(&b), as_u32(&k), as_u32(&f));
    Ok(ClassificationEval {
        baseline: classification_metrics(&b32, &labels)?,
        knn: classification_metrics(&k32, &labels)?,
        fused: classification_metrics(&f32_, &labels)?,
        rectification: rectification_stats(&b, &k, &f, &labels)?,
        baseline_preds: b32,
        knn_preds: k32,
        fused_preds: f32_,
    })
}

/// Grid search of validation OA over (k, gamma).
pub fn sweep_classification(
    set: &FeatureSet,
    clouds: Option<&[Vec<Point>]>,
    store: &PrototypeStore,
    model: &TaskModel,
    k_grid: &[usize],
    gamma_grid: &[f64],
    metric: Metric,
) -> Result<SweepResult> {
    let queries = classification_queries(set, clouds, store)?;
    let logits = model.baseline_logits(set)?;
    let labels: Vec<u32> = set.records.iter().map(|r| r.label).collect();
    sweep(&queries, store, &logits, &labels, k_grid, gamma_grid, metric)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationBench {
    pub model: TaskModel,
    pub sets: Splits<FeatureSet>,
}

/// Per-point feature sets for part segmentation. The point head is trained on
/// every `stride`-th point of each train sample, with the stride chosen so
/// that about `points_per_sample` points per sample are used.
pub fn segmentation_bench(dataset: &ToyDataset, train: TrainConfig, points_per_sample: usize) -> Result<SegmentationBench> {
    let (raw_train, raw_val, raw_test) = per_split(&dataset.segmentation, |clouds: &[LabeledCloud]| {
        clouds.par_iter().map(|c| extract_point_features(&c.points)).collect::<Result<Vec<_>>>()
    })?;
    let strided = |raw: &[Vec<Vec<f64>>]| -> Vec<(usize, usize)> {
        raw.iter()
            .enumerate()
            .flat_map(|(s, rows)| {
                let stride = (rows.len() / points_per_sample.max(1)).max(1);
                (0..rows.len()).step_by(stride).map(move |i| (s, i))
            })
            .collect()
    };
    let fit_rows: Vec<Vec<f64>> = strided(&raw_train).into_iter().map(|(s, i)| raw_train[s][i].clone()).collect();
    let standardizer = Standardizer::fit(&fit_rows)?;
    let build = |clouds: &[LabeledCloud], raw: &[Vec<Vec<f64>>]| -> Result<FeatureSet> {
        let mut set = FeatureSet::new(FeatureKind::Point, POINT_DIM, class_names());
        set.part_names = part_names();
        set.valid_parts = valid_part_map();
        for (cloud, rows) in clouds.iter().zip(raw) {
            set.groups.push(rows.len());
            for ((p, &part), f) in cloud.points.iter().zip(&cloud.parts).zip(rows) {
                let mut record = FeatureRecord::new(0, standardizer.apply(f)?, cloud.class);
                record.part_label = Some(part);
                record.position = Some(*p);
                set.push(record);
            }
        }
        Ok(set)
    };
    let sets = Splits {
        train: build(&dataset.segmentation.train, &raw_train)?,
        val: build(&dataset.segmentation.val, &raw_val)?,
        test: build(&dataset.segmentation.test, &raw_test)?,
    };
    let ranges = sets.train.group_ranges();
    let (x, y): (Vec<&[f32]>, Vec<u32>) = strided(&raw_train)
        .into_iter()
        .map(|(s, i)| {
            let r = &sets.train.records[ranges[s].start + i];
            (r.feature.as_slice(), r.part_label.expect("segmentation records carry parts"))
        })
        .unzip();
    let classifier = train_classifier(&x, &y, part_names().len(), train)?;
    Ok(SegmentationBench {
        model: TaskModel { standardizer, classifier },
        sets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentationMetrics {
    pub instance_miou: f64,
    pub point_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationEval {
    pub baseline: SegmentationMetrics,
    pub knn: SegmentationMetrics,
    pub fused: SegmentationMetrics,
    pub baseline_preds: Vec<u32>,
    pub fused_preds: Vec<u32>,
}

fn part_labels(set: &FeatureSet) -> Result<Vec<u32>> {
    set.records
        .iter()
        .map(|r| r.part_label.ok_or(Error::MissingField("part labels")))
        .collect()
}

fn segmentation_metrics(set: &FeatureSet, ranges: &[Range<usize>], preds: &[u32], truth: &[u32]) -> Result<SegmentationMetrics> {
    let valid = &set.valid_parts;
    let instances = ranges.iter().map(|r| {
        let class = set.records[r.start].label as usize;
        (&preds[r.clone()], &truth[r.clone()], valid.get(class).map_or(&[][..], |v| v.as_slice()))
    });
    let correct = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(SegmentationMetrics {
        instance_miou: mean_instance_iou(instances)?,
        point_accuracy: correct as f64 / truth.len().max(1) as f64,
    })
}

fn checked_ranges(set: &FeatureSet) -> Result<Vec<Range<usize>>> {
    if set.kind != FeatureKind::Point || set.groups.is_empty() {
        return Err(Error::MissingField("groups"));
    }
    let ranges = set.group_ranges();
    if ranges.last().map(|r| r.end) != Some(set.len()) {
        return Err(Error::DimensionMismatch("group sizes do not cover the point records".into()));
    }
    Ok(ranges)
}

/// Point-level fusion per sample. With `scoped`, retrieval for a sample is
/// limited to part prototypes of its object class.
pub fn evaluate_segmentation(
    set: &FeatureSet,
    store: &PrototypeStore,
    model: &TaskModel,
    cfg: &KnnConfig,
    gamma: f64,
    scoped: bool,
) -> Result<SegmentationEval> {
    let ranges = checked_ranges(set)?;
    let truth = part_labels(set)?;
    let logits = model.baseline_logits(set)?;
    let mut b = Vec::with_capacity(set.len());
    let mut k = Vec::with_capacity(set.len());
    let mut f = Vec::with_capacity(set.len());
    for range in &ranges {
        let features: Vec<&[f32]> = set.records[range.clone()].iter().map(|r| r.feature.as_slice()).collect();
        let scope = scoped.then(|| set.records[range.start].label);
        let fused = predict_segmentation(&features, store, &logits[range.clone()], cfg, gamma, scope)?;
        for p in fused {
            b.push(p.baseline_argmax() as u32);
            k.push(p.knn_argmax() as u32);
            f.push(p.argmax as u32);
        }
    }
    Ok(SegmentationEval {
        baseline: segmentation_metrics(set, &ranges, &b, &truth)?,
        knn: segmentation_metrics(set, &ranges, &k, &truth)?,
        fused: segmentation_metrics(set, &ranges, &f, &truth)?,
        baseline_preds: b,
        fused_preds: f,
    })
}

/// Grid search of validation instance mIoU over (k, gamma).
pub fn sweep_segmentation(
    set: &FeatureSet,
    store: &PrototypeStore,
    model: &TaskModel,
    k_grid: &[usize],
    gamma_grid: &[f64],
    metric: Metric,
    scoped: bool,
) -> Result<SweepResult> {
    let ranges = checked_ranges(set)?;
    let truth = part_labels(set)?;
    let logits = model.baseline_logits(set)?;
    let max_k = k_grid.iter().copied().max().ok_or(Error::Empty("k grid"))?;
    let base = KnnConfig::new(max_k, metric);
    let mut neighbors: Vec<NeighborList> = Vec::with_capacity(set.len());
    for range in &ranges {
        let cfg = base.clone().with_scope(scoped.then(|| set.records[range.start].label));
        if let Some(class) = cfg.scope {
            if !store.labels().contains(&class) {
                return Err(Error::ScopeClassAbsent(class));
            }
        }
        let queries: Vec<&[f32]> = set.records[range.clone()].iter().map(|r| r.feature.as_slice()).collect();
        neighbors.extend(knn_batch(&queries, store, &cfg)?);
    }
    let num_parts = logits.first().map_or(0, Vec::len);
    sweep_grid("mIoU_I", k_grid, gamma_grid, |k, gamma| {
        let cfg = base.clone().with_k(k);
        let preds = neighbors
            .iter()
            .zip(&logits)
            .map(|(n, l)| {
                let probs = class_probabilities(&n.prefix(k), store, num_parts, &cfg)?;
                Ok(fuse(l, &probs, gamma)?.argmax as u32)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(segmentation_metrics(set, &ranges, &preds, &truth)?.instance_miou)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBench {
    pub model: TaskModel,
    /// Ground-truth objects of the train scenes, positioned at their box centres.
    pub train_objects: FeatureSet,
    pub scenes: Splits<Vec<Scene>>,
}

const PROPOSAL_STREAM: u64 = 4;

struct RawProposal {
    center: [f64; 3],
    size: [f64; 3],
    feature: Vec<f64>,
    class: u32,
    /// Wrong class and the margin by which it is pushed above the top logit.
    confusion: Option<(u32, f64)>,
}

fn subset_features<R: Rng>(points: &[Point], fraction: f64, rng: &mut R) -> Result<Vec<f64>> {
    let take = ((points.len() as f64 * fraction).ceil() as usize).clamp(MIN_POINTS.min(points.len()), points.len());
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.shuffle(rng);
    idx.truncate(take);
    idx.sort_unstable();
    let subset: Vec<Point> = idx.into_iter().map(|i| points[i]).collect();
    extract_features(&subset)
}

fn jittered_box<R: Rng>(object: &SceneObject, sigma: f64, rng: &mut R) -> ([f64; 3], [f64; 3]) {
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let center = std::array::from_fn(|a| object.center[a] + normal.sample(rng) * object.size[a]);
    let size = std::array::from_fn(|a| object.size[a] * (1.0 + normal.sample(rng)).max(0.5));
    (center, size)
}

/// Per object: one tight proposal from most of its points, one or two looser
/// duplicates from partial views, and sometimes a decoy whose logits favour
/// a wrong class.
fn synthesize(layout: &SceneLayout, seed: u64, split: u64, num_classes: u32) -> Result<Vec<RawProposal>> {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, PROPOSAL_STREAM, split, layout.id as u64));
    let mut out = Vec::new();
    for object in &layout.objects {
        let (center, size) = jittered_box(object, 0.03, &mut rng);
        out.push(RawProposal {
            center,
            size,
            feature: subset_features(&object.points, 0.9, &mut rng)?,
            class: object.class,
            confusion: None,
        });
        for _ in 0..rng.random_range(1..=2) {
            let (center, size) = jittered_box(object, 0.1, &mut rng);
            out.push(RawProposal {
                center,
                size,
                feature: subset_features(&object.points, 0.6, &mut rng)?,
                class: object.class,
                confusion: None,
            });
        }
        if rng.random_bool(0.5) {
            let (center, size) = jittered_box(object, 0.1, &mut rng);
            let wrong = (object.class + rng.random_range(1..num_classes)) % num_classes;
            out.push(RawProposal {
                center,
                size,
                feature: subset_features(&object.points, 0.6, &mut rng)?,
                class: object.class,
                confusion: Some((wrong, rng.random_range(0.5..2.5))),
            });
        }
    }
    Ok(out)
}

pub fn detection_bench(dataset: &ToyDataset, train: TrainConfig) -> Result<DetectionBench> {
    let num_classes = class_names().len() as u32;
    let seed = dataset.config.seed;
    let raw_split = |split: u64, layouts: &[SceneLayout]| -> Result<Vec<Vec<RawProposal>>> {
        layouts.par_iter().map(|l| synthesize(l, seed, split, num_classes)).collect()
    };
    let raw = [
        raw_split(0, &dataset.scenes.train)?,
        raw_split(1, &dataset.scenes.val)?,
        raw_split(2, &dataset.scenes.test)?,
    ];
    let fit_rows: Vec<Vec<f64>> = raw[0].iter().flatten().map(|p| p.feature.clone()).collect();
    let standardizer = Standardizer::fit(&fit_rows)?;
    let train_x: Vec<Vec<f32>> = fit_rows.iter().map(|f| standardizer.apply(f)).collect::<Result<_>>()?;
    let train_y: Vec<u32> = raw[0].iter().flatten().map(|p| p.class).collect();
    let classifier = train_classifier(&train_x, &train_y, num_classes as usize, train)?;
    let model = TaskModel { standardizer, classifier };

    let to_scenes = |layouts: &[SceneLayout], raw: &[Vec<RawProposal>]| -> Result<Vec<Scene>> {
        layouts
            .iter()
            .zip(raw)
            .map(|(layout, raw)| {
                let proposals = raw
                    .iter()
                    .map(|p| {
                        let feature = model.standardizer.apply(&p.feature)?;
                        let mut logits = model.logits(&feature)?;
                        if let Some((wrong, margin)) = p.confusion {
                            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            logits[wrong as usize] = top + margin;
                        }
                        let (class, score) = class_and_score(&logits);
                        Ok(Proposal {
                            bbox: Box3D::new(p.center, p.size, class, score)?,
                            feature,
                            logits,
                            position: p.center.map(|v| v as f32),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let ground_truth = layout
                    .objects
                    .iter()
                    .map(|o| Box3D::new(o.center, o.size, o.class, 1.0))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Scene {
                    id: layout.id,
                    proposals,
                    ground_truth,
                })
            })
            .collect()
    };
    let scenes = Splits {
        train: to_scenes(&dataset.scenes.train, &raw[0])?,
        val: to_scenes(&dataset.scenes.val, &raw[1])?,
        test: to_scenes(&dataset.scenes.test, &raw[2])?,
    };

    let mut train_objects = FeatureSet::new(FeatureKind::Object, GLOBAL_DIM, class_names());
    let objects: Vec<&SceneObject> = dataset.scenes.train.iter().flat_map(|l| &l.objects).collect();
    let features = objects
        .par_iter()
        .map(|o| extract_features(&o.points).and_then(|f| model.standardizer.apply(&f)))
        .collect::<Result<Vec<_>>>()?;
    for (object, feature) in objects.iter().zip(features) {
        let mut record = FeatureRecord::new(0, feature, object.class);
        record.position = Some(object.center.map(|v| v as f32));
        train_objects.push(record);
    }
    Ok(DetectionBench {
        model,
        train_objects,
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionEval {
    pub baseline: DetectionMetrics,
    pub knn: DetectionMetrics,
    pub before_nms: DetectionMetrics,
    pub after_nms: DetectionMetrics,
}

fn score_scenes<F>(scenes: &[Scene], num_classes: usize, iou_threshold: f64, run: F) -> Result<DetectionMetrics>
where
    F: Fn(&Scene) -> Result<Vec<Box3D>> + Sync,
{
    let pairs = scenes
        .par_iter()
        .map(|s| Ok((run(s)?, s.ground_truth.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_detection(&pairs, num_classes, iou_threshold))
}

/// Baseline, retrieval-only and fused detection scores with both placements.
/// The retrieval-only column ranks proposals by the retrieval vote alone.
pub fn evaluate_detection_scenes(
    scenes: &[Scene],
    store: &PrototypeStore,
    cfg: &KnnConfig,
    gamma: f64,
    nms: &NmsConfig,
    iou_threshold: f64,
) -> Result<DetectionEval> {
    let num_classes = store.class_names().len();
    let fused = |placement| {
        score_scenes(scenes, num_classes, iou_threshold, |s| {
            run_detection_pipeline(&s.proposals, store, cfg, gamma, placement, nms)
        })
    };
    Ok(DetectionEval {
        baseline: score_scenes(scenes, num_classes, iou_threshold, |s| Ok(run_baseline_pipeline(&s.proposals, nms)))?,
        knn: score_scenes(scenes, num_classes, iou_threshold, |s| {
            let blind: Vec<Proposal> = s
                .proposals
                .iter()
                .map(|p| Proposal {
                    logits: vec![0.0; p.logits.len()],
                    ..p.clone()
                })
                .collect();
            run_detection_pipeline(&blind, store, cfg, 1.0, Placement::BeforeNms, nms)
        })?,
        before_nms: fused(Placement::BeforeNms)?,
        after_nms: fused(Placement::AfterNms)?,
    })
}

/// Grid search of validation mAP over (k, gamma) for one placement.
pub fn sweep_detection(
    scenes: &[Scene],
    store: &PrototypeStore,
    k_grid: &[usize],
    gamma_grid: &[f64],
    metric: Metric,
    placement: Placement,
    nms: &NmsConfig,
    iou_threshold: f64,
) -> Result<SweepResult> {
    let num_classes = store.class_names().len();
    sweep_grid("mAP", k_grid, gamma_grid, |k, gamma| {
        let cfg = KnnConfig::new(k, metric);
        let m = score_scenes(scenes, num_classes, iou_threshold, |s| {
            run_detection_pipeline(&s.proposals, store, &cfg, gamma, placement, nms)
        })?;
        Ok(m.mean_ap)
    })
}
