//! Axis-aligned 3D boxes, class-wise NMS, AP/AR evaluation and the placement
//! of retrieval fusion relative to NMS.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{argmax, predict_detection, FusedPrediction};
use crate::prototypes::PrototypeStore;
use crate::retrieval::KnnConfig;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub class: u32,
    #[serde(default)]
    pub score: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], class: u32, score: f64) -> Result<Self> {
        let b = Self { center, size, class, score };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("box extents must be positive, got {:?}", self.size)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    fn bounds(&self, axis: usize) -> (f64, f64) {
        let half = self.size[axis] / 2.0;
        (self.center[axis] - half, self.center[axis] + half)
    }
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let mut inter = 1.0;
    for axis in 0..3 {
        let (a0, a1) = a.bounds(axis);
        let (b0, b1) = b.bounds(axis);
        let overlap = a1.min(b1) - a0.max(b0);
        if overlap <= 0.0 {
            return 0.0;
        }
        inter *= overlap;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub feature: Vec<f32>,
    pub logits: Vec<f64>,
    pub position: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u32,
    pub proposals: Vec<Proposal>,
    pub ground_truth: Vec<Box3D>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Predicted class and its softmax probability.
pub fn class_and_score(logits: &[f64]) -> (u32, f64) {
    let class = argmax(logits);
    (class as u32, softmax(logits)[class])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    pub class_wise: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            class_wise: true,
        }
    }
}

/// Greedy NMS. Returns indices of kept boxes in descending score order
/// (ties by index).
pub fn nms3d(boxes: &[Box3D], cfg: &NmsConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&j| {
            (!cfg.class_wise || boxes[j].class == boxes[i].class) && iou3d(&boxes[i], &boxes[j]) > cfg.iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassDetectionMetrics {
    pub class: u32,
    pub num_ground_truth: usize,
    pub ap: f64,
    pub ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub per_class: Vec<ClassDetectionMetrics>,
    /// Means over classes with at least one ground truth.
    pub mean_ap: f64,
    pub mean_ar: f64,
}

/// Per-class AP (all-point interpolated) and AR at an IoU threshold.
///
/// `scenes` pairs each scene's detections with its ground truths; matching
/// never crosses scenes.
pub fn evaluate_detection(scenes: &[(Vec<Box3D>, Vec<Box3D>)], num_classes: usize, iou_threshold: f64) -> DetectionMetrics {
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes as u32 {
        let num_gt: usize = scenes
            .iter()
            .map(|(_, gts)| gts.iter().filter(|g| g.class == class).count())
            .sum();
        let mut dets: Vec<(usize, usize, f64)> = scenes
            .iter()
            .enumerate()
            .flat_map(|(s, (dets, _))| {
                dets.iter()
                    .enumerate()
                    .filter(|(_, d)| d.class == class)
                    .map(move |(i, d)| (s, i, d.score))
            })
            .collect();
        dets.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        let mut matched: Vec<Vec<bool>> = scenes.iter().map(|(_, g)| vec![false; g.len()]).collect();
        let mut tp_flags = Vec::with_capacity(dets.len());
        for &(s, i, _) in &dets {
            let det = &scenes[s].0[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in scenes[s].1.iter().enumerate() {
                if gt.class != class || matched[s][g] {
                    continue;
                }
                let iou = iou3d(det, gt);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                matched[s][g] = true;
            }
            tp_flags.push(best.is_some());
        }

        let true_positives = tp_flags.iter().filter(|&&t| t).count();
        let (ap, ar) = if num_gt == 0 {
            (0.0, 0.0)
        } else {
            (average_precision(&tp_flags, num_gt), true_positives as f64 / num_gt as f64)
        };
        per_class.push(ClassDetectionMetrics {
            class,
            num_ground_truth: num_gt,
            ap,
            ar,
        });
    }
    let present: Vec<&ClassDetectionMetrics> = per_class.iter().filter(|c| c.num_ground_truth > 0).collect();
    let mean = |f: fn(&ClassDetectionMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64
        }
    };
    DetectionMetrics {
        mean_ap: mean(|c| c.ap),
        mean_ar: mean(|c| c.ar),
        per_class,
    }
}

/// Area under the precision envelope, summed at each recall step.
fn average_precision(tp_flags: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut previous_recall = 0.0;
    for (r, p) in recall.into_iter().zip(precision) {
        if r > previous_recall {
            ap += (r - previous_recall) * p;
            previous_recall = r;
        }
    }
    ap
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    BeforeNms,
    AfterNms,
}

fn rescored(bbox: &Box3D, logits: &[f64]) -> Box3D {
    let (class, score) = class_and_score(logits);
    Box3D { class, score, ..*bbox }
}

fn fuse_proposals(
    proposals: &[&Proposal],
    store: &PrototypeStore,
    cfg: &KnnConfig,
    gamma: f64,
) -> Result<Vec<FusedPrediction>> {
    let encoding = store.encoding().ok_or(Error::MissingField("store encoding"))?;
    let features: Vec<&[f32]> = proposals.iter().map(|p| p.feature.as_slice()).collect();
    let positions: Vec<[f32; 3]> = proposals.iter().map(|p| p.position).collect();
    let logits: Vec<Vec<f64>> = proposals.iter().map(|p| p.logits.clone()).collect();
    predict_detection(&features, &positions, &logits, store, cfg, gamma, encoding)
}

/// Scores one scene's proposals with retrieval fusion either before NMS
/// (fused scores drive suppression) or after it (fusion only rescores the
/// survivors of baseline NMS).
pub fn run_detection_pipeline(
    proposals: &[Proposal],
    store: &PrototypeStore,
    cfg: &KnnConfig,
    gamma: f64,
    placement: Placement,
    nms: &NmsConfig,
) -> Result<Vec<Box3D>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    match placement {
        Placement::BeforeNms => {
            let refs: Vec<&Proposal> = proposals.iter().collect();
            let fused = fuse_proposals(&refs, store, cfg, gamma)?;
            let boxes: Vec<Box3D> = proposals
                .iter()
                .zip(&fused)
                .map(|(p, f)| rescored(&p.bbox, &f.fused))
                .collect();
            Ok(nms3d(&boxes, nms).into_iter().map(|i| boxes[i]).collect())
        }
        Placement::AfterNms => {
            let boxes: Vec<Box3D> = proposals.iter().map(|p| rescored(&p.bbox, &p.logits)).collect();
            let kept = nms3d(&boxes, nms);
            let survivors: Vec<&Proposal> = kept.iter().map(|&i| &proposals[i]).collect();
            let fused = fuse_proposals(&survivors, store, cfg, gamma)?;
            Ok(survivors
                .iter()
                .zip(&fused)
                .map(|(p, f)| rescored(&p.bbox, &f.fused))
                .collect())
        }
    }
}

/// Baseline-only pipeline: NMS on the proposals' own logits.
pub fn run_baseline_pipeline(proposals: &[Proposal], nms: &NmsConfig) -> Vec<Box3D> {
    let boxes: Vec<Box3D> = proposals.iter().map(|p| rescored(&p.bbox, &p.logits)).collect();
    nms3d(&boxes, nms).into_iter().map(|i| boxes[i]).collect()
}

pub fn write_scenes(scenes: &[Scene], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for scene in scenes {
        serde_json::to_writer(&mut out, scene)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line)?;
        for b in scene.proposals.iter().map(|p| &p.bbox).chain(&scene.ground_truth) {
            b.validate()?;
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{add_encoding, encode_position, EncodingSpec, PositionalEncoder};
    use crate::prototypes::StoreKind;
    use crate::retrieval::Metric;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(x: f64, y: f64, z: f64, class: u32, score: f64) -> Box3D {
        Box3D::new([x, y, z], [1.0; 3], class, score).unwrap()
    }

    #[test]
    fn iou_closed_forms() {
        let a = cube(0.0, 0.0, 0.0, 0, 1.0);
        assert_eq!(iou3d(&a, &a), 1.0);
        assert_eq!(iou3d(&a, &cube(3.0, 0.0, 0.0, 0, 1.0)), 0.0);
        let shifted = iou3d(&a, &cube(0.5, 0.0, 0.0, 0, 1.0));
        assert!((shifted - 1.0 / 3.0).abs() < 1e-15);
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0, 0.0).is_err());
    }

    #[test]
    fn nms_single_and_duplicate() {
        assert_eq!(nms3d(&[cube(0.0, 0.0, 0.0, 0, 0.1)], &NmsConfig::default()), vec![0]);
        let dup = [cube(0.0, 0.0, 0.0, 1, 0.8), cube(0.0, 0.0, 0.0, 1, 0.9)];
        assert_eq!(nms3d(&dup, &NmsConfig::default()), vec![1]);
        let other_class = [cube(0.0, 0.0, 0.0, 1, 0.8), cube(0.0, 0.0, 0.0, 2, 0.9)];
        assert_eq!(nms3d(&other_class, &NmsConfig::default()), vec![1, 0]);
        let agnostic = NmsConfig { class_wise: false, ..Default::default() };
        assert_eq!(nms3d(&other_class, &agnostic), vec![1]);
    }

    fn greedy_oracle(boxes: &[Box3D], thr: f64) -> Vec<usize> {
        // repeatedly take the best remaining box and drop its same-class overlaps
        let mut alive: Vec<usize> = (0..boxes.len()).collect();
        let mut kept = Vec::new();
        while !alive.is_empty() {
            let mut best = alive[0];
            for &i in &alive {
                if boxes[i].score > boxes[best].score || (boxes[i].score == boxes[best].score && i < best) {
                    best = i;
                }
            }
            kept.push(best);
            alive.retain(|&i| i != best && !(boxes[i].class == boxes[best].class && iou3d(&boxes[i], &boxes[best]) > thr));
        }
        kept
    }

    #[test]
    fn nms_matches_greedy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let centres = [[0.0, 0.0, 0.0], [2.0, 1.0, 0.0], [0.5, 3.0, 0.5]];
        for _ in 0..50 {
            let boxes: Vec<Box3D> = (0..20)
                .map(|_| {
                    let c = centres[rng.random_range(0..3)];
                    Box3D::new(
                        [c[0] + rng.random_range(-0.4..0.4), c[1] + rng.random_range(-0.4..0.4), c[2]],
                        [rng.random_range(0.5..1.5), rng.random_range(0.5..1.5), 1.0],
                        rng.random_range(0..2),
                        rng.random(),
                    )
                    .unwrap()
                })
                .collect();
            assert_eq!(nms3d(&boxes, &NmsConfig::default()), greedy_oracle(&boxes, 0.25));
        }
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts = vec![cube(0.0, 0.0, 0.0, 0, 0.0), cube(5.0, 0.0, 0.0, 1, 0.0)];
        let dets: Vec<Box3D> = gts.iter().map(|g| Box3D { score: 1.0, ..*g }).collect();
        let m = evaluate_detection(&[(dets, gts)], 3, 0.25);
        assert_eq!((m.mean_ap, m.mean_ar), (1.0, 1.0));
        assert_eq!(m.per_class[2].num_ground_truth, 0);
    }

    #[test]
    fn no_detections_score_zero() {
        let m = evaluate_detection(&[(vec![], vec![cube(0.0, 0.0, 0.0, 0, 0.0)])], 1, 0.25);
        assert_eq!((m.mean_ap, m.mean_ar), (0.0, 0.0));
    }

    #[test]
    fn hand_computed_pr_curve() {
        // two ground truths; detections ranked hit, miss, hit.
        // PR points: (R .5, P 1), (R .5, P .5), (R 1, P 2/3)
        // envelope: P=1 up to R=.5, P=2/3 up to R=1 -> AP = .5 + .5*2/3 = 5/6
        let gts = vec![cube(0.0, 0.0, 0.0, 0, 0.0), cube(4.0, 0.0, 0.0, 0, 0.0)];
        let dets = vec![cube(0.0, 0.0, 0.0, 0, 0.9), cube(9.0, 9.0, 0.0, 0, 0.8), cube(4.1, 0.0, 0.0, 0, 0.7)];
        let m = evaluate_detection(&[(dets, gts)], 1, 0.25);
        assert!((m.mean_ap - 5.0 / 6.0).abs() <= f64::EPSILON);
        assert_eq!(m.mean_ar, 1.0);
    }

    #[test]
    fn softmax_score_is_max_probability() {
        let (class, score) = class_and_score(&[1.0, 3.0, 0.0]);
        assert_eq!(class, 1);
        let e = [1f64.exp(), 3f64.exp(), 1.0];
        assert!((score - e[1] / e.iter().sum::<f64>()).abs() < 1e-15);
    }

    /// Two overlapping objects of different classes; the baseline labels both
    /// as class 0, retrieval recognises the second one.
    pub(crate) fn two_proposal_scene() -> (Vec<Proposal>, Vec<Box3D>, PrototypeStore) {
        let spec = EncodingSpec::sincos(6);
        let fa = vec![1.0f32, 0.0, 0.0, 0.0, 0.0, 0.0];
        let fb = vec![0.0f32, 0.0, 0.0, 5.0, 0.0, 0.0];
        let (pa, pb) = ([0.0f32, 0.0, 0.0], [0.2f32, 0.0, 0.0]);
        let rows = vec![
            (add_encoding(&fa, &encode_position(pa, &spec).unwrap()), 0),
            (add_encoding(&fb, &encode_position(pb, &spec).unwrap()), 1),
        ];
        let store = PrototypeStore::from_rows(StoreKind::Object, 6, rows, vec!["a".into(), "b".into()])
            .unwrap()
            .with_encoder(PositionalEncoder::new(spec).unwrap());
        let proposals = vec![
            Proposal { bbox: cube(0.0, 0.0, 0.0, 0, 0.0), feature: fa, logits: vec![3.0, 0.0], position: pa },
            Proposal { bbox: cube(0.2, 0.0, 0.0, 0, 0.0), feature: fb, logits: vec![2.0, 1.5], position: pb },
        ];
        let gts = vec![cube(0.0, 0.0, 0.0, 0, 0.0), cube(0.2, 0.0, 0.0, 1, 0.0)];
        (proposals, gts, store)
    }

    #[test]
    fn fusion_before_nms_keeps_the_true_box() {
        let (proposals, gts, store) = two_proposal_scene();
        let cfg = KnnConfig::new(1, Metric::Euclidean);
        let nms = NmsConfig::default();
        let before = run_detection_pipeline(&proposals, &store, &cfg, 8.0, Placement::BeforeNms, &nms).unwrap();
        let after = run_detection_pipeline(&proposals, &store, &cfg, 8.0, Placement::AfterNms, &nms).unwrap();
        assert_eq!(before.len(), 2);
        assert_eq!(after.len(), 1);
        assert_eq!(after[0].class, 0);
        let ar = |d: Vec<Box3D>| evaluate_detection(&[(d, gts.clone())], 2, 0.25).mean_ar;
        assert_eq!(ar(before), 1.0);
        assert_eq!(ar(after), 0.5);
    }

    #[test]
    fn zero_gamma_placements_equal_baseline() {
        let (proposals, _, store) = two_proposal_scene();
        let cfg = KnnConfig::new(1, Metric::Euclidean);
        let nms = NmsConfig::default();
        let baseline = run_baseline_pipeline(&proposals, &nms);
        for placement in [Placement::BeforeNms, Placement::AfterNms] {
            assert_eq!(run_detection_pipeline(&proposals, &store, &cfg, 0.0, placement, &nms).unwrap(), baseline);
        }
    }

    #[test]
    fn duplicate_proposal_is_one_hot_on_its_prototype() {
        let (proposals, _, store) = two_proposal_scene();
        let cfg = KnnConfig::new(2, Metric::Euclidean);
        let spec = store.encoding().unwrap().clone();
        let f = predict_detection(&[proposals[1].feature.clone()], &[proposals[1].position], &[proposals[1].logits.clone()], &store, &cfg, 8.0, &spec).unwrap();
        assert!(f[0].knn_probs[1] > 1.0 - 1e-9);
        let other = EncodingSpec::fourier(6, 0, 1.0);
        assert!(matches!(
            predict_detection(&[proposals[1].feature.clone()], &[proposals[1].position], &[proposals[1].logits.clone()], &store, &cfg, 8.0, &other),
            Err(Error::EncodingMismatch)
        ));
    }

    #[test]
    fn scenes_round_trip_through_jsonl() {
        let (proposals, gts, _) = two_proposal_scene();
        let scenes = vec![Scene { id: 0, proposals, ground_truth: gts }, Scene { id: 1, proposals: vec![], ground_truth: vec![] }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_scenes(&scenes, &path).unwrap();
        assert_eq!(read_scenes(&path).unwrap(), scenes);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = || Box3D::new(
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)], 0, 0.0).unwrap();
            let (x, y) = (b(), b());
            let v = iou3d(&x, &y);
            prop_assert_eq!(v, iou3d(&y, &x));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((iou3d(&x, &x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_shrinks_with_translation(step in 0.01f64..0.5, axis in 0usize..3) {
            let a = cube(0.0, 0.0, 0.0, 0, 0.0);
            let mut last = 1.0;
            for i in 1..20 {
                let mut c = a.center;
                c[axis] += step * i as f64;
                let v = iou3d(&a, &Box3D { center: c, ..a });
                prop_assert!(v <= last);
                last = v;
            }
        }

        #[test]
        fn nms_output_has_no_overlapping_same_class_pair(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let boxes: Vec<Box3D> = (0..15).map(|_| Box3D::new(
                [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), 0.0], [1.0, 1.0, 1.0],
                rng.random_range(0..2), rng.random()).unwrap()).collect();
            let kept = nms3d(&boxes, &NmsConfig::default());
            for (n, &i) in kept.iter().enumerate() {
                for &j in &kept[n + 1..] {
                    prop_assert!(boxes[i].class != boxes[j].class || iou3d(&boxes[i], &boxes[j]) <= 0.25);
                }
            }
        }

        #[test]
        fn ap_and_ar_lie_in_unit_interval(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut random_box = |score: bool| Box3D::new(
                [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), 0.0], [1.0, 1.0, 1.0],
                rng.random_range(0..3), if score { rng.random() } else { 0.0 }).unwrap();
            let gts: Vec<Box3D> = (0..5).map(|_| random_box(false)).collect();
            let dets: Vec<Box3D> = (0..8).map(|_| random_box(true)).collect();
            let m = evaluate_detection(&[(dets, gts)], 3, 0.25);
            for c in &m.per_class {
                prop_assert!((0.0..=1.0).contains(&c.ap) && (0.0..=1.0).contains(&c.ar));
            }
        }
    }
}
