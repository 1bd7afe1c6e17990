//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::panic;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use protoknn::detection::{
    evaluate_detection, run_baseline_pipeline, run_detection_pipeline, Box3D, NmsConfig, Placement, Proposal,
};
use protoknn::encoding::{add_encoding, encode_position, EncodingSpec, PositionalEncoder, Pooling};
use protoknn::feature_store::{load_feature_set, FeatureKind, FeatureRecord, FeatureSet};
use protoknn::fusion::predict_classification;
use protoknn::prototypes::{
    build_object_prototypes, build_part_prototypes, build_sample_prototypes, load_store, PrototypeStore, StoreKind,
};
use protoknn::retrieval::{
    class_probabilities, find_epsilon_star, knn, KnnConfig, Metric, Neighbor, NeighborList, RegionDiagnostics,
};
use protoknn::toybench::bench::classification_queries;
use protoknn::toybench::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn());

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 knn matches brute-force oracle", knn_oracle),
        ("2 inverse-distance vote properties", vote_properties),
        ("3 zero gamma reproduces baseline", zero_gamma_identity),
        ("4 part pooling matches oracle means", part_pooling_oracle),
        ("5 end-to-end classification demo", classification_demo),
        ("6 detection placement and AP", detection_mechanics),
        ("7 purity, coverage and epsilon star", purity_coverage),
        ("8 deterministic CLI and bitwise files", determinism),
        ("9 classifier gradient check", gradient_check),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(run);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS  criterion {name} ({secs:.1}s)"),
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  criterion {name} ({secs:.1}s): {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn store_from(rows: Vec<(Vec<f32>, u32)>, num_classes: usize) -> PrototypeStore {
    let dim = rows[0].0.len();
    PrototypeStore::from_rows(StoreKind::Sample, dim, rows, names(num_classes)).unwrap()
}

/// Reference distances written out term by term.
fn oracle_distance(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    let mut acc = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        match metric {
            Metric::Euclidean => acc += (x - y) * (x - y),
            Metric::Manhattan => acc += (x - y).abs(),
            Metric::Chebyshev => {
                if (x - y).abs() > acc {
                    acc = (x - y).abs();
                }
            }
            Metric::Hamming => {
                if x != y {
                    acc += 1.0;
                }
            }
            Metric::Canberra => {
                if x.abs() + y.abs() > 0.0 {
                    acc += (x - y).abs() / (x.abs() + y.abs());
                }
            }
            Metric::BrayCurtis => {
                acc += (x - y).abs();
                den += (x + y).abs();
            }
        }
    }
    match metric {
        Metric::Euclidean => acc.sqrt(),
        Metric::BrayCurtis if den == 0.0 => 0.0,
        Metric::BrayCurtis => acc / den,
        _ => acc,
    }
}

fn knn_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let rows = rng.random_range(1..=5000);
        let dim = rng.random_range(1..=128);
        let metric = Metric::ALL[case % Metric::ALL.len()];
        let classes = rng.random_range(1..=10);
        // every third case draws from a handful of levels so ties are common
        let quantized = case % 3 == 0;
        let value = |rng: &mut ChaCha8Rng| -> f32 {
            if quantized {
                rng.random_range(-2..=2) as f32 * 0.5
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        };
        let data: Vec<(Vec<f32>, u32)> = (0..rows)
            .map(|_| ((0..dim).map(|_| value(&mut rng)).collect(), rng.random_range(0..classes)))
            .collect();
        let query: Vec<f32> = (0..dim).map(|_| value(&mut rng)).collect();
        let k = rng.random_range(1..=rows.min(64));
        let store = store_from(data.clone(), classes as usize);
        let got = knn(&query, &store, &KnnConfig::new(k, metric)).unwrap();

        let mut all: Vec<(f64, usize)> = data.iter().enumerate().map(|(i, (v, _))| (oracle_distance(&query, v, metric), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        assert_eq!(got.len(), k, "case {case}: length");
        for (n, (d, i)) in got.entries().iter().zip(&all) {
            assert_eq!(n.row, *i, "case {case} ({metric:?}, R={rows}, C={dim}, k={k}): index");
            assert!((n.distance - d).abs() <= 1e-9 * d.abs().max(1e-300), "case {case}: distance");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
}

fn vote_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let classes = 7;
    let labels: Vec<(Vec<f32>, u32)> = (0..50).map(|i| (vec![i as f32], rng.random_range(0..classes))).collect();
    let store = store_from(labels, classes as usize);
    let cfg = KnnConfig::new(1, Metric::Euclidean);
    let list = |rng: &mut ChaCha8Rng, len: usize, min: f64| -> Vec<Neighbor> {
        let mut d: Vec<f64> = (0..len).map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(min..10.0) }).collect();
        d.sort_by(f64::total_cmp);
        d.into_iter().map(|distance| Neighbor { row: rng.random_range(0..50), distance }).collect()
    };
    for _ in 0..1000 {
        let len = rng.random_range(1..=32);
        let p = class_probabilities(&NeighborList::from_entries(list(&mut rng, len, 0.0)), &store, classes as usize, &cfg).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    for _ in 0..100 {
        let n = list(&mut rng, 1, 0.0);
        let p = class_probabilities(&NeighborList::from_entries(n.clone()), &store, classes as usize, &cfg).unwrap();
        let label = store.label(n[0].row) as usize;
        for (c, v) in p.iter().enumerate() {
            assert_eq!(*v, if c == label { 1.0 } else { 0.0 });
        }
    }

    let pair = store_from(vec![(vec![0.0], 0), (vec![1.0], 1)], 2);
    let worked = NeighborList::from_entries(vec![Neighbor { row: 0, distance: 1.0 }, Neighbor { row: 1, distance: 3.0 }]);
    assert_eq!(class_probabilities(&worked, &pair, 2, &cfg).unwrap(), vec![0.75, 0.25]);

    for _ in 0..200 {
        let len = rng.random_range(1..=32);
        let base = list(&mut rng, len, 1e-3).into_iter().map(|n| Neighbor { distance: n.distance.max(1e-3), ..n }).collect::<Vec<_>>();
        let reference = class_probabilities(&NeighborList::from_entries(base.clone()), &store, classes as usize, &cfg).unwrap();
        for lambda in [0.01, 1.0, 100.0] {
            let scaled = base.iter().map(|n| Neighbor { distance: n.distance * lambda, ..*n }).collect();
            let p = class_probabilities(&NeighborList::from_entries(scaled), &store, classes as usize, &cfg).unwrap();
            assert!(p.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= 1e-9), "lambda {lambda}");
        }
    }
}

fn toy_dataset() -> &'static ToyDataset {
    static DATA: OnceLock<ToyDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        generate_dataset(&DatasetConfig {
            seed: 47,
            ..Default::default()
        })
        .unwrap()
    })
}

fn zero_gamma_identity() {
    let ds = toy_dataset();
    let spec = EncodingSpec::sincos(GLOBAL_DIM);

    let cls = classification_bench(ds, TrainConfig::default()).unwrap();
    let store = build_sample_prototypes(&cls.sets.train, Some(&cls.clouds.train), Some(&spec), Pooling::Max).unwrap();
    let cfg = KnnConfig::new(21, Metric::Euclidean);
    let e = evaluate_classification(&cls.sets.test, Some(&cls.clouds.test), &store, &cls.model, &cfg, 0.0).unwrap();
    assert_eq!(e.fused_preds, e.baseline_preds);
    let queries = classification_queries(&cls.sets.test, Some(&cls.clouds.test), &store).unwrap();
    for (q, r) in queries.iter().zip(&cls.sets.test.records) {
        let logits = cls.model.logits(&r.feature).unwrap();
        let fused = predict_classification(q, &store, &logits, &cfg, 0.0).unwrap();
        assert!(fused.fused.iter().zip(&logits).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    let seg = segmentation_bench(ds, TrainConfig::default(), 32).unwrap();
    let parts = build_part_prototypes(&seg.sets.train).unwrap();
    for scoped in [true, false] {
        let e = evaluate_segmentation(&seg.sets.test, &parts, &seg.model, &KnnConfig::new(1, Metric::Euclidean), 0.0, scoped).unwrap();
        assert_eq!(e.fused_preds, e.baseline_preds);
    }

    let det = detection_bench(ds, TrainConfig::default()).unwrap();
    let objects = build_object_prototypes(&det.train_objects, &spec).unwrap();
    let nms = NmsConfig::default();
    for scene in &det.scenes.test {
        let baseline = run_baseline_pipeline(&scene.proposals, &nms);
        for placement in [Placement::BeforeNms, Placement::AfterNms] {
            let fused = run_detection_pipeline(&scene.proposals, &objects, &KnnConfig::new(32, Metric::Euclidean), 0.0, placement, &nms).unwrap();
            assert_eq!(fused.len(), baseline.len());
            for (a, b) in fused.iter().zip(&baseline) {
                assert_eq!((a.class, a.score.to_bits()), (b.class, b.score.to_bits()));
                assert_eq!(a.center.map(f64::to_bits), b.center.map(f64::to_bits));
            }
        }
    }
}

fn segmented_set(rng: &mut ChaCha8Rng, samples: usize, dim: usize) -> FeatureSet {
    let classes = 4u32;
    let mut set = FeatureSet::new(FeatureKind::Point, dim, names(classes as usize));
    set.valid_parts = (0..classes).map(|c| (c * 4..c * 4 + 4).collect()).collect();
    set.part_names = (0..classes * 4).map(|p| format!("p{p}")).collect();
    for _ in 0..samples {
        let class = rng.random_range(0..classes);
        let n = rng.random_range(1..=120);
        set.groups.push(n);
        for _ in 0..n {
            let feature = (0..dim).map(|_| rng.random_range(-3.0f32..3.0)).collect();
            let mut record = FeatureRecord::new(0, feature, class);
            record.part_label = Some(class * 4 + rng.random_range(0..4));
            set.push(record);
        }
    }
    set
}

fn part_pooling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set = segmented_set(&mut rng, 100, 24);
    let store = build_part_prototypes(&set).unwrap();

    let mut expected: Vec<(u32, u32, Vec<f64>)> = Vec::new();
    let mut start = 0;
    for (sample, &n) in set.groups.iter().enumerate() {
        let records = &set.records[start..start + n];
        start += n;
        let mut by_part: BTreeMap<u32, Vec<&[f32]>> = BTreeMap::new();
        for r in records {
            by_part.entry(r.part_label.unwrap()).or_default().push(&r.feature);
        }
        for (part, members) in by_part {
            let mean = (0..set.dim)
                .map(|j| members.iter().map(|m| m[j] as f64).sum::<f64>() / members.len() as f64)
                .collect();
            expected.push((sample as u32, part, mean));
        }
    }
    assert_eq!(store.len(), expected.len());
    let part_labels = store.part_labels().unwrap();
    for (i, (sample, part, mean)) in expected.iter().enumerate() {
        assert_eq!(store.origin_id(i), *sample);
        assert_eq!(part_labels[i], *part);
        assert!(store.row(i).iter().zip(mean).all(|(a, b)| (*a as f64 - b).abs() <= 1e-6));
    }

    let mut shuffled = set.clone();
    let mut start = 0;
    for &n in &set.groups {
        shuffled.records[start..start + n].shuffle(&mut rng);
        start += n;
    }
    for (i, r) in shuffled.records.iter_mut().enumerate() {
        r.id = i as u32;
    }
    let again = build_part_prototypes(&shuffled).unwrap();
    assert_eq!(again.len(), store.len());
    for i in 0..store.len() {
        assert!(store.row(i).iter().zip(again.row(i)).all(|(a, b)| (a - b).abs() <= 1e-6));
    }
}

fn classification_demo() {
    let start = Instant::now();
    let ds = toy_dataset();
    assert_eq!(
        (ds.shapes.train.len(), ds.shapes.val.len(), ds.shapes.test.len()),
        (560, 80, 160)
    );
    let cls = classification_bench(ds, TrainConfig::default()).unwrap();
    let spec = EncodingSpec::sincos(GLOBAL_DIM);
    let store = build_sample_prototypes(&cls.sets.train, Some(&cls.clouds.train), Some(&spec), Pooling::Max).unwrap();
    let sweep = sweep_classification(
        &cls.sets.val,
        Some(&cls.clouds.val),
        &store,
        &cls.model,
        &default_k_grid(),
        &DEFAULT_GAMMA_GRID,
        Metric::Euclidean,
    )
    .unwrap();
    assert_eq!(sweep.grid.len(), 32 * 6);
    let baseline = sweep.baseline_value().unwrap();
    println!(
        "      val OA baseline {baseline:.4}, best fused {:.4} at k={} gamma={}",
        sweep.best.value, sweep.best.k, sweep.best.gamma
    );
    assert!(sweep.best.value >= baseline);

    let cfg = KnnConfig::new(21, Metric::Euclidean);
    let e = evaluate_classification(&cls.sets.test, Some(&cls.clouds.test), &store, &cls.model, &cfg, 8.0).unwrap();
    let labels: Vec<u32> = cls.sets.test.records.iter().map(|r| r.label).collect();
    let mut tally: BTreeMap<(bool, bool, bool), usize> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        let key = (e.baseline_preds[i] == label, e.knn_preds[i] == label, e.fused_preds[i] == label);
        *tally.entry(key).or_default() += 1;
    }
    println!("      test rectification at k=21 gamma=8 (baseline, knn, fused, count):");
    for (b, k, f, count) in e.rectification.rows() {
        println!("        {b:5} {k:5} {f:5} {count}");
        assert_eq!(count, tally.get(&(b, k, f)).copied().unwrap_or(0));
    }
    let r = &e.rectification;
    let listed: usize = r.rows().iter().map(|row| row.3).sum();
    assert_eq!(listed + r.both_right + r.both_wrong_fused_wrong, r.total);
    assert_eq!(r.total, labels.len());
    assert!(start.elapsed() < Duration::from_secs(180), "took {:?}", start.elapsed());
}

fn cube(x: f64, class: u32, score: f64) -> Box3D {
    Box3D::new([x, 0.0, 0.0], [1.0; 3], class, score).unwrap()
}

fn detection_mechanics() {
    let spec = EncodingSpec::sincos(6);
    let fa = vec![1.0f32, 0.0, 0.0, 0.0, 0.0, 0.0];
    let fb = vec![0.0f32, 0.0, 0.0, 5.0, 0.0, 0.0];
    let (pa, pb) = ([0.0f32, 0.0, 0.0], [0.2f32, 0.0, 0.0]);
    let rows = vec![
        (add_encoding(&fa, &encode_position(pa, &spec).unwrap()), 0),
        (add_encoding(&fb, &encode_position(pb, &spec).unwrap()), 1),
    ];
    let store = PrototypeStore::from_rows(StoreKind::Object, 6, rows, names(2))
        .unwrap()
        .with_encoder(PositionalEncoder::new(spec).unwrap());
    let proposals = vec![
        Proposal { bbox: cube(0.0, 0, 0.0), feature: fa, logits: vec![3.0, 0.0], position: pa },
        Proposal { bbox: cube(0.2, 0, 0.0), feature: fb, logits: vec![2.0, 1.5], position: pb },
    ];
    let truth = vec![cube(0.0, 0, 0.0), cube(0.2, 1, 0.0)];
    let cfg = KnnConfig::new(1, Metric::Euclidean);
    let nms = NmsConfig::default();

    let before = run_detection_pipeline(&proposals, &store, &cfg, 8.0, Placement::BeforeNms, &nms).unwrap();
    let after = run_detection_pipeline(&proposals, &store, &cfg, 8.0, Placement::AfterNms, &nms).unwrap();
    assert!(before.iter().any(|b| b.class == 1 && b.center[0] == 0.2), "true box lost before NMS");
    assert!(!after.iter().any(|b| b.class == 1), "true box survived after NMS");
    let recall = |dets: Vec<Box3D>| evaluate_detection(&[(dets, truth.clone())], 2, 0.25).mean_ar;
    assert_eq!(recall(before), 1.0);
    assert_eq!(recall(after), 0.5);

    // precision/recall after each ranked detection: (1, 1/2), (1/2, 1/2), (2/3, 1)
    let hand_ap = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    let dets = vec![
        Box3D::new([0.0; 3], [1.0; 3], 0, 0.9).unwrap(),
        Box3D::new([9.0, 9.0, 0.0], [1.0; 3], 0, 0.8).unwrap(),
        Box3D::new([4.1, 0.0, 0.0], [1.0; 3], 0, 0.7).unwrap(),
    ];
    let gts = vec![Box3D::new([0.0; 3], [1.0; 3], 0, 0.0).unwrap(), Box3D::new([4.0, 0.0, 0.0], [1.0; 3], 0, 0.0).unwrap()];
    let m = evaluate_detection(&[(dets, gts)], 1, 0.25);
    assert!((m.mean_ap - hand_ap).abs() <= f64::EPSILON, "AP {} vs {hand_ap}", m.mean_ap);
    assert_eq!(m.mean_ar, 1.0);
}

/// Exhaustive purity and coverage straight from the definitions.
struct RegionOracle {
    d: Vec<Vec<f64>>,
    labels: Vec<u32>,
}

impl RegionOracle {
    fn new(store: &PrototypeStore) -> Self {
        let n = store.len();
        let d = (0..n)
            .map(|i| (0..n).map(|j| oracle_distance(store.row(i), store.row(j), Metric::Euclidean)).collect())
            .collect();
        Self { d, labels: store.labels().to_vec() }
    }

    fn purity(&self, eps: f64) -> f64 {
        let n = self.labels.len();
        let pure = (0..n)
            .filter(|&i| (0..n).all(|j| self.d[i][j] > eps || self.labels[j] == self.labels[i]))
            .count();
        pure as f64 / n as f64
    }

    fn coverage(&self, eps: f64) -> f64 {
        let n = self.labels.len();
        let inside = self.d.iter().flatten().filter(|&&v| v <= eps).count();
        inside as f64 / (n * n) as f64
    }

    fn epsilon_star(&self, alpha: f64) -> f64 {
        let mut distinct: Vec<f64> = self.d.iter().flatten().copied().filter(|&v| v > 0.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut candidates = vec![0.0];
        let mut prev = 0.0;
        for v in distinct {
            candidates.push(0.5 * (prev + v));
            candidates.push(v);
            prev = v;
        }
        candidates.into_iter().filter(|&e| self.purity(e) >= alpha).fold(0.0, f64::max)
    }
}

fn purity_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.random_range(2..=60);
        let rows: Vec<(Vec<f32>, u32)> = (0..n)
            .map(|i| ((0..4).map(|_| rng.random_range(-1.0f32..1.0)).chain([i as f32 * 1e-3]).collect(), rng.random_range(0..3)))
            .collect();
        let store = store_from(rows, 3);
        let diag = RegionDiagnostics::new(&store).unwrap();
        let oracle = RegionOracle::new(&store);
        assert_eq!(diag.at(0.0).purity, 1.0);
        assert_eq!(diag.at(diag.max_pairwise_distance()).coverage, 1.0);
        assert_eq!(diag.at(diag.max_pairwise_distance() * 1.5 + 1.0).coverage, 1.0);
        for eps in [0.0, 0.3, 0.7, 1.1, 2.0] {
            let pc = diag.at(eps);
            assert!((pc.purity - oracle.purity(eps)).abs() < 1e-12);
            assert!((pc.coverage - oracle.coverage(eps)).abs() < 1e-12);
        }
        for alpha in [1.0, 0.9, 0.5] {
            assert_eq!(diag.epsilon_star(alpha).unwrap().epsilon, oracle.epsilon_star(alpha));
        }
    }

    let mut rows = Vec::new();
    for (label, centre) in [(0u32, 0.0f32), (1, 10.0)] {
        for _ in 0..15 {
            rows.push(((0..3).map(|_| centre + rng.random_range(-1.0f32..1.0)).collect(), label));
        }
    }
    let store = store_from(rows, 2);
    let oracle = RegionOracle::new(&store);
    let n = store.len();
    let (mut intra_max, mut inter_min) = (0.0f64, f64::INFINITY);
    for i in 0..n {
        for j in 0..n {
            if oracle.labels[i] == oracle.labels[j] {
                intra_max = intra_max.max(oracle.d[i][j]);
            } else {
                inter_min = inter_min.min(oracle.d[i][j]);
            }
        }
    }
    let star = find_epsilon_star(&store, 1.0).unwrap();
    println!("      two clusters: intra max {intra_max:.4}, inter min {inter_min:.4}, epsilon* {:.4}", star.epsilon);
    assert!(star.satisfied);
    assert!(intra_max < star.epsilon && star.epsilon < inter_min);
    assert_eq!(star.epsilon, oracle.epsilon_star(1.0));
}

const SMALL_CONFIG: &str = r#"{
  "dataset": {
    "num_per_class": 12,
    "points": 128,
    "seg_per_class": 10,
    "scenes": { "train": 8, "val": 3, "test": 3 },
    "scene_points": 96
  },
  "k_grid": [1, 2, 4, 8],
  "gamma_grid": [0.0, 1.0, 8.0]
}"#;

fn protoknn(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_protoknn"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_pipeline(dir: &Path) {
    fs::write(dir.join("config.json"), SMALL_CONFIG).unwrap();
    let cfg = ["--config", "config.json"];
    protoknn(dir, &[&["gen-data", "--seed", "47"][..], &cfg].concat());
    for task in ["cls", "seg", "det"] {
        for command in ["build-protos", "eval", "sweep", "diagnose"] {
            protoknn(dir, &[&[command, "--task", task][..], &cfg].concat());
        }
    }
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    let csvs = fa.keys().filter(|k| k.ends_with(".csv")).count();
    assert!(csvs >= 10, "only {csvs} csv reports");
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between runs");
    }

    for (name, bytes) in &fa {
        let path = a.path().join(name);
        if name.ends_with(".snpf") {
            assert!(load_feature_set(&path).unwrap().to_snpf_bytes().unwrap() == *bytes, "{name} does not round-trip");
        } else if name.ends_with(".snps") {
            assert!(load_store(&path).unwrap().to_snps_bytes().unwrap() == *bytes, "{name} does not round-trip");
        }
    }
    let resaved = tempfile::tempdir().unwrap();
    for name in ["data/seg_train.snpf", "data/det.snps"] {
        let src = a.path().join(name);
        let dst = resaved.path().join("copy");
        if name.ends_with(".snpf") {
            protoknn::feature_store::save_feature_set(&load_feature_set(&src).unwrap(), &dst).unwrap();
            let sidecar = |p: &Path| fs::read(protoknn::feature_store::sidecar_path(p)).unwrap();
            assert!(sidecar(&src) == sidecar(&dst));
        } else {
            protoknn::prototypes::save_store(&load_store(&src).unwrap(), &dst).unwrap();
        }
        assert!(fs::read(&src).unwrap() == fs::read(&dst).unwrap(), "{name} resave differs");
    }
}

fn gradient_check() {
    let ds = generate_dataset(&DatasetConfig {
        num_per_class: 5,
        seed: 9,
        points: 128,
        ..Default::default()
    })
    .unwrap();
    let raw: Vec<Vec<f64>> = ds.shapes.train.iter().map(|c| extract_features(&c.points).unwrap()).collect();
    let standardizer = Standardizer::fit(&raw).unwrap();
    let features: Vec<Vec<f32>> = raw.iter().map(|f| standardizer.apply(f).unwrap()).collect();
    let labels: Vec<u32> = ds.shapes.train.iter().map(|c| c.class).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut model = ToyClassifier::initialize(8, GLOBAL_DIM, TrainConfig { init_scale: 0.3, ..Default::default() });
    model.bias = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
    let (_, grad) = loss_and_gradient(&model, &features, &labels).unwrap();
    let loss = |m: &ToyClassifier| loss_and_gradient(m, &features, &labels).unwrap().0;
    let h = 1e-5;
    for probe in 0..20 {
        let c = rng.random_range(0..8);
        // every fifth probe perturbs a bias instead of a weight
        let j = (probe % 5 != 4).then(|| rng.random_range(0..GLOBAL_DIM));
        let (mut plus, mut minus) = (model.clone(), model.clone());
        let analytic = match j {
            Some(j) => {
                plus.weights[c][j] += h;
                minus.weights[c][j] -= h;
                grad.weights[c][j]
            }
            None => {
                plus.bias[c] += h;
                minus.bias[c] -= h;
                grad.bias[c]
            }
        };
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / scale;
        assert!(rel <= 1e-5, "probe {probe} (class {c}, coord {j:?}): analytic {analytic}, numeric {numeric}, rel {rel}");
    }
}
