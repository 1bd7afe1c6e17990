use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use protoknn::detection::{read_scenes, write_scenes, NmsConfig, Placement, DEFAULT_IOU_THRESHOLD};
use protoknn::encoding::{EncodingSpec, Pooling};
use protoknn::feature_store::{load_feature_set, save_feature_set, FeatureKind, FeatureRecord, FeatureSet};
use protoknn::fusion::{SweepResult, DEFAULT_GAMMA, DEFAULT_K_CLASSIFICATION, DEFAULT_K_DETECTION, DEFAULT_K_SEGMENTATION};
use protoknn::prototypes::{
    build_object_prototypes, build_part_prototypes, build_sample_prototypes, load_store, save_store, PrototypeStore,
};
use protoknn::retrieval::{KnnConfig, RegionDiagnostics, DEFAULT_ZERO_DISTANCE_CLAMP};
use protoknn::toybench::{
    self, classification_bench, default_k_grid, detection_bench, evaluate_classification, evaluate_detection_scenes,
    evaluate_segmentation, generate_dataset, segmentation_bench, sweep_classification, sweep_detection, sweep_segmentation,
    Point, TaskModel, TrainConfig, DEFAULT_GAMMA_GRID,
};
use serde::Serialize;

use crate::config::{PeChoice, RunConfig, Task};
use crate::error::CliError;
use crate::report::{ensure_dir, write_text, Table};
use crate::row;

const DEFAULT_SEG_FIT_POINTS: usize = 32;
const DEFAULT_EPSILON_STEPS: usize = 16;

pub fn default_k(task: Task) -> usize {
    match task {
        Task::Cls => DEFAULT_K_CLASSIFICATION,
        Task::Seg => DEFAULT_K_SEGMENTATION,
        Task::Det => DEFAULT_K_DETECTION,
    }
}

fn default_pe(task: Task) -> PeChoice {
    match task {
        Task::Cls | Task::Det => PeChoice::Sincos,
        Task::Seg => PeChoice::None,
    }
}

pub fn encoding_spec(cfg: &RunConfig, task: Task, dim: usize) -> Result<Option<EncodingSpec>, CliError> {
    let mut spec = match cfg.pe.unwrap_or(default_pe(task)) {
        PeChoice::None => return Ok(None),
        PeChoice::Sincos => EncodingSpec::sincos(dim),
        PeChoice::Fourier => EncodingSpec::fourier(dim, cfg.fourier_seed.unwrap_or(cfg.seed()), cfg.fourier_scale.unwrap_or(1.0)),
    };
    if let Some(t) = cfg.temperature {
        spec.temperature = t;
    }
    spec.validate()?;
    Ok(Some(spec))
}

fn knn_config(cfg: &RunConfig, task: Task) -> KnnConfig {
    let mut knn = KnnConfig::new(cfg.k.unwrap_or(default_k(task)), cfg.metric());
    knn.zero_distance_clamp = cfg.zero_distance_clamp.unwrap_or(DEFAULT_ZERO_DISTANCE_CLAMP);
    knn
}

fn nms_config(cfg: &RunConfig) -> NmsConfig {
    NmsConfig {
        iou_threshold: cfg.nms_iou.unwrap_or(DEFAULT_IOU_THRESHOLD),
        class_wise: true,
    }
}

fn placement_name(p: Placement) -> &'static str {
    match p {
        Placement::BeforeNms => "before-nms",
        Placement::AfterNms => "after-nms",
    }
}

fn clouds_to_set(clouds: &[toybench::LabeledCloud]) -> FeatureSet {
    let mut set = FeatureSet::new(FeatureKind::Point, 3, toybench::shapes::class_names());
    for cloud in clouds {
        set.groups.push(cloud.points.len());
        for p in &cloud.points {
            let mut record = FeatureRecord::new(0, p.to_vec(), cloud.class);
            record.position = Some(*p);
            set.push(record);
        }
    }
    set
}

/// Raw clouds stored as a grouped point set of coordinates.
pub fn load_clouds(path: &Path) -> Result<Vec<Vec<Point>>, CliError> {
    let set = load_feature_set(path)?;
    if set.kind != FeatureKind::Point || set.groups.is_empty() {
        return Err(protoknn::Error::MissingField("groups").into());
    }
    Ok(set
        .group_ranges()
        .into_iter()
        .map(|r| {
            set.records[r]
                .iter()
                .map(|rec| rec.position.unwrap_or([rec.feature[0], rec.feature[1], rec.feature[2]]))
                .collect()
        })
        .collect())
}

#[derive(Serialize)]
struct Manifest<'a> {
    dataset: &'a toybench::DatasetConfig,
    train: &'a TrainConfig,
    seg_fit_points: usize,
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let mut dataset = cfg.dataset.clone().unwrap_or_default();
    dataset.seed = cfg.seed();
    dataset.validate()?;
    let train = TrainConfig {
        seed: dataset.seed,
        ..cfg.train.unwrap_or_default()
    };
    let seg_fit_points = cfg.seg_fit_points.unwrap_or(DEFAULT_SEG_FIT_POINTS);
    let dir = cfg.out.clone().unwrap_or_else(|| cfg.data_dir());
    ensure_dir(&dir)?;
    let data = generate_dataset(&dataset)?;
    let tasks = cfg.task.map_or(Task::ALL.to_vec(), |t| vec![t]);
    let path = |name: String| dir.join(name);

    for task in tasks {
        let t = task.name();
        match task {
            Task::Cls => {
                let bench = classification_bench(&data, train)?;
                for ((split, set), (_, clouds)) in bench.sets.iter().zip(data.shapes.iter()) {
                    save_feature_set(set, path(format!("{t}_{split}.snpf")))?;
                    save_feature_set(&clouds_to_set(clouds), path(format!("{t}_{split}_clouds.snpf")))?;
                    println!("{t} {split}: {} samples", set.len());
                }
                bench.model.save(path(format!("{t}_model.json")))?;
            }
            Task::Seg => {
                let bench = segmentation_bench(&data, train, seg_fit_points)?;
                for (split, set) in bench.sets.iter() {
                    save_feature_set(set, path(format!("{t}_{split}.snpf")))?;
                    println!("{t} {split}: {} samples, {} points", set.groups.len(), set.len());
                }
                bench.model.save(path(format!("{t}_model.json")))?;
            }
            Task::Det => {
                let bench = detection_bench(&data, train)?;
                save_feature_set(&bench.train_objects, path(format!("{t}_train.snpf")))?;
                for (split, scenes) in bench.scenes.iter() {
                    write_scenes(scenes, path(format!("{t}_{split}.jsonl")))?;
                    let proposals: usize = scenes.iter().map(|s| s.proposals.len()).sum();
                    println!("{t} {split}: {} scenes, {proposals} proposals", scenes.len());
                }
                println!("{t} train objects: {}", bench.train_objects.len());
                bench.model.save(path(format!("{t}_model.json")))?;
            }
        }
    }
    let manifest = Manifest {
        dataset: &dataset,
        train: &train,
        seg_fit_points,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_text(&path("dataset.json".into()), &text)
}

pub fn build_store(cfg: &RunConfig, task: Task) -> Result<PrototypeStore, CliError> {
    let features = cfg.features_path(task, "train");
    let set = load_feature_set(&features)?;
    let store = match task {
        Task::Cls => {
            let pooling = cfg.pooling.unwrap_or(Pooling::Max);
            match encoding_spec(cfg, task, set.dim)? {
                None => build_sample_prototypes(&set, None, None, pooling)?,
                Some(spec) => {
                    let clouds = load_clouds(&cfg.clouds_path(&features))?;
                    build_sample_prototypes(&set, Some(&clouds), Some(&spec), pooling)?
                }
            }
        }
        Task::Seg => {
            if encoding_spec(cfg, task, set.dim)?.is_some() {
                return Err(protoknn::Error::InvalidConfig("part prototypes take no positional encoding; use --pe none".into()).into());
            }
            build_part_prototypes(&set)?
        }
        Task::Det => {
            if !set.has_positions() {
                return Err(protoknn::Error::MissingField("positions").into());
            }
            let spec = encoding_spec(cfg, task, set.dim)?
                .ok_or_else(|| CliError::Usage("object prototypes need --pe sincos or --pe fourier".into()))?;
            build_object_prototypes(&set, &spec)?
        }
    };
    Ok(store)
}

pub fn build_protos(cfg: &RunConfig) -> Result<(), CliError> {
    let task = cfg.task()?;
    let store = build_store(cfg, task)?;
    let out = cfg.out.clone().unwrap_or_else(|| cfg.store_path(task));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_store(&store, &out)?;
    println!("{} store: {} prototypes of dimension {}", task.name(), store.len(), store.dim());
    Ok(())
}

fn report_paths(cfg: &RunConfig, stem: &str) -> Result<(PathBuf, PathBuf), CliError> {
    let dir = cfg.report_dir();
    ensure_dir(&dir)?;
    Ok((dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.md"))))
}

fn load_split_clouds(cfg: &RunConfig, store: &PrototypeStore, features: &Path) -> Result<Option<Vec<Vec<Point>>>, CliError> {
    if store.encoder().is_some() {
        Ok(Some(load_clouds(&cfg.clouds_path(features))?))
    } else {
        Ok(None)
    }
}

fn run_header(task: Task, knn: &KnnConfig, gamma: f64, store: &PrototypeStore) -> String {
    let encoding = store
        .encoding()
        .map_or("none".to_owned(), |e| format!("{:?}", e.kind).to_lowercase());
    format!(
        "task: {}, k: {}, gamma: {gamma}, metric: {}, prototypes: {}, encoding: {encoding}\n\n",
        task.name(),
        knn.k,
        knn.metric.name(),
        store.len()
    )
}

/// Evaluation tables: the metrics table and, for classification, the
/// rectification table.
pub fn eval_tables(cfg: &RunConfig) -> Result<(Table, Option<Table>, String), CliError> {
    let task = cfg.task()?;
    let store = load_store(cfg.store_path(task))?;
    let knn = knn_config(cfg, task);
    let gamma = cfg.gamma.unwrap_or(DEFAULT_GAMMA);
    let mut table = Table::new(&["metric", "baseline", "knn", "fused"]);
    let mut header = run_header(task, &knn, gamma, &store);
    let features = cfg.features_path(task, "test");
    let rect = match task {
        Task::Cls => {
            let set = load_feature_set(&features)?;
            let clouds = load_split_clouds(cfg, &store, &features)?;
            let model = TaskModel::load(cfg.model_path(task))?;
            let e = evaluate_classification(&set, clouds.as_deref(), &store, &model, &knn, gamma)?;
            table.push(row!["OA", e.baseline.overall_accuracy, e.knn.overall_accuracy, e.fused.overall_accuracy]);
            table.push(row!["mAcc", e.baseline.mean_class_accuracy, e.knn.mean_class_accuracy, e.fused.mean_class_accuracy]);
            let mut rect = Table::new(&["baseline_correct", "knn_correct", "fused_correct", "count"]);
            for (b, k, f, n) in e.rectification.rows() {
                rect.push(row![b, k, f, n]);
            }
            Some((rect, e.rectification))
        }
        Task::Seg => {
            let set = load_feature_set(&features)?;
            let model = TaskModel::load(cfg.model_path(task))?;
            let e = evaluate_segmentation(&set, &store, &model, &knn, gamma, cfg.scoped.unwrap_or(true))?;
            table.push(row!["mIoU_I", e.baseline.instance_miou, e.knn.instance_miou, e.fused.instance_miou]);
            table.push(row!["point_accuracy", e.baseline.point_accuracy, e.knn.point_accuracy, e.fused.point_accuracy]);
            None
        }
        Task::Det => {
            let scenes = read_scenes(&features)?;
            let placement = cfg.placement.unwrap_or(Placement::BeforeNms);
            let e = evaluate_detection_scenes(
                &scenes,
                &store,
                &knn,
                gamma,
                &nms_config(cfg),
                cfg.match_iou.unwrap_or(DEFAULT_IOU_THRESHOLD),
            )?;
            let chosen = match placement {
                Placement::BeforeNms => &e.before_nms,
                Placement::AfterNms => &e.after_nms,
            };
            table.push(row!["mAP25", e.baseline.mean_ap, e.knn.mean_ap, chosen.mean_ap]);
            table.push(row!["mAR25", e.baseline.mean_ar, e.knn.mean_ar, chosen.mean_ar]);
            for (p, m) in [(Placement::BeforeNms, &e.before_nms), (Placement::AfterNms, &e.after_nms)] {
                let name = placement_name(p).replace('-', "_");
                table.push(row![format!("mAP25_{name}"), e.baseline.mean_ap, e.knn.mean_ap, m.mean_ap]);
                table.push(row![format!("mAR25_{name}"), e.baseline.mean_ar, e.knn.mean_ar, m.mean_ar]);
            }
            let _ = write!(header, "placement: {}\n\n", placement_name(placement));
            None
        }
    };
    match rect {
        Some((rect, stats)) => {
            let _ = write!(
                header,
                "rectification: {} of {} samples, {} where baseline and retrieval both right, {} where all three wrong\n\n",
                stats.rows().iter().map(|r| r.3).sum::<usize>(),
                stats.total,
                stats.both_right,
                stats.both_wrong_fused_wrong
            );
            Ok((table, Some(rect), header))
        }
        None => Ok((table, None, header)),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let task = cfg.task()?;
    let (table, rect, header) = eval_tables(cfg)?;
    let (csv, md) = report_paths(cfg, &format!("eval_{}", task.name()))?;
    table.write_csv(&csv)?;
    let mut text = format!("# Evaluation\n\n{header}{}", table.markdown());
    if let Some(rect) = rect {
        let (rect_csv, _) = report_paths(cfg, &format!("rectification_{}", task.name()))?;
        rect.write_csv(&rect_csv)?;
        text.push_str("\n## Rectification\n\n");
        text.push_str(&rect.markdown());
    }
    write_text(&md, &text)?;
    print!("{}", table.markdown());
    Ok(())
}

pub fn sweep_result(cfg: &RunConfig) -> Result<SweepResult, CliError> {
    let task = cfg.task()?;
    let store = load_store(cfg.store_path(task))?;
    let k_grid = cfg.k_grid.clone().unwrap_or_else(default_k_grid);
    let gamma_grid = cfg.gamma_grid.clone().unwrap_or_else(|| DEFAULT_GAMMA_GRID.to_vec());
    let features = cfg.features_path(task, "val");
    let metric = cfg.metric();
    let result = match task {
        Task::Cls => {
            let set = load_feature_set(&features)?;
            let clouds = load_split_clouds(cfg, &store, &features)?;
            let model = TaskModel::load(cfg.model_path(task))?;
            sweep_classification(&set, clouds.as_deref(), &store, &model, &k_grid, &gamma_grid, metric)?
        }
        Task::Seg => {
            let set = load_feature_set(&features)?;
            let model = TaskModel::load(cfg.model_path(task))?;
            sweep_segmentation(&set, &store, &model, &k_grid, &gamma_grid, metric, cfg.scoped.unwrap_or(true))?
        }
        Task::Det => {
            let scenes = read_scenes(&features)?;
            sweep_detection(
                &scenes,
                &store,
                &k_grid,
                &gamma_grid,
                metric,
                cfg.placement.unwrap_or(Placement::BeforeNms),
                &nms_config(cfg),
                cfg.match_iou.unwrap_or(DEFAULT_IOU_THRESHOLD),
            )?
        }
    };
    Ok(result)
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let task = cfg.task()?;
    let result = sweep_result(cfg)?;
    let mut grid = Table::new(&["k", "gamma", "metric_name", "value"]);
    for p in &result.grid {
        grid.push(row![p.k, p.gamma, result.metric_name.as_str(), p.value]);
    }
    let (csv, md) = report_paths(cfg, &format!("sweep_{}", task.name()))?;
    grid.write_csv(&csv)?;

    // best value over k for each gamma, the shape of the gamma curve
    let mut curve = Table::new(&["gamma", "best_k", "value"]);
    let mut gammas: Vec<f64> = result.grid.iter().map(|p| p.gamma).collect();
    gammas.dedup();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    for g in gammas {
        let points: Vec<_> = result.grid.iter().filter(|p| p.gamma == g).copied().collect();
        if let Some(best) = protoknn::fusion::select_best(&points) {
            curve.push(row![g, best.k, best.value]);
        }
    }
    let baseline = result
        .baseline_value()
        .map_or("n/a".to_owned(), |v| format!("{v:.4}"));
    let text = format!(
        "# Sweep\n\ntask: {}, metric: {}, grid points: {}\n\nbest: k = {}, gamma = {}, {} = {:.4} (baseline {baseline})\n\n## Best over k per gamma\n\n{}",
        task.name(),
        result.metric_name,
        result.grid.len(),
        result.best.k,
        result.best.gamma,
        result.metric_name,
        result.best.value,
        curve.markdown()
    );
    write_text(&md, &text)?;
    println!(
        "best k = {}, gamma = {}, {} = {} (baseline {baseline})",
        result.best.k, result.best.gamma, result.metric_name, result.best.value
    );
    Ok(())
}

pub fn diagnose(cfg: &RunConfig) -> Result<(), CliError> {
    let store_path = match (&cfg.store, cfg.task) {
        (Some(p), _) => p.clone(),
        (None, Some(task)) => cfg.store_path(task),
        (None, None) => return Err(CliError::Usage("diagnose needs --store or --task".into())),
    };
    let store = load_store(&store_path)?;
    let diag = RegionDiagnostics::new(&store)?;
    let epsilons = cfg.epsilons.clone().unwrap_or_else(|| {
        let max = diag.max_pairwise_distance();
        (0..=DEFAULT_EPSILON_STEPS).map(|i| max * i as f64 / DEFAULT_EPSILON_STEPS as f64).collect()
    });
    if let Some(bad) = epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(protoknn::Error::InvalidConfig(format!("epsilon must be finite and nonnegative, got {bad}")).into());
    }
    let alpha = cfg.alpha.unwrap_or(1.0);
    let star = diag.epsilon_star(alpha)?;
    let mut table = Table::new(&["epsilon", "purity", "coverage"]);
    for &eps in &epsilons {
        let pc = diag.at(eps);
        table.push(row![eps, pc.purity, pc.coverage]);
    }
    let stem = cfg.task.map_or("diagnose".to_owned(), |t| format!("diagnose_{}", t.name()));
    let (csv, md) = report_paths(cfg, &stem)?;
    table.write_csv(&csv)?;
    let text = format!(
        "# Purity and coverage\n\nprototypes: {}, max pairwise distance: {:.4}\n\nepsilon* (alpha = {alpha}): {} (purity {:.4}, coverage {:.4}{})\n\n{}",
        store.len(),
        diag.max_pairwise_distance(),
        star.epsilon,
        star.purity,
        star.coverage,
        if star.satisfied { "" } else { ", threshold not reached" },
        table.markdown()
    );
    write_text(&md, &text)?;
    println!("epsilon* = {} (purity {}, coverage {})", star.epsilon, star.purity, star.coverage);
    Ok(())
}
