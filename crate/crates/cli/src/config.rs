//! Run configuration: a JSON file merged with command-line flags, flags win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use protoknn::detection::Placement;
use protoknn::encoding::Pooling;
use protoknn::retrieval::Metric;
use protoknn::toybench::{DatasetConfig, SplitFractions, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cls,
    Seg,
    Det,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Cls => "cls",
            Task::Seg => "seg",
            Task::Det => "det",
        }
    }

    pub const ALL: [Task; 3] = [Task::Cls, Task::Seg, Task::Det];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeChoice {
    None,
    Sincos,
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Avg,
    Max,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Avg => Pooling::Avg,
            PoolingArg::Max => Pooling::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    BeforeNms,
    AfterNms,
}

impl From<PlacementArg> for Placement {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::BeforeNms => Placement::BeforeNms,
            PlacementArg::AfterNms => Placement::AfterNms,
        }
    }
}

/// Flags shared by every subcommand. Flags a command does not use are ignored.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Directory holding generated data and default store paths
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Trained linear head (JSON) used for baseline logits
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Raw point clouds matching `--features`, needed by encoded sample stores
    #[arg(long)]
    pub clouds: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
    #[arg(long, value_enum)]
    pub pe: Option<PeChoice>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    // list flags spell out `::std::vec::Vec` so clap parses one value, not a repeated flag
    /// k values, e.g. `1-32` or `1,5,9`
    #[arg(long, value_parser = parse_usize_list)]
    pub k_grid: Option<::std::vec::Vec<usize>>,
    /// gamma values, e.g. `0,1,2,4,8,16`
    #[arg(long, value_parser = parse_f64_list)]
    pub gamma_grid: Option<::std::vec::Vec<f64>>,
    /// Purity threshold for the epsilon search
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Explicit epsilon grid for `diagnose`
    #[arg(long, value_parser = parse_f64_list)]
    pub epsilons: Option<::std::vec::Vec<f64>>,
    /// Train, val and test fractions, e.g. `0.7,0.1,0.2`
    #[arg(long, value_parser = parse_f64_list)]
    pub split: Option<::std::vec::Vec<f64>>,
    #[arg(long)]
    pub num_per_class: Option<usize>,
    /// Retrieve part prototypes from every object class, not only the sample's own
    #[arg(long)]
    pub unscoped: bool,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: protoknn::Error| e.to_string())
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
                let b: usize = b.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
                if b < a {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|e| format!("{part:?}: {e}"))?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    let out: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub data_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub clouds: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub gamma: Option<f64>,
    pub metric: Option<Metric>,
    pub zero_distance_clamp: Option<f64>,
    pub pe: Option<PeChoice>,
    pub pooling: Option<Pooling>,
    pub temperature: Option<f64>,
    pub fourier_seed: Option<u64>,
    pub fourier_scale: Option<f64>,
    pub placement: Option<Placement>,
    pub nms_iou: Option<f64>,
    pub match_iou: Option<f64>,
    pub scoped: Option<bool>,
    pub seed: Option<u64>,
    pub k_grid: Option<Vec<usize>>,
    pub gamma_grid: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub dataset: Option<DatasetConfig>,
    pub train: Option<TrainConfig>,
    /// Per-sample points used to fit the segmentation head.
    pub seg_fit_points: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Overlays the flags that were given on top of this configuration.
    pub fn merge(mut self, args: &RunArgs) -> Result<Self, CliError> {
        macro_rules! over {
            ($($field:ident),*) => { $( if let Some(v) = args.$field.clone() { self.$field = Some(v.into()); } )* };
        }
        over!(task, data_dir, features, store, model, clouds, out, k, gamma, metric, pe, seed, k_grid, gamma_grid, alpha, epsilons);
        if let Some(p) = args.pooling {
            self.pooling = Some(p.into());
        }
        if let Some(p) = args.placement {
            self.placement = Some(p.into());
        }
        if args.unscoped {
            self.scoped = Some(false);
        }
        if args.split.is_some() || args.num_per_class.is_some() || args.seed.is_some() {
            let mut dataset = self.dataset.clone().unwrap_or_default();
            if let Some(split) = &args.split {
                let [train, val, test] = split[..] else {
                    return Err(CliError::Usage(format!("--split takes three fractions, got {}", split.len())));
                };
                dataset.fractions = SplitFractions { train, val, test };
            }
            if let Some(n) = args.num_per_class {
                dataset.num_per_class = n;
            }
            if let Some(seed) = args.seed {
                dataset.seed = seed;
            }
            self.dataset = Some(dataset);
        }
        Ok(self)
    }

    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let base = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        base.merge(args)
    }

    pub fn task(&self) -> Result<Task, CliError> {
        self.task.ok_or_else(|| CliError::Usage("--task is required (cls, seg or det)".into()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("reports"))
    }

    pub fn store_path(&self, task: Task) -> PathBuf {
        self.store.clone().unwrap_or_else(|| self.data_dir().join(format!("{}.snps", task.name())))
    }

    pub fn model_path(&self, task: Task) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.data_dir().join(format!("{}_model.json", task.name())))
    }

    /// Features file for a split; detection scenes live in JSON lines.
    pub fn features_path(&self, task: Task, split: &str) -> PathBuf {
        self.features.clone().unwrap_or_else(|| {
            let ext = if task == Task::Det && split != "train" { "jsonl" } else { "snpf" };
            self.data_dir().join(format!("{}_{split}.{ext}", task.name()))
        })
    }

    pub fn clouds_path(&self, features: &Path) -> PathBuf {
        self.clouds.clone().unwrap_or_else(|| clouds_path_for(features))
    }

    pub fn seed(&self) -> u64 {
        self.seed.or(self.dataset.as_ref().map(|d| d.seed)).unwrap_or(0)
    }

    pub fn metric(&self) -> Metric {
        self.metric.unwrap_or(Metric::Euclidean)
    }
}

/// `dir/cls_test.snpf` pairs with `dir/cls_test_clouds.snpf`.
pub fn clouds_path_for(features: &Path) -> PathBuf {
    let stem = features.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    features.with_file_name(format!("{stem}_clouds.snpf"))
}
