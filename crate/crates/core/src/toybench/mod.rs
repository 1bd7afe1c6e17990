//! Synthetic shapes, scenes, handcrafted features and a linear head: a small
//! self-contained stand-in for a trained point cloud network.

pub mod bench;
pub mod classifier;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod shapes;

pub use bench::{
    classification_bench, default_k_grid, detection_bench, evaluate_classification, evaluate_detection_scenes,
    evaluate_segmentation, segmentation_bench, sweep_classification, sweep_detection, sweep_segmentation,
    ClassificationBench, ClassificationEval, DetectionBench, DetectionEval, SegmentationBench, SegmentationEval,
    SegmentationMetrics, TaskModel, DEFAULT_GAMMA_GRID,
};
pub use classifier::{loss_and_gradient, train_classifier, Gradient, ToyClassifier, TrainConfig};
pub use dataset::{generate_dataset, DatasetConfig, SceneCounts, SceneLayout, SceneObject, SplitFractions, Splits, ToyDataset};
pub use features::{extract_features, extract_point_features, Standardizer, GLOBAL_DIM, POINT_DIM};
pub use metrics::{classification_metrics, instance_iou, mean_instance_iou, ClassificationMetrics};
pub use shapes::{sample_shape, LabeledCloud, Point, ShapeClass, ShapeSpec};
