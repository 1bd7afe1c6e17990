//! Seeded generation of shape splits and multi-object scenes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shapes::{sample_shape, LabeledCloud, Point, ShapeClass, ShapeSpec};
use crate::error::{Error, Result};

const FRACTION_TOLERANCE: f64 = 1e-9;
pub const ROOM_SIZE: f64 = 10.0;
pub const MAX_OBJECTS_PER_SCENE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidFractions(format!("{name} fraction must lie in [0, 1], got {v}")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > FRACTION_TOLERANCE {
            return Err(Error::InvalidFractions(format!(
                "train + val + test fractions must sum to 1, got {sum} (train={}, val={}, test={})",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// (train, val, test) counts for `n` samples; test takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub num_per_class: usize,
    pub fractions: SplitFractions,
    pub seed: u64,
    /// Per-class factor applied to the train split count.
    pub imbalance: BTreeMap<u32, f64>,
    pub points: usize,
    pub jitter: f64,
    /// Samples per class for the part-segmentation splits.
    pub seg_per_class: usize,
    pub scenes: SceneCounts,
    pub scene_points: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_per_class: 100,
            fractions: SplitFractions::default(),
            seed: 0,
            imbalance: BTreeMap::new(),
            points: 512,
            jitter: 0.02,
            seg_per_class: 20,
            scenes: SceneCounts {
                train: 40,
                val: 10,
                test: 10,
            },
            scene_points: 256,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.fractions.validate()?;
        for (&class, &factor) in &self.imbalance {
            if ShapeClass::from_index(class).is_none() {
                return Err(Error::InvalidConfig(format!("imbalance names unknown class {class}")));
            }
            if !(0.0..=1.0).contains(&factor) {
                return Err(Error::InvalidConfig(format!("imbalance factor for class {class} must lie in [0, 1], got {factor}")));
            }
        }
        let mut spec = ShapeSpec::new(ShapeClass::Sphere);
        spec.points = self.points.min(self.scene_points);
        spec.jitter = self.jitter;
        spec.validate()
    }

    fn shape_spec(&self, class: ShapeClass, points: usize) -> ShapeSpec {
        ShapeSpec {
            points,
            jitter: self.jitter,
            ..ShapeSpec::new(class)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits<T> {
    pub train: T,
    pub val: T,
    pub test: T,
}

impl<T> Splits<T> {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)].into_iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub class: u32,
    /// Points in scene coordinates.
    pub points: Vec<Point>,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub id: u32,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub config: DatasetConfig,
    pub shapes: Splits<Vec<LabeledCloud>>,
    pub segmentation: Splits<Vec<LabeledCloud>>,
    pub scenes: Splits<Vec<SceneLayout>>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream seed for one generated item.
pub(crate) fn item_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(splitmix(seed) ^ stream) ^ a) ^ b)
}

const SHAPE_STREAM: u64 = 1;
const SEG_STREAM: u64 = 2;
const SCENE_STREAM: u64 = 3;

fn split_shapes(config: &DatasetConfig, stream: u64, per_class: usize) -> Result<Splits<Vec<LabeledCloud>>> {
    let (n_train, n_val, n_test) = config.fractions.counts(per_class);
    let jobs: Vec<(usize, ShapeClass, usize)> = ShapeClass::ALL
        .iter()
        .flat_map(|&class| {
            let factor = config.imbalance.get(&class.index()).copied().unwrap_or(1.0);
            let train = if stream == SHAPE_STREAM { (factor * n_train as f64).floor() as usize } else { n_train };
            let split_of = |i: usize| if i < n_train { 0 } else if i < n_train + n_val { 1 } else { 2 };
            (0..n_train + n_val + n_test)
                .filter(move |&i| i >= n_train || i < train)
                .map(move |i| (split_of(i), class, i))
        })
        .collect();
    let clouds: Vec<(usize, LabeledCloud)> = jobs
        .par_iter()
        .map(|&(split, class, i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(config.seed, stream, class.index() as u64, i as u64));
            Ok((split, sample_shape(&config.shape_spec(class, config.points), &mut rng)?))
        })
        .collect::<Result<_>>()?;
    let mut out: Splits<Vec<LabeledCloud>> = Splits::default();
    for (split, cloud) in clouds {
        [&mut out.train, &mut out.val, &mut out.test][split].push(cloud);
    }
    Ok(out)
}

fn boxes_overlap(a: &([f64; 3], [f64; 3]), b: &([f64; 3], [f64; 3]), margin: f64) -> bool {
    (0..3).all(|i| (a.0[i] - b.0[i]).abs() * 2.0 < a.1[i] + b.1[i] + 2.0 * margin)
}

fn bounding_box(points: &[Point]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a] as f64);
            hi[a] = hi[a].max(p[a] as f64);
        }
    }
    (std::array::from_fn(|a| 0.5 * (lo[a] + hi[a])), std::array::from_fn(|a| hi[a] - lo[a]))
}

/// Preferred floor location of a class, so position carries class evidence.
pub fn class_home(class: u32) -> [f64; 2] {
    let col = (class % 4) as f64;
    let row = (class / 4) as f64;
    [1.5 + col * (ROOM_SIZE - 3.0) / 3.0, 2.5 + row * 5.0]
}

fn generate_scene(config: &DatasetConfig, split: u64, index: usize) -> Result<SceneLayout> {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(config.seed, SCENE_STREAM, split, index as u64));
    let count = rng.random_range(1..=MAX_OBJECTS_PER_SCENE);
    let spread = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = ShapeClass::ALL[rng.random_range(0..ShapeClass::ALL.len())];
        let cloud = sample_shape(&config.shape_spec(class, config.scene_points), &mut rng)?;
        let (local_center, size) = bounding_box(&cloud.points);
        let home = class_home(class.index());
        for _ in 0..50 {
            let xy: [f64; 2] = std::array::from_fn(|a| {
                (home[a] + spread.sample(&mut rng)).clamp(size[a] / 2.0 + 0.1, ROOM_SIZE - size[a] / 2.0 - 0.1)
            });
            let center = [xy[0], xy[1], size[2] / 2.0];
            if objects.iter().any(|o| boxes_overlap(&(o.center, o.size), &(center, size), 0.05)) {
                continue;
            }
            let shift: [f64; 3] = std::array::from_fn(|a| center[a] - local_center[a]);
            let points: Vec<Point> = cloud
                .points
                .iter()
                .map(|p| std::array::from_fn(|a| (p[a] as f64 + shift[a]) as f32))
                .collect();
            let (center, size) = bounding_box(&points);
            objects.push(SceneObject {
                class: class.index(),
                points,
                center,
                size,
            });
            break;
        }
    }
    Ok(SceneLayout {
        id: index as u32,
        objects,
    })
}

/// Shape splits, part-segmentation splits and scene layouts, all derived
/// deterministically from `config.seed`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<ToyDataset> {
    config.validate()?;
    let shapes = split_shapes(config, SHAPE_STREAM, config.num_per_class)?;
    let segmentation = split_shapes(config, SEG_STREAM, config.seg_per_class)?;
    let scene_split = |split: u64, n: usize| -> Result<Vec<SceneLayout>> {
        (0..n).into_par_iter().map(|i| generate_scene(config, split, i)).collect()
    };
    let scenes = Splits {
        train: scene_split(0, config.scenes.train)?,
        val: scene_split(1, config.scenes.val)?,
        test: scene_split(2, config.scenes.test)?,
    };
    Ok(ToyDataset {
        config: config.clone(),
        shapes,
        segmentation,
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            num_per_class: 10,
            points: 64,
            seg_per_class: 5,
            scenes: SceneCounts { train: 4, val: 2, test: 2 },
            scene_points: 48,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn split_counts() {
        assert_eq!(SplitFractions::default().counts(100), (70, 10, 20));
        assert_eq!(SplitFractions::default().counts(10), (7, 1, 2));
    }

    #[test]
    fn invalid_fractions_name_the_field() {
        let bad = SplitFractions { train: 0.8, val: 0.1, test: 0.2 };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("sum to 1"), "{msg}");
        let neg = SplitFractions { train: 1.1, val: -0.1, test: 0.0 };
        let msg = neg.validate().unwrap_err().to_string();
        assert!(msg.contains("train"), "{msg}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&DatasetConfig { seed: 10, ..small() }).unwrap();
        assert_ne!(a.shapes.train[0].points, c.shapes.train[0].points);
    }

    #[test]
    fn imbalance_floors_train_count() {
        let mut cfg = small();
        cfg.num_per_class = 100;
        cfg.imbalance.insert(3, 0.1);
        let ds = generate_dataset(&cfg).unwrap();
        let count = |split: &[LabeledCloud], c: u32| split.iter().filter(|s| s.class == c).count();
        assert_eq!(count(&ds.shapes.train, 3), 7);
        assert_eq!(count(&ds.shapes.train, 2), 70);
        assert_eq!(count(&ds.shapes.val, 3), 10);
        assert_eq!(count(&ds.shapes.test, 3), 20);
    }

    #[test]
    fn scenes_have_disjoint_objects() {
        let ds = generate_dataset(&small()).unwrap();
        for (_, scenes) in ds.scenes.iter() {
            for scene in scenes {
                assert!((1..=MAX_OBJECTS_PER_SCENE).contains(&scene.objects.len()));
                for (i, a) in scene.objects.iter().enumerate() {
                    for b in &scene.objects[i + 1..] {
                        assert!(!boxes_overlap(&(a.center, a.size), &(b.center, b.size), 0.0));
                    }
                }
            }
        }
    }
}
