//! Procedural surface samplers for eight primitive shapes, with a geometric
//! part labelling per shape.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f32; 3];

pub const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Ellipsoid,
    Prism,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Pyramid,
        ShapeClass::Ellipsoid,
        ShapeClass::Prism,
    ];

    pub fn index(self) -> u32 {
        Self::ALL.iter().position(|&c| c == self).expect("listed") as u32
    }

    pub fn from_index(index: u32) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Ellipsoid => "ellipsoid",
            ShapeClass::Prism => "prism",
        }
    }

    /// Local part names, in local index order.
    pub fn part_names(self) -> &'static [&'static str] {
        match self {
            ShapeClass::Sphere => &["north", "south"],
            ShapeClass::Cube => &["top", "side", "bottom"],
            ShapeClass::Cylinder => &["top", "side", "bottom"],
            ShapeClass::Cone => &["base", "lateral"],
            ShapeClass::Torus => &["outer", "inner"],
            ShapeClass::Pyramid => &["base", "faces"],
            ShapeClass::Ellipsoid => &["upper", "lower"],
            ShapeClass::Prism => &["top", "side", "bottom"],
        }
    }

    /// Offset of this class's parts in the global part vocabulary.
    pub fn part_offset(self) -> u32 {
        Self::ALL[..self.index() as usize]
            .iter()
            .map(|c| c.part_names().len() as u32)
            .sum()
    }

    pub fn global_parts(self) -> Vec<u32> {
        let offset = self.part_offset();
        (0..self.part_names().len() as u32).map(|p| offset + p).collect()
    }
}

pub fn class_names() -> Vec<String> {
    ShapeClass::ALL.iter().map(|c| c.name().to_owned()).collect()
}

/// Global part vocabulary, `<class>_<part>`.
pub fn part_names() -> Vec<String> {
    ShapeClass::ALL
        .iter()
        .flat_map(|c| c.part_names().iter().map(move |p| format!("{}_{p}", c.name())))
        .collect()
}

pub fn valid_part_map() -> Vec<Vec<u32>> {
    ShapeClass::ALL.iter().map(|c| c.global_parts()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    pub points: usize,
    pub jitter: f64,
    pub scale_range: (f64, f64),
    /// Per-axis stretch is drawn from `[1 - anisotropy, 1 + anisotropy]`.
    pub anisotropy: f64,
    /// Rotation about z in radians; `None` draws it uniformly.
    pub rotation: Option<f64>,
}

impl ShapeSpec {
    pub fn new(class: ShapeClass) -> Self {
        Self {
            class,
            points: 512,
            jitter: 0.02,
            scale_range: (0.8, 1.2),
            anisotropy: 0.25,
            rotation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < MIN_POINTS {
            return Err(Error::TooFewPoints {
                found: self.points,
                min: MIN_POINTS,
            });
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidConfig(format!("jitter must be nonnegative, got {}", self.jitter)));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig(format!("invalid scale range ({lo}, {hi})")));
        }
        if !(0.0..1.0).contains(&self.anisotropy) {
            return Err(Error::InvalidConfig(format!("anisotropy must lie in [0, 1), got {}", self.anisotropy)));
        }
        Ok(())
    }
}

/// A sampled cloud with one global part label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub class: u32,
    pub points: Vec<Point>,
    pub parts: Vec<u32>,
}

/// Samples `spec.points` surface points. Deterministic for a given rng state.
pub fn sample_shape<R: Rng + ?Sized>(spec: &ShapeSpec, rng: &mut R) -> Result<LabeledCloud> {
    spec.validate()?;
    let scale = rng.random_range(spec.scale_range.0..=spec.scale_range.1);
    let stretch: [f64; 3] = std::array::from_fn(|_| {
        if spec.anisotropy > 0.0 {
            rng.random_range(1.0 - spec.anisotropy..=1.0 + spec.anisotropy)
        } else {
            1.0
        }
    });
    let angle = spec.rotation.unwrap_or_else(|| rng.random_range(0.0..TAU));
    let (sin, cos) = angle.sin_cos();
    let noise = Normal::new(0.0, spec.jitter.max(0.0)).expect("valid sigma");
    let offset = spec.class.part_offset();

    let mut points = Vec::with_capacity(spec.points);
    let mut parts = Vec::with_capacity(spec.points);
    for _ in 0..spec.points {
        let (p, local_part) = surface_point(spec.class, rng);
        let s = [p[0] * scale * stretch[0], p[1] * scale * stretch[1], p[2] * scale * stretch[2]];
        let r = [cos * s[0] - sin * s[1], sin * s[0] + cos * s[1], s[2]];
        let j: [f64; 3] = std::array::from_fn(|a| r[a] + if spec.jitter > 0.0 { noise.sample(rng) } else { 0.0 });
        points.push([j[0] as f32, j[1] as f32, j[2] as f32]);
        parts.push(offset + local_part);
    }
    Ok(LabeledCloud {
        class: spec.class.index(),
        points,
        parts,
    })
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    (r * t.cos(), r * t.sin())
}

/// Uniform point in the triangle (a, b, c).
fn triangle<R: Rng + ?Sized>(rng: &mut R, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    std::array::from_fn(|i| a[i] + u * (b[i] - a[i]) + v * (c[i] - a[i]))
}

fn surface_point<R: Rng + ?Sized>(class: ShapeClass, rng: &mut R) -> ([f64; 3], u32) {
    match class {
        ShapeClass::Sphere => {
            let p = unit_sphere(rng);
            (p, if p[2] >= 0.0 { 0 } else { 1 })
        }
        ShapeClass::Ellipsoid => {
            let p = unit_sphere(rng);
            ([p[0] * 1.2, p[1] * 0.7, p[2] * 0.6], if p[2] >= 0.0 { 0 } else { 1 })
        }
        ShapeClass::Cube => {
            let h = 0.8;
            let face = rng.random_range(0..6);
            let (u, v) = (rng.random_range(-h..h), rng.random_range(-h..h));
            match face {
                0 => ([u, v, h], 0),
                1 => ([u, v, -h], 2),
                2 => ([h, u, v], 1),
                3 => ([-h, u, v], 1),
                4 => ([u, h, v], 1),
                _ => ([u, -h, v], 1),
            }
        }
        ShapeClass::Cylinder => {
            let (r, h) = (0.7, 0.9);
            let cap = PI * r * r;
            let side = TAU * r * 2.0 * h;
            let pick = rng.random_range(0.0..2.0 * cap + side);
            if pick < cap {
                let (x, y) = disk(rng, r);
                ([x, y, h], 0)
            } else if pick < 2.0 * cap {
                let (x, y) = disk(rng, r);
                ([x, y, -h], 2)
            } else {
                let t = rng.random_range(0.0..TAU);
                ([r * t.cos(), r * t.sin(), rng.random_range(-h..h)], 1)
            }
        }
        ShapeClass::Cone => {
            let (r, h) = (0.9, 0.9);
            let base = PI * r * r;
            let slant = (r * r + 4.0 * h * h).sqrt();
            let lateral = PI * r * slant;
            if rng.random_range(0.0..base + lateral) < base {
                let (x, y) = disk(rng, r);
                ([x, y, -h], 0)
            } else {
                // area grows linearly with distance from the apex
                let s = rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..TAU);
                ([s * r * t.cos(), s * r * t.sin(), h - 2.0 * h * s], 1)
            }
        }
        ShapeClass::Torus => {
            let (big, small) = (0.8, 0.3);
            loop {
                let phi = rng.random_range(0.0..TAU);
                let weight = (big + small * phi.cos()) / (big + small);
                if rng.random::<f64>() <= weight {
                    let theta = rng.random_range(0.0..TAU);
                    let ring = big + small * phi.cos();
                    let p = [ring * theta.cos(), ring * theta.sin(), small * phi.sin()];
                    return (p, if phi.cos() >= 0.0 { 0 } else { 1 });
                }
            }
        }
        ShapeClass::Pyramid => {
            let (h, z): (f64, f64) = (0.8, 0.8);
            let base_area = 4.0 * h * h;
            let face_area = 2.0 * h * (h * h + 4.0 * z * z).sqrt();
            let pick = rng.random_range(0.0..base_area + 4.0 * face_area);
            if pick < base_area {
                ([rng.random_range(-h..h), rng.random_range(-h..h), -z], 0)
            } else {
                let corners = [[h, h], [-h, h], [-h, -h], [h, -h]];
                let f = ((pick - base_area) / face_area).floor().min(3.0) as usize;
                let (a, b) = (corners[f], corners[(f + 1) % 4]);
                (triangle(rng, [a[0], a[1], -z], [b[0], b[1], -z], [0.0, 0.0, z]), 1)
            }
        }
        ShapeClass::Prism => {
            let (r, h) = (0.9, 0.8);
            let verts: Vec<[f64; 2]> = (0..3)
                .map(|i| {
                    let t = PI / 2.0 + TAU * i as f64 / 3.0;
                    [r * t.cos(), r * t.sin()]
                })
                .collect();
            let edge = r * 3f64.sqrt();
            let cap = 3f64.sqrt() / 4.0 * edge * edge;
            let side = edge * 2.0 * h;
            let pick = rng.random_range(0.0..2.0 * cap + 3.0 * side);
            let tri = |rng: &mut R, z: f64| {
                triangle(rng, [verts[0][0], verts[0][1], z], [verts[1][0], verts[1][1], z], [verts[2][0], verts[2][1], z])
            };
            if pick < cap {
                (tri(rng, h), 0)
            } else if pick < 2.0 * cap {
                (tri(rng, -h), 2)
            } else {
                let f = ((pick - 2.0 * cap) / side).floor().min(2.0) as usize;
                let (a, b) = (verts[f], verts[(f + 1) % 3]);
                let t = rng.random::<f64>();
                ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), rng.random_range(-h..h)], 1)
            }
        }
    }
}
