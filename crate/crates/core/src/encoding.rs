//! Positional encodings of 3D coordinates.
//!
//! Two encoders are available:
//!
//! * `sincos`: transformer-style. The output is split into three blocks of
//!   `D/3` values, one per axis; block `a` holds interleaved pairs
//!   `sin(p_a / t^(6j/D)), cos(p_a / t^(6j/D))` for `j in 0..D/6`.
//! * `fourier`: random Fourier features `[sin(2*pi*B*p); cos(2*pi*B*p)]` with
//!   `B` a `(D/2) x 3` Gaussian matrix scaled by `fourier_scale`, drawn from
//!   a ChaCha8 stream seeded with `fourier_seed`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    SinCos,
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Avg,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub kind: EncodingKind,
    pub dim: usize,
    pub temperature: f64,
    pub fourier_seed: u64,
    pub fourier_scale: f64,
}

impl EncodingSpec {
    pub fn sincos(dim: usize) -> Self {
        Self {
            kind: EncodingKind::SinCos,
            dim,
            temperature: DEFAULT_TEMPERATURE,
            fourier_seed: 0,
            fourier_scale: 1.0,
        }
    }

    pub fn fourier(dim: usize, seed: u64, scale: f64) -> Self {
        Self {
            kind: EncodingKind::Fourier,
            dim,
            temperature: DEFAULT_TEMPERATURE,
            fourier_seed: seed,
            fourier_scale: scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidEncoding("dimension must be positive".into()));
        }
        match self.kind {
            EncodingKind::SinCos => {
                if !self.dim.is_multiple_of(6) {
                    return Err(Error::InvalidEncoding(format!(
                        "sincos dimension {} is not divisible by 6",
                        self.dim
                    )));
                }
                if !(self.temperature > 0.0 && self.temperature.is_finite()) {
                    return Err(Error::InvalidEncoding(format!(
                        "temperature must be positive, got {}",
                        self.temperature
                    )));
                }
            }
            EncodingKind::Fourier => {
                if !self.dim.is_multiple_of(2) {
                    return Err(Error::InvalidEncoding(format!(
                        "fourier dimension {} is not even",
                        self.dim
                    )));
                }
                if !(self.fourier_scale > 0.0 && self.fourier_scale.is_finite()) {
                    return Err(Error::InvalidEncoding(format!(
                        "fourier scale must be positive, got {}",
                        self.fourier_scale
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A validated encoder. For the Fourier kind it owns the projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoder {
    spec: EncodingSpec,
    basis: Vec<[f64; 3]>,
}

impl PositionalEncoder {
    pub fn new(spec: EncodingSpec) -> Result<Self> {
        spec.validate()?;
        let basis = match spec.kind {
            EncodingKind::SinCos => Vec::new(),
            EncodingKind::Fourier => fourier_basis(spec.dim / 2, spec.fourier_seed, spec.fourier_scale),
        };
        Ok(Self { spec, basis })
    }

    /// Rebuilds an encoder from a persisted projection matrix.
    pub fn with_basis(spec: EncodingSpec, basis: Vec<[f64; 3]>) -> Result<Self> {
        spec.validate()?;
        let expected = match spec.kind {
            EncodingKind::SinCos => 0,
            EncodingKind::Fourier => spec.dim / 2,
        };
        if basis.len() != expected {
            return Err(Error::InvalidEncoding(format!(
                "basis has {} rows, expected {expected}",
                basis.len()
            )));
        }
        Ok(Self { spec, basis })
    }

    pub fn spec(&self) -> &EncodingSpec {
        &self.spec
    }

    pub fn basis(&self) -> &[[f64; 3]] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn encode(&self, p: [f32; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.dim];
        self.encode_into(p, &mut out);
        out
    }

    fn encode_into(&self, p: [f32; 3], out: &mut [f64]) {
        let d = self.spec.dim;
        match self.spec.kind {
            EncodingKind::SinCos => {
                let per_axis = d / 3;
                for (axis, &coord) in p.iter().enumerate() {
                    let block = &mut out[axis * per_axis..(axis + 1) * per_axis];
                    for j in 0..d / 6 {
                        let x = coord as f64 / self.spec.temperature.powf((6 * j) as f64 / d as f64);
                        block[2 * j] = x.sin();
                        block[2 * j + 1] = x.cos();
                    }
                }
            }
            EncodingKind::Fourier => {
                let half = d / 2;
                for (r, row) in self.basis.iter().enumerate() {
                    let z = 2.0 * PI * (row[0] * p[0] as f64 + row[1] * p[1] as f64 + row[2] * p[2] as f64);
                    out[r] = z.sin();
                    out[half + r] = z.cos();
                }
            }
        }
    }

    /// Pools per-point encodings into one global positional vector.
    pub fn global_vector(&self, points: &[[f32; 3]], pooling: Pooling) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Empty("point list"));
        }
        let mut scratch = vec![0.0; self.spec.dim];
        let mut acc = match pooling {
            Pooling::Avg => vec![0.0; self.spec.dim],
            Pooling::Max => vec![f64::NEG_INFINITY; self.spec.dim],
        };
        for &p in points {
            self.encode_into(p, &mut scratch);
            match pooling {
                Pooling::Avg => acc.iter_mut().zip(&scratch).for_each(|(a, v)| *a += v),
                Pooling::Max => acc.iter_mut().zip(&scratch).for_each(|(a, v)| *a = a.max(*v)),
            }
        }
        if pooling == Pooling::Avg {
            let n = points.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Ok(acc)
    }
}

fn fourier_basis(rows: usize, seed: u64, scale: f64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| {
            let mut row = [0.0; 3];
            for v in &mut row {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = g * scale;
            }
            row
        })
        .collect()
}

pub fn encode_position(p: [f32; 3], spec: &EncodingSpec) -> Result<Vec<f64>> {
    Ok(PositionalEncoder::new(spec.clone())?.encode(p))
}

pub fn global_position_vector(points: &[[f32; 3]], pooling: Pooling, spec: &EncodingSpec) -> Result<Vec<f64>> {
    PositionalEncoder::new(spec.clone())?.global_vector(points, pooling)
}

/// `feature + encoding`, rounded back to the f32 storage precision.
///
/// Both prototypes and queries go through this so an exact duplicate lands on
/// an identical vector.
pub fn add_encoding(feature: &[f32], encoding: &[f64]) -> Vec<f32> {
    feature
        .iter()
        .zip(encoding)
        .map(|(&f, &e)| (f as f64 + e) as f32)
        .collect()
}
