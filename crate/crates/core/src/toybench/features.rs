//! Handcrafted global and per-point descriptors.
//!
//! Every descriptor is computed on the lexicographically sorted copy of the
//! cloud, so global features are exactly permutation-invariant and point
//! features exactly permutation-equivariant.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shapes::{Point, MIN_POINTS};
use crate::error::{Error, Result};

pub const GLOBAL_DIM: usize = 66;
pub const POINT_DIM: usize = 32;
pub const LOCAL_NEIGHBORS: usize = 16;

const BINS: usize = 16;
const RADIAL_RANGE: f64 = 2.0;
const HEIGHT_RANGE: f64 = 3.0;
const PAIRWISE_RANGE: f64 = 4.0;
const PAIRWISE_SUBSET: usize = 64;
const SUBSET_SEED: u64 = 0x5_eed0_f5e7;
const TINY: f64 = 1e-12;

fn check_size(points: &[Point]) -> Result<()> {
    if points.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: points.len(),
            min: MIN_POINTS,
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("cloud contains non-finite coordinates".into()));
    }
    Ok(())
}

/// Indices that sort the cloud lexicographically by (x, y, z).
fn canonical_order(points: &[Point]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
    });
    order
}

fn widen(p: Point) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.map(|v| v / n)
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn histogram(values: impl Iterator<Item = f64>, range: f64, out: &mut Vec<f64>) {
    let mut counts = [0usize; BINS];
    let mut total = 0usize;
    for v in values {
        let bin = ((v / range) * BINS as f64).floor();
        let bin = if bin.is_nan() || bin < 0.0 { 0 } else { (bin as usize).min(BINS - 1) };
        counts[bin] += 1;
        total += 1;
    }
    let total = total.max(1) as f64;
    out.extend(counts.iter().map(|&c| c as f64 / total));
}

/// Eigenvalues of the covariance of `offsets`, descending.
fn covariance_eigenvalues(offsets: &[[f64; 3]]) -> [f64; 3] {
    let n = offsets.len().max(1) as f64;
    let mut m = Matrix3::<f64>::zeros();
    for d in offsets {
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += d[i] * d[j];
            }
        }
    }
    m /= n;
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// Raw (unstandardized) global descriptor of length [`GLOBAL_DIM`].
pub fn extract_features(points: &[Point]) -> Result<Vec<f64>> {
    check_size(points)?;
    let pts: Vec<[f64; 3]> = canonical_order(points).into_iter().map(|i| widen(points[i])).collect();
    let n = pts.len();
    let c = centroid(&pts);
    let offsets: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    let radii: Vec<f64> = offsets.iter().map(|d| norm(*d)).collect();

    let mut f = Vec::with_capacity(GLOBAL_DIM);
    histogram(radii.iter().copied(), RADIAL_RANGE, &mut f);
    f.extend(covariance_eigenvalues(&offsets));
    for a in 0..3 {
        let m1 = offsets.iter().map(|d| d[a].abs()).sum::<f64>() / n as f64;
        let m2 = offsets.iter().map(|d| d[a] * d[a]).sum::<f64>() / n as f64;
        let m3 = offsets.iter().map(|d| d[a] * d[a] * d[a]).sum::<f64>() / n as f64;
        f.extend([m1, m2, m3]);
    }
    let zmin = pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    histogram(pts.iter().map(|p| p[2] - zmin), HEIGHT_RANGE, &mut f);

    let mut subset: Vec<usize> = (0..n).collect();
    subset.shuffle(&mut ChaCha8Rng::seed_from_u64(SUBSET_SEED));
    subset.truncate(PAIRWISE_SUBSET);
    subset.sort_unstable();
    let pair_distances = subset.iter().enumerate().flat_map(|(i, &a)| {
        let pts = &pts;
        subset[i + 1..].iter().map(move |&b| {
            norm([pts[a][0] - pts[b][0], pts[a][1] - pts[b][1], pts[a][2] - pts[b][2]])
        })
    });
    histogram(pair_distances, PAIRWISE_RANGE, &mut f);

    let mean_r = radii.iter().sum::<f64>() / n as f64;
    let max_r = radii.iter().copied().fold(0.0, f64::max);
    let var_r = radii.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n as f64;
    let nf = n as f64;
    f.extend([nf.ln(), 1.0 / nf, 1.0 / nf.sqrt(), mean_r, max_r, var_r.sqrt()]);
    debug_assert_eq!(f.len(), GLOBAL_DIM);
    Ok(f)
}

/// Raw per-point descriptors, one row of length [`POINT_DIM`] per input point,
/// in input order.
pub fn extract_point_features(points: &[Point]) -> Result<Vec<Vec<f64>>> {
    check_size(points)?;
    let order = canonical_order(points);
    let pts: Vec<[f64; 3]> = order.iter().map(|&i| widen(points[i])).collect();
    let n = pts.len();
    let c = centroid(&pts);
    let max_r = pts
        .iter()
        .map(|p| norm([p[0] - c[0], p[1] - c[1], p[2] - c[2]]))
        .fold(0.0, f64::max);
    let mut zs: Vec<f64> = pts.iter().map(|p| p[2]).collect();
    zs.sort_by(f64::total_cmp);

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| point_row(&pts, i, c, max_r, &zs))
        .collect();

    let mut out = vec![Vec::new(); n];
    for (canonical, &original) in order.iter().enumerate() {
        out[original] = rows[canonical].clone();
    }
    Ok(out)
}

fn point_row(pts: &[[f64; 3]], i: usize, c: [f64; 3], max_r: f64, sorted_z: &[f64]) -> Vec<f64> {
    let p = pts[i];
    let n = pts.len();
    let mut others: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| {
            let d = [pts[j][0] - p[0], pts[j][1] - p[1], pts[j][2] - p[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], j)
        })
        .collect();
    let k = LOCAL_NEIGHBORS.min(others.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < others.len() {
        others.select_nth_unstable_by(k - 1, cmp);
        others.truncate(k);
    }
    others.sort_by(cmp);

    let neighbors: Vec<[f64; 3]> = others.iter().map(|&(_, j)| pts[j]).collect();
    let local_c = centroid(&neighbors);
    let offsets: Vec<[f64; 3]> = neighbors
        .iter()
        .map(|q| [q[0] - local_c[0], q[1] - local_c[1], q[2] - local_c[2]])
        .collect();
    let ev = covariance_eigenvalues(&offsets);
    let trace = ev[0] + ev[1] + ev[2];
    let dists: Vec<f64> = others.iter().map(|&(d2, _)| d2.sqrt()).collect();
    let mean_d = dists.iter().sum::<f64>() / k as f64;
    let max_d = dists.iter().copied().fold(0.0, f64::max);
    let std_d = (dists.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / k as f64).sqrt();

    let rel = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    let r = norm(rel);
    let mean_offset = [local_c[0] - p[0], local_c[1] - p[1], local_c[2] - p[2]];

    // eigenvector of the smallest eigenvalue approximates the surface normal
    let normal = local_normal(&offsets);

    let below = sorted_z.partition_point(|&z| z < p[2]);
    let equal = sorted_z.partition_point(|&z| z <= p[2]) - below;
    let quantile = (below as f64 + 0.5 * equal as f64) / n as f64;

    let ratio = |v: f64| if trace > TINY { v / trace } else { 0.0 };
    let unit = |v: f64| if r > TINY { v / r } else { 0.0 };
    let mut row = Vec::with_capacity(POINT_DIM);
    row.extend(rel);
    row.push(r);
    row.push(if max_r > TINY { r / max_r } else { 0.0 });
    row.extend(rel.map(unit));
    row.extend(mean_offset);
    row.push(norm(mean_offset));
    row.push(trace);
    row.extend([ratio(ev[0]), ratio(ev[1]), ratio(ev[2])]);
    let (linearity, planarity, scattering) = if ev[0] > TINY {
        ((ev[0] - ev[1]) / ev[0], (ev[1] - ev[2]) / ev[0], ev[2] / ev[0])
    } else {
        (0.0, 0.0, 0.0)
    };
    row.extend([linearity, planarity, scattering]);
    row.extend(normal.map(f64::abs));
    row.push(normal[0] * unit(rel[0]) + normal[1] * unit(rel[1]) + normal[2] * unit(rel[2]));
    row.extend([mean_d, max_d, std_d]);
    row.push(quantile);
    row.push(p[2] - sorted_z[0]);
    row.push((rel[0] * rel[0] + rel[1] * rel[1]).sqrt());
    row.push(rel[2].abs());
    row.push(rel[0] * rel[1]);
    row.push(1.0 / (1.0 + mean_d));
    debug_assert_eq!(row.len(), POINT_DIM);
    row
}

fn local_normal(offsets: &[[f64; 3]]) -> [f64; 3] {
    let mut m = Matrix3::<f64>::zeros();
    for d in offsets {
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += d[i] * d[j];
            }
        }
    }
    if m.iter().all(|v| v.abs() <= TINY) {
        return [0.0; 3];
    }
    let eig = SymmetricEigen::new(m);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    let v = eig.eigenvectors.column(idx);
    // sign is arbitrary; callers use magnitudes or products with it
    let s = if v[2] < 0.0 || (v[2] == 0.0 && (v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0))) { -1.0 } else { 1.0 };
    [s * v[0], s * v[1], s * v[2]]
}

/// Componentwise z-scoring with statistics taken from the train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("standardizer rows"))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // constant components map to zero instead of dividing by zero
        let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-9 { s } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f32>> {
        if row.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| ((v - m) / s) as f32)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toybench::shapes::{sample_shape, ShapeClass, ShapeSpec};
    use proptest::prelude::*;

    fn cloud(class: ShapeClass, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_shape(&ShapeSpec::new(class), &mut rng).unwrap().points
    }

    #[test]
    fn dimensions_and_finiteness() {
        let pts = cloud(ShapeClass::Torus, 3);
        let f = extract_features(&pts).unwrap();
        assert_eq!(f.len(), GLOBAL_DIM);
        assert!(f.iter().all(|v| v.is_finite()));
        let rows = extract_point_features(&pts).unwrap();
        assert_eq!(rows.len(), pts.len());
        assert!(rows.iter().all(|r| r.len() == POINT_DIM && r.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn histograms_are_normalized() {
        let f = extract_features(&cloud(ShapeClass::Cube, 4)).unwrap();
        for range in [0..16, 28..44, 44..60] {
            let s: f64 = f[range].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![[0.0f32; 3]; 15];
        assert!(matches!(extract_features(&pts), Err(Error::TooFewPoints { found: 15, .. })));
        assert!(matches!(extract_point_features(&pts), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn constant_cloud_has_no_nan() {
        let pts = vec![[0.3f32, -0.2, 1.0]; 40];
        assert!(extract_features(&pts).unwrap().iter().all(|v| v.is_finite()));
        let rows = extract_point_features(&pts).unwrap();
        assert!(rows.iter().flatten().all(|v| v.is_finite()));
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn scaling_changes_features() {
        let pts = cloud(ShapeClass::Sphere, 5);
        let scaled: Vec<Point> = pts.iter().map(|p| p.map(|v| v * 1.7)).collect();
        assert_ne!(extract_features(&pts).unwrap(), extract_features(&scaled).unwrap());
    }

    #[test]
    fn eigenvalues_match_diagonal_oracle() {
        // axis-aligned box samples: covariance is diagonal by symmetry
        let mut pts = Vec::new();
        for &x in &[-2.0f32, 2.0] {
            for &y in &[-1.0f32, 1.0] {
                for &z in &[-0.5f32, 0.5] {
                    pts.push([x, y, z]);
                    pts.push([x, y, z]);
                }
            }
        }
        let f = extract_features(&pts).unwrap();
        let ev = &f[16..19];
        for (got, want) in ev.iter().zip([4.0, 1.0, 0.25]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![3.0, 5.0]);
        let z: Vec<Vec<f32>> = rows.iter().map(|r| s.apply(r).unwrap()).collect();
        let sd = (8.0f64 / 3.0).sqrt();
        assert!((z[0][0] as f64 + 2.0 / sd).abs() < 1e-6);
        assert_eq!(z[1], vec![0.0, 0.0]);
        assert!(matches!(s.apply(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn global_features_permutation_invariant(seed in 0u64..1000, class in 0u32..8) {
            let pts = cloud(ShapeClass::from_index(class).unwrap(), seed);
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
            prop_assert_eq!(extract_features(&pts).unwrap(), extract_features(&shuffled).unwrap());
        }

        #[test]
        fn point_features_permutation_equivariant(seed in 0u64..1000, class in 0u32..8) {
            let pts: Vec<Point> = cloud(ShapeClass::from_index(class).unwrap(), seed)[..96].to_vec();
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 2));
            let shuffled: Vec<Point> = perm.iter().map(|&i| pts[i]).collect();
            let a = extract_point_features(&pts).unwrap();
            let b = extract_point_features(&shuffled).unwrap();
            for (row, &i) in b.iter().zip(&perm) {
                prop_assert_eq!(row, &a[i]);
            }
        }
    }
}
