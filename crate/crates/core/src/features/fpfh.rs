//! Fast Point Feature Histograms.
//!
//! Per-point SPFH over the Darboux frame of each (point, neighbor) pair,
//! followed by inverse-distance aggregation of neighbor SPFHs. Each of the
//! three 11-bin sub-histograms of a non-zero row sums to 100.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::geometry::spatial::RadiusIndex;
use crate::geometry::PointCloud;

pub const FPFH_BINS: usize = 11;
pub const FPFH_DIM: usize = 3 * FPFH_BINS;

/// Local PCA of one neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePatch {
    /// Unit normal oriented toward the viewpoint, `None` when degenerate.
    pub normal: Option<Vector3<f64>>,
    /// `λ_min / (λ_0 + λ_1 + λ_2)`, zero for degenerate patches.
    pub variation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpfhField {
    /// Row-major `N × 33`.
    pub rows: Vec<f64>,
    /// True where the row is zero: no neighbors or degenerate normal.
    pub degenerate: Vec<bool>,
}

impl FpfhField {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * FPFH_DIM..(i + 1) * FPFH_DIM]
    }

    pub fn len(&self) -> usize {
        self.degenerate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degenerate.is_empty()
    }
}

/// PCA normals over the `radius` ball (self included). Normals are flipped to
/// face the cloud's viewpoint, or +z when the cloud has none.
pub fn estimate_surface(cloud: &PointCloud, index: &RadiusIndex<'_>, radius: f64) -> Vec<SurfacePatch> {
    let points = &cloud.points;
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = index.within(&points[i], radius);
            patch_for(points, i, &neighbors, cloud.viewpoint.as_ref())
        })
        .collect()
}

fn patch_for(
    points: &[Vector3<f64>],
    i: usize,
    neighbors: &[usize],
    viewpoint: Option<&Vector3<f64>>,
) -> SurfacePatch {
    const DEGENERATE: SurfacePatch = SurfacePatch {
        normal: None,
        variation: 0.0,
    };
    if neighbors.len() < 3 {
        return DEGENERATE;
    }
    let n = neighbors.len() as f64;
    let mean: Vector3<f64> = neighbors.iter().map(|&j| points[j]).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for &j in neighbors {
        let d = points[j] - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    if hi <= 0.0 || mid <= 1e-10 * hi {
        return DEGENERATE;
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let toward = match viewpoint {
        Some(vp) => vp - points[i],
        None => Vector3::z(),
    };
    if normal.dot(&toward) < 0.0 {
        normal = -normal;
    }
    SurfacePatch {
        normal: Some(normal),
        variation: lo / (lo + mid + hi),
    }
}

/// Darboux-frame pair features `(θ, α, φ)`; `None` for coincident points or
/// a degenerate frame.
fn pair_features(
    p1: &Vector3<f64>,
    n1: &Vector3<f64>,
    p2: &Vector3<f64>,
    n2: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let angle1 = n1.dot(&dp) / dist;
    let angle2 = n2.dot(&dp) / dist;
    // Source is the point whose normal makes the smaller angle with the line.
    let (src, tgt, phi) = if angle1.abs().acos() > angle2.abs().acos() {
        dp = -dp;
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let v = dp.cross(src);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return None;
    }
    let v = v / v_norm;
    let w = src.cross(&v);
    let alpha = v.dot(tgt);
    let theta = w.dot(tgt).atan2(src.dot(tgt));
    Some((theta, alpha, phi))
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let idx = (FPFH_BINS as f64 * (value - lo) / (hi - lo)).floor();
    (idx.max(0.0) as usize).min(FPFH_BINS - 1)
}

fn spfh(points: &[Vector3<f64>], normals: &[SurfacePatch], i: usize, neighbors: &[usize]) -> [f64; FPFH_DIM] {
    let mut hist = [0.0; FPFH_DIM];
    let Some(ni) = normals[i].normal else {
        return hist;
    };
    let mut pairs = 0usize;
    for &j in neighbors {
        if j == i {
            continue;
        }
        let Some(nj) = normals[j].normal else { continue };
        if let Some((theta, alpha, phi)) = pair_features(&points[i], &ni, &points[j], &nj) {
            hist[bin(theta, -std::f64::consts::PI, std::f64::consts::PI)] += 1.0;
            hist[FPFH_BINS + bin(alpha, -1.0, 1.0)] += 1.0;
            hist[2 * FPFH_BINS + bin(phi, -1.0, 1.0)] += 1.0;
            pairs += 1;
        }
    }
    if pairs > 0 {
        let scale = 100.0 / pairs as f64;
        hist.iter_mut().for_each(|h| *h *= scale);
    }
    hist
}

fn normalize_subhistograms(hist: &mut [f64; FPFH_DIM]) {
    for chunk in hist.chunks_mut(FPFH_BINS) {
        let sum: f64 = chunk.iter().sum();
        if sum > 0.0 {
            let scale = 100.0 / sum;
            chunk.iter_mut().for_each(|h| *h *= scale);
        }
    }
}

/// FPFH rows for every point of `cloud` using neighbors within `radius`.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> FpfhField {
    assert!(radius > 0.0 && radius.is_finite(), "FPFH radius must be positive");
    let points = &cloud.points;
    let index = RadiusIndex::new(points, radius);
    let normals = estimate_surface(cloud, &index, radius);
    let neighborhoods: Vec<Vec<(usize, f64)>> = (0..points.len())
        .into_par_iter()
        .map(|i| index.within_with_distance(&points[i], radius))
        .collect();
    let spfhs: Vec<[f64; FPFH_DIM]> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let ids: Vec<usize> = neighborhoods[i].iter().map(|(j, _)| *j).collect();
            spfh(points, &normals, i, &ids)
        })
        .collect();

    let rows: Vec<([f64; FPFH_DIM], bool)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            if normals[i].normal.is_none() {
                return ([0.0; FPFH_DIM], true);
            }
            let mut hist = spfhs[i];
            let mut weighted = [0.0; FPFH_DIM];
            let mut k = 0usize;
            for &(j, d) in &neighborhoods[i] {
                if j == i || d == 0.0 || normals[j].normal.is_none() {
                    continue;
                }
                let w = 1.0 / d;
                for (acc, v) in weighted.iter_mut().zip(spfhs[j].iter()) {
                    *acc += w * v;
                }
                k += 1;
            }
            if k > 0 {
                let inv_k = 1.0 / k as f64;
                for (h, v) in hist.iter_mut().zip(weighted.iter()) {
                    *h += inv_k * v;
                }
            }
            normalize_subhistograms(&mut hist);
            let zero = hist.iter().all(|v| *v == 0.0);
            (hist, zero)
        })
        .collect();

    let mut flat = Vec::with_capacity(points.len() * FPFH_DIM);
    let mut degenerate = Vec::with_capacity(points.len());
    for (row, flag) in rows {
        flat.extend_from_slice(&row);
        degenerate.push(flag);
    }
    FpfhField { rows: flat, degenerate }
}
