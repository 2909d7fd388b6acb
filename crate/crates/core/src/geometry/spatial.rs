//! Uniform-grid index for fixed-radius neighbor queries.

use std::collections::HashMap;

use nalgebra::Vector3;

pub struct RadiusIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> RadiusIndex<'a> {
    /// `cell` should be close to the query radius; it must be positive.
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i);
        }
        Self { points, cell, buckets }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        self.points
    }

    /// Indices (ascending) of all points with distance ≤ `radius` from `center`.
    pub fn within(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Like [`within`](Self::within) but also returns distances.
    pub fn within_with_distance(&self, center: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, |i, d| out.push((i, d)));
        out.sort_unstable_by_key(|(i, _)| *i);
        out
    }

    fn for_each_within(&self, center: &Vector3<f64>, radius: f64, mut f: impl FnMut(usize, f64)) {
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = key(center, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            let d = (self.points[i] - center).norm();
                            if d <= radius {
                                f(i, d);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
