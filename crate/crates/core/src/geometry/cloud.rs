use nalgebra::Vector3;

use super::RigidTransform;

/// World-frame point cloud with optional per-point color and source pixel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    /// `(u, v)` pixel each point was deprojected from.
    pub pixels: Option<Vec<(u32, u32)>>,
    /// Position of the observing camera, used to orient normals.
    pub viewpoint: Option<Vector3<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            colors: self.colors.clone(),
            pixels: self.pixels.clone(),
            viewpoint: self.viewpoint.map(|v| t.apply(&v)),
        }
    }

    pub fn color(&self, index: usize) -> Option<[u8; 3]> {
        self.colors.as_ref().map(|c| c[index])
    }

    /// Cloud restricted to `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            pixels: self.pixels.as_ref().map(|p| indices.iter().map(|&i| p[i]).collect()),
            viewpoint: self.viewpoint,
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }
}
