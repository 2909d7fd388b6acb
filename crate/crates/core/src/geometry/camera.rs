use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud, RigidTransform};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Calibrated RGBD frame. Depth is in meters along the optical axis;
/// non-positive or non-finite depth marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub color: Vec<[u8; 3]>,
    /// Row-major depth in meters.
    pub depth: Vec<f32>,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world pose.
    pub extrinsic: RigidTransform,
}

impl RgbdImage {
    pub fn new(
        width: usize,
        height: usize,
        color: Vec<[u8; 3]>,
        depth: Vec<f32>,
        intrinsics: CameraIntrinsics,
        extrinsic: RigidTransform,
    ) -> Result<Self, GeometryError> {
        let expected = width * height;
        if color.len() != expected {
            return Err(GeometryError::RasterSize {
                expected,
                actual: color.len(),
            });
        }
        if depth.len() != expected {
            return Err(GeometryError::RasterSize {
                expected,
                actual: depth.len(),
            });
        }
        Ok(Self {
            width,
            height,
            color,
            depth,
            intrinsics,
            extrinsic,
        })
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn in_bounds(&self, u: usize, v: usize) -> bool {
        u < self.width && v < self.height
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[self.index(u, v)]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        let d = self.depth_at(u, v);
        d.is_finite() && d > 0.0
    }

    /// Row-major validity mask.
    pub fn validity_mask(&self) -> Vec<bool> {
        self.depth.iter().map(|d| d.is_finite() && *d > 0.0).collect()
    }

    /// World-frame position of the camera center.
    pub fn camera_center(&self) -> Vector3<f64> {
        *self.extrinsic.translation()
    }
}

/// World point seen at pixel `(u, v)`.
pub fn deproject(image: &RgbdImage, u: usize, v: usize) -> Result<Vector3<f64>, GeometryError> {
    if !image.in_bounds(u, v) {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: image.width,
            height: image.height,
        });
    }
    if !image.is_valid(u, v) {
        return Err(GeometryError::InvalidDepth { u, v });
    }
    let d = image.depth_at(u, v) as f64;
    let k = &image.intrinsics;
    let camera_point = Vector3::new(d * (u as f64 - k.cx) / k.fx, d * (v as f64 - k.cy) / k.fy, d);
    Ok(image.extrinsic.apply(&camera_point))
}

/// Continuous pixel coordinates and depth of a world point, or `None` when it
/// is behind the camera.
pub fn project(
    intrinsics: &CameraIntrinsics,
    extrinsic: &RigidTransform,
    world: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let p = extrinsic.inverse().apply(world);
    if p.z <= 0.0 {
        return None;
    }
    let u = intrinsics.fx * p.x / p.z + intrinsics.cx;
    let v = intrinsics.fy * p.y / p.z + intrinsics.cy;
    Some((u, v, p.z))
}

/// One point per valid pixel on the `stride` grid, row-major order.
pub fn cloud_from_rgbd(image: &RgbdImage, stride: usize) -> Result<PointCloud, GeometryError> {
    if stride == 0 {
        return Err(GeometryError::ZeroStride);
    }
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut pixels = Vec::new();
    for v in (0..image.height).step_by(stride) {
        for u in (0..image.width).step_by(stride) {
            if let Ok(p) = deproject(image, u, v) {
                points.push(p);
                colors.push(image.color[image.index(u, v)]);
                pixels.push((u as u32, v as u32));
            }
        }
    }
    Ok(PointCloud {
        points,
        colors: Some(colors),
        pixels: Some(pixels),
        viewpoint: Some(image.camera_center()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 2.0,
            cy: 1.0,
        }
    }

    fn image(width: usize, height: usize, depth: f32, extrinsic: RigidTransform) -> RgbdImage {
        RgbdImage::new(
            width,
            height,
            vec![[10, 20, 30]; width * height],
            vec![depth; width * height],
            intrinsics(),
            extrinsic,
        )
        .unwrap()
    }

    #[test]
    fn principal_point_at_one_meter() {
        let img = image(5, 3, 1.0, RigidTransform::identity());
        assert_eq!(deproject(&img, 2, 1).unwrap(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn one_focal_length_right_at_two_meters() {
        let mut k = intrinsics();
        k.fx = 2.0;
        let img = RgbdImage::new(5, 3, vec![[0; 3]; 15], vec![2.0; 15], k, RigidTransform::identity()).unwrap();
        // u = cx + fx = 4
        assert_eq!(deproject(&img, 4, 1).unwrap(), Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn invalid_and_out_of_bounds() {
        let mut img = image(5, 3, 1.0, RigidTransform::identity());
        let i = img.index(1, 1);
        img.depth[i] = 0.0;
        let i = img.index(3, 1);
        img.depth[i] = f32::NAN;
        let i = img.index(4, 1);
        img.depth[i] = -1.0;
        assert!(matches!(deproject(&img, 1, 1), Err(GeometryError::InvalidDepth { .. })));
        assert!(matches!(deproject(&img, 3, 1), Err(GeometryError::InvalidDepth { .. })));
        assert!(matches!(deproject(&img, 4, 1), Err(GeometryError::InvalidDepth { .. })));
        assert!(matches!(deproject(&img, 5, 0), Err(GeometryError::OutOfBounds { .. })));
        assert_eq!(img.validity_mask().iter().filter(|v| !**v).count(), 3);
    }

    #[test]
    fn cloud_counts() {
        let img = image(2, 2, 1.0, RigidTransform::identity());
        let cloud = cloud_from_rgbd(&img, 1).unwrap();
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.pixels.as_ref().unwrap()[3], (1, 1));

        let empty = image(4, 4, 0.0, RigidTransform::identity());
        assert!(cloud_from_rgbd(&empty, 1).unwrap().is_empty());
        assert!(cloud_from_rgbd(&empty, 0).is_err());

        let strided = image(5, 3, 1.0, RigidTransform::identity());
        assert_eq!(cloud_from_rgbd(&strided, 2).unwrap().len(), 6);
    }

    #[test]
    fn deproject_then_project_is_identity() {
        let extrinsic = RigidTransform::look_at(
            Vector3::new(0.4, -0.3, 0.8),
            Vector3::new(0.0, 0.1, 0.0),
            Vector3::z(),
        )
        .unwrap();
        let mut img = image(5, 3, 0.0, extrinsic);
        for (i, d) in img.depth.iter_mut().enumerate() {
            *d = 0.5 + 0.125 * i as f32;
        }
        for v in 0..3 {
            for u in 0..5 {
                let p = deproject(&img, u, v).unwrap();
                let (pu, pv, pd) = project(&img.intrinsics, &img.extrinsic, &p).unwrap();
                assert!((pu - u as f64).abs() < 1e-9);
                assert!((pv - v as f64).abs() < 1e-9);
                assert!((pd - img.depth_at(u, v) as f64).abs() < 1e-9);
            }
        }
    }
}
