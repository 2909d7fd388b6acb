//! Visual feature providers: the per-point appearance channel.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::fpfh::estimate_surface;
use super::sidecar::read_kfea;
use super::FeatureError;
use crate::geometry::spatial::RadiusIndex;
use crate::geometry::{PointCloud, RgbdImage};

pub const DEFAULT_VISUAL_DIM: usize = 64;

pub trait VisualFeatureProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Row-major `N × dim()` features aligned with `cloud`.
    fn features_for_scene(&self, image: Option<&RgbdImage>, cloud: &PointCloud) -> Result<Vec<f64>, FeatureError>;
}

/// Random Fourier projection of color and local surface variation.
///
/// Inputs are invariant to rigid motion of the observed surface, so a point
/// keeps its feature row across object poses and camera views. The cosine of
/// two rows approximates a Gaussian kernel of the input difference.
#[derive(Debug, Clone)]
pub struct ProceduralProvider {
    dim: usize,
    /// `dim × INPUTS`, row-major.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    neighborhood: f64,
}

const INPUTS: usize = 4;
/// Weight of the surface-variation input relative to a color channel.
const VARIATION_GAIN: f64 = 1.5;

impl ProceduralProvider {
    pub const DEFAULT_SEED: u64 = 0x5eed_f00d;
    pub const DEFAULT_BANDWIDTH: f64 = 6.0;
    pub const DEFAULT_NEIGHBORHOOD: f64 = 0.02;

    pub fn new(dim: usize, bandwidth: f64, neighborhood: f64, seed: u64) -> Self {
        assert!(dim > 0, "visual dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies = (0..dim * INPUTS)
            .map(|_| bandwidth * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let phases = (0..dim).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        Self {
            dim,
            frequencies,
            phases,
            neighborhood,
        }
    }

    fn inputs(color: [u8; 3], variation: f64) -> [f64; INPUTS] {
        [
            color[0] as f64 / 255.0,
            color[1] as f64 / 255.0,
            color[2] as f64 / 255.0,
            VARIATION_GAIN * variation,
        ]
    }
}

impl Default for ProceduralProvider {
    fn default() -> Self {
        Self::new(
            DEFAULT_VISUAL_DIM,
            Self::DEFAULT_BANDWIDTH,
            Self::DEFAULT_NEIGHBORHOOD,
            Self::DEFAULT_SEED,
        )
    }
}

impl VisualFeatureProvider for ProceduralProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features_for_scene(&self, _image: Option<&RgbdImage>, cloud: &PointCloud) -> Result<Vec<f64>, FeatureError> {
        let index = RadiusIndex::new(&cloud.points, self.neighborhood);
        let patches = estimate_surface(cloud, &index, self.neighborhood);
        let scale = (2.0 / self.dim as f64).sqrt();
        let mut out = Vec::with_capacity(cloud.len() * self.dim);
        for (i, patch) in patches.iter().enumerate() {
            let color = cloud.color(i).unwrap_or([128, 128, 128]);
            let x = Self::inputs(color, patch.variation);
            for j in 0..self.dim {
                let w = &self.frequencies[j * INPUTS..(j + 1) * INPUTS];
                let arg: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + self.phases[j];
                out.push(scale * arg.cos());
            }
        }
        Ok(out)
    }
}

/// Precomputed per-point features from a KFEA sidecar file.
#[derive(Debug, Clone)]
pub struct FileProvider {
    path: PathBuf,
    dim: usize,
}

impl FileProvider {
    /// Reads the sidecar header to learn the feature dimension.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref().to_path_buf();
        let (_, dim, _) = read_kfea(&path)?;
        Ok(Self { path, dim })
    }
}

impl VisualFeatureProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features_for_scene(&self, _image: Option<&RgbdImage>, cloud: &PointCloud) -> Result<Vec<f64>, FeatureError> {
        let (n, _, values) = read_kfea(&self.path)?;
        if n != cloud.len() {
            return Err(FeatureError::IndexMismatch {
                expected: cloud.len(),
                actual: n,
            });
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::cosine_similarity;
    use crate::geometry::RigidTransform;
    use nalgebra::Vector3;

    fn colored_grid(color: [u8; 3]) -> PointCloud {
        let mut points = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                points.push(Vector3::new(i as f64 * 0.005, j as f64 * 0.005, 0.0));
            }
        }
        let n = points.len();
        PointCloud {
            colors: Some(vec![color; n]),
            ..PointCloud::from_points(points)
        }
    }

    #[test]
    fn deterministic_and_rigidly_invariant() {
        let p = ProceduralProvider::default();
        let cloud = colored_grid([200, 40, 90]);
        let a = p.features_for_scene(None, &cloud).unwrap();
        let b = p.features_for_scene(None, &cloud).unwrap();
        assert_eq!(a, b);
        let moved = cloud.transformed(&RigidTransform::from_yaw(0.7, Vector3::new(0.3, -0.2, 0.1)));
        let c = p.features_for_scene(None, &moved).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn different_colors_are_dissimilar() {
        let p = ProceduralProvider::default();
        let a = p.features_for_scene(None, &colored_grid([200, 40, 90])).unwrap();
        let b = p.features_for_scene(None, &colored_grid([40, 180, 60])).unwrap();
        let d = p.dim();
        let cos = cosine_similarity(&a[..d], &b[..d]).unwrap();
        assert!(cos < 0.9, "cos {cos}");
    }
}
