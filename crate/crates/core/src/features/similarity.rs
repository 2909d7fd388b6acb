use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Weights of the visual and geometric cosine terms in the combined score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityWeights {
    pub lambda_vis: f64,
    pub lambda_geo: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            lambda_vis: 0.75,
            lambda_geo: 0.25,
        }
    }
}

impl SimilarityWeights {
    pub fn new(lambda_vis: f64, lambda_geo: f64) -> Result<Self, FeatureError> {
        if !(lambda_vis >= 0.0 && lambda_geo >= 0.0) || !lambda_vis.is_finite() || !lambda_geo.is_finite() {
            return Err(FeatureError::InvalidWeights);
        }
        Ok(Self { lambda_vis, lambda_geo })
    }

    pub fn total(&self) -> f64 {
        self.lambda_vis + self.lambda_geo
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of two rows whose norms are already known. Shares its arithmetic
/// with [`cosine_similarity`] so cached-norm callers get identical results.
#[inline]
pub(crate) fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    dot(a, b) / (na * nb)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(FeatureError::ZeroVector);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

/// `λ_vis·cos(q_vis, r_vis) + λ_geo·cos(q_geo, r_geo)`.
pub fn combined_similarity(
    q_vis: &[f64],
    q_geo: &[f64],
    r_vis: &[f64],
    r_geo: &[f64],
    weights: &SimilarityWeights,
) -> Result<f64, FeatureError> {
    let vis = cosine_similarity(q_vis, r_vis)?;
    let geo = cosine_similarity(q_geo, r_geo)?;
    Ok(weights.lambda_vis * vis + weights.lambda_geo * geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_basics() {
        let v = [1.0, 2.0, 3.0];
        let neg = [-1.0, -2.0, -3.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(FeatureError::ZeroVector));
    }

    #[test]
    fn combined_defaults() {
        let w = SimilarityWeights::default();
        let a = [0.3, -0.2, 0.9];
        let g = [1.0, 5.0, 0.0, 2.0];
        assert!((combined_similarity(&a, &g, &a, &g, &w).unwrap() - 1.0).abs() < 1e-15);

        // cos_vis = 0.8, cos_geo = 0.4
        let qv = [1.0, 0.0];
        let rv = [0.8, 0.6];
        let qg = [1.0, 0.0];
        let rg = [0.4, 0.916_515_138_991_168];
        let s = combined_similarity(&qv, &qg, &rv, &rg, &w).unwrap();
        assert!((s - 0.7).abs() < 1e-12);

        let visual_only = SimilarityWeights::new(0.75, 0.0).unwrap();
        let s = combined_similarity(&qv, &qg, &rv, &rg, &visual_only).unwrap();
        assert!((s - 0.75 * 0.8).abs() < 1e-12);
        let pure = SimilarityWeights::new(1.0, 0.0).unwrap();
        let s = combined_similarity(&qv, &qg, &rv, &rg, &pure).unwrap();
        assert!((s - cosine_similarity(&qv, &rv).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(SimilarityWeights::new(-0.1, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn combined_is_bounded(
            qv in prop::collection::vec(-1.0f64..1.0, 5),
            rv in prop::collection::vec(-1.0f64..1.0, 5),
            qg in prop::collection::vec(0.0f64..1.0, 4),
            rg in prop::collection::vec(0.0f64..1.0, 4),
            lv in 0.0f64..2.0,
            lg in 0.0f64..2.0,
        ) {
            let w = SimilarityWeights::new(lv, lg).unwrap();
            if let Ok(s) = combined_similarity(&qv, &qg, &rv, &rg, &w) {
                prop_assert!(s.abs() <= w.total() + 1e-12);
            }
        }
    }
}
