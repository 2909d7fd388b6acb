use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

const MIN_NORM: f64 = 1e-8;

/// Continuous 6D rotation representation: the first two columns of a
/// rotation matrix, `[c1x, c1y, c1z, c2x, c2y, c2z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        rot6d_encode(m)
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>, GeometryError> {
        rot6d_decode(self)
    }

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }
}

pub fn rot6d_encode(m: &Matrix3<f64>) -> Rot6D {
    Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// Gram–Schmidt decode. The first column is the normalized first vector; the
/// second is the normalized component of the second vector orthogonal to it.
pub fn rot6d_decode(r: &Rot6D) -> Result<Matrix3<f64>, GeometryError> {
    let a = r.first();
    let b = r.second();
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(GeometryError::DegenerateRotation("non-finite component"));
    }
    let na = a.norm();
    let nb = b.norm();
    if na <= MIN_NORM || nb <= MIN_NORM {
        return Err(GeometryError::DegenerateRotation("near-zero column"));
    }
    let c1 = a / na;
    let ortho = b - c1 * c1.dot(&b);
    let no = ortho.norm();
    if no <= MIN_NORM * nb {
        return Err(GeometryError::DegenerateRotation("parallel columns"));
    }
    let c2 = ortho / no;
    let c3 = c1.cross(&c2);
    Ok(Matrix3::from_columns(&[c1, c2, c3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_decodes_to_identity() {
        let m = rot6d_decode(&Rot6D::IDENTITY).unwrap();
        assert_eq!(m, Matrix3::identity());
    }

    #[test]
    fn gram_schmidt_hand_example() {
        // [2,0,0] normalizes to e1; [1,1,0] minus its e1 component is e2.
        let m = rot6d_decode(&Rot6D([2.0, 0.0, 0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(m, Matrix3::identity());
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(rot6d_decode(&Rot6D([0.0; 6])).is_err());
        assert!(rot6d_decode(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
        assert!(rot6d_decode(&Rot6D([1.0, 0.0, 0.0, 1e-9, 0.0, 0.0])).is_err());
    }

    #[test]
    fn round_trip_random_quaternions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
            let m = *q.to_rotation_matrix().matrix();
            let back = rot6d_decode(&rot6d_encode(&m)).unwrap();
            assert!((back - m).norm() < 1e-9);
        }
    }

    #[test]
    fn decode_is_orthonormal_for_arbitrary_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let r = Rot6D(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));
            let m = rot6d_decode(&r).unwrap();
            assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
