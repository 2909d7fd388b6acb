use nalgebra::Vector3;

use super::GeometryError;

/// Greedy max–min farthest point sampling starting at `seed_index`.
///
/// Each step selects the unselected point with the largest Euclidean distance
/// to its nearest already-selected point; ties go to the lowest index.
pub fn farthest_point_sample(
    points: &[Vector3<f64>],
    count: usize,
    seed_index: usize,
) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if count > n {
        return Err(GeometryError::CountExceedsCloud { count, available: n });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= n {
        return Err(GeometryError::SeedOutOfRange {
            seed: seed_index,
            available: n,
        });
    }

    let mut selected = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = seed_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == count {
            break;
        }
        let anchor = points[current];
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let d = (p - anchor).norm();
            if d < nearest[i] {
                nearest[i] = d;
            }
            if taken[i] {
                continue;
            }
            match best {
                Some((_, bd)) if nearest[i] <= bd => {}
                _ => best = Some((i, nearest[i])),
            }
        }
        // count <= n guarantees an untaken point remains.
        current = best.expect("untaken point available").0;
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_seed() {
        let pts = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert_eq!(farthest_point_sample(&pts, 1, 2).unwrap(), vec![2]);
    }

    #[test]
    fn square_with_center() {
        // Corners 0..4, center 4. From the center every corner ties, so the
        // lowest index wins. After that each remaining corner is still at
        // most 0.707 from the center, so the min-distance ties again and
        // the opposite corner gets no preference.
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.5, 0.5, 0.0),
        ];
        assert_eq!(farthest_point_sample(&pts, 3, 4).unwrap(), vec![4, 0, 1]);
    }

    #[test]
    fn errors() {
        let pts = vec![Vector3::zeros(); 3];
        assert!(matches!(
            farthest_point_sample(&pts, 4, 0),
            Err(GeometryError::CountExceedsCloud { .. })
        ));
        assert!(matches!(
            farthest_point_sample(&pts, 2, 3),
            Err(GeometryError::SeedOutOfRange { .. })
        ));
    }

    #[test]
    fn duplicates_never_reselect() {
        let pts = vec![Vector3::zeros(); 4];
        assert_eq!(farthest_point_sample(&pts, 4, 2).unwrap(), vec![2, 0, 1, 3]);
    }
}
