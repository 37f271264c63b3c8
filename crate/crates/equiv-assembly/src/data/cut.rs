//! Heightfield cuts: partition a cloud by `p.axis < h(u, v)` where (u, v)
//! are the coordinates orthogonal to the cut axis and h is drawn from one of
//! four function families.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutType {
    Planar,
    Sine,
    Parabolic,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn ortho(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (2, 0),
            Axis::Z => (0, 1),
        }
    }
}

/// Parameters of one heightfield; `h(u, v)` depends on the family:
/// planar `c`; sine `a sin(omega u + phase) + c`; parabolic
/// `a (u^2 + v^2) + c`; square `a sign(sin(omega u)) + c`.
#[derive(Clone, Copy, Debug)]
pub struct CutParams {
    pub cut_type: CutType,
    pub amplitude: f32,
    pub omega: f32,
    pub phase: f32,
    pub offset: f32,
}

impl CutParams {
    pub fn random<R: Rng>(cut_type: CutType, rng: &mut R) -> CutParams {
        CutParams {
            cut_type,
            amplitude: rng.gen_range(0.1..0.35),
            omega: rng.gen_range(2.0..6.0),
            phase: rng.gen_range(0.0..2.0 * std::f32::consts::PI),
            offset: rng.gen_range(-0.25..0.25),
        }
    }

    pub fn height(&self, u: f32, v: f32) -> f32 {
        match self.cut_type {
            CutType::Planar => self.offset,
            CutType::Sine => self.amplitude * (self.omega * u + self.phase).sin() + self.offset,
            CutType::Parabolic => self.amplitude * (u * u + v * v) + self.offset,
            CutType::Square => {
                self.amplitude * (self.omega * u).sin().signum() + self.offset
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error(
        "degenerate cut: no heightfield left both sides with >= {n_min} points \
         after {retries} retries (cloud of {points} points)"
    )]
    DegenerateCut {
        n_min: usize,
        retries: usize,
        points: usize,
    },
    #[error("multicut wants {wanted} parts but only {available} cuttable points")]
    TooFewPoints { wanted: usize, available: usize },
}

/// Deterministic partition of `cloud` by the heightfield: a point belongs to
/// part A iff its axis coordinate is below `h` of its orthogonal coordinates.
/// Returns the two parts and, for bookkeeping, each point's membership.
pub fn heightfield_cut(
    cloud: &PointCloud,
    params: &CutParams,
    axis: Axis,
) -> (PointCloud, PointCloud) {
    let (a, b) = split_indices(cloud, params, axis);
    let pick = |idx: &[usize]| PointCloud::new(idx.iter().map(|&i| cloud.points[i]).collect());
    (pick(&a), pick(&b))
}

pub(crate) fn split_indices(
    cloud: &PointCloud,
    params: &CutParams,
    axis: Axis,
) -> (Vec<usize>, Vec<usize>) {
    let ax = axis.index();
    let (ui, vi) = axis.ortho();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if p[ax] < params.height(p[ui], p[vi]) {
            a.push(i);
        } else {
            b.push(i);
        }
    }
    (a, b)
}

/// Draw heightfields until both sides hold at least `n_min` points.
pub fn cut_with_retries<R: Rng>(
    cloud: &PointCloud,
    cut_type: CutType,
    n_min: usize,
    rng: &mut R,
) -> Result<(PointCloud, PointCloud), GenError> {
    const MAX_RETRIES: usize = 50;
    for _ in 0..MAX_RETRIES {
        let axis = match rng.gen_range(0..3) {
            0 => Axis::X,
            1 => Axis::Y,
            _ => Axis::Z,
        };
        let params = CutParams::random(cut_type, rng);
        let (a, b) = heightfield_cut(cloud, &params, axis);
        if a.len() >= n_min && b.len() >= n_min {
            return Ok((a, b));
        }
    }
    Err(GenError::DegenerateCut {
        n_min,
        retries: MAX_RETRIES,
        points: cloud.len(),
    })
}

/// Split `cloud` into `n_parts` pieces by repeatedly cutting the currently
/// largest part. Splitting the largest part biases toward balanced fragments.
pub fn recursive_multicut<R: Rng>(
    cloud: &PointCloud,
    n_parts: usize,
    cut_type: CutType,
    n_min: usize,
    rng: &mut R,
) -> Result<Vec<PointCloud>, GenError> {
    assert!(
        (2..=8).contains(&n_parts),
        "multicut supports 2..=8 parts, got {n_parts}"
    );
    if cloud.len() < n_parts * n_min {
        return Err(GenError::TooFewPoints {
            wanted: n_parts,
            available: cloud.len(),
        });
    }
    let mut parts = vec![cloud.clone()];
    while parts.len() < n_parts {
        let largest = parts
            .iter()
            .enumerate()
            .max_by_key(|(_, p)| p.len())
            .map(|(i, _)| i)
            .unwrap();
        let target = parts.swap_remove(largest);
        let (a, b) = cut_with_retries(&target, cut_type, n_min, rng)?;
        parts.push(a);
        parts.push(b);
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shapes::{sample_shape, ShapeType};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn membership_rule_examples() {
        // point below a planar h = 0 cut along z goes to part A
        let cloud = PointCloud::new(vec![[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]);
        let params = CutParams {
            cut_type: CutType::Planar,
            amplitude: 0.0,
            omega: 1.0,
            phase: 0.0,
            offset: 0.0,
        };
        let (a, b) = heightfield_cut(&cloud, &params, Axis::Z);
        assert_eq!(a.points, vec![[0.0, 0.0, -1.0]]);
        assert_eq!(b.points, vec![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn cut_is_exact_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let cloud = sample_shape(ShapeType::Ellipsoid, 600, &mut rng);
        for cut_type in [
            CutType::Planar,
            CutType::Sine,
            CutType::Parabolic,
            CutType::Square,
        ] {
            let params = CutParams::random(cut_type, &mut rng);
            let (a, b) = heightfield_cut(&cloud, &params, Axis::Y);
            assert_eq!(a.len() + b.len(), cloud.len());
            let mut joined = a.points.clone();
            joined.extend_from_slice(&b.points);
            let mut original = cloud.points.clone();
            let key = |p: &[f32; 3]| (p[0].to_bits(), p[1].to_bits(), p[2].to_bits());
            joined.sort_by_key(key);
            original.sort_by_key(key);
            assert_eq!(joined, original, "{cut_type:?} is not a partition");
        }
    }

    #[test]
    fn planar_center_cut_splits_evenly_over_seeds() {
        // planar c=0 through a symmetric cloud: sizes within 10% of 50/50
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = sample_shape(ShapeType::Sphere, 2048, &mut rng);
            let params = CutParams {
                cut_type: CutType::Planar,
                amplitude: 0.0,
                omega: 1.0,
                phase: 0.0,
                offset: 0.0,
            };
            let (a, _) = heightfield_cut(&cloud, &params, Axis::Z);
            let frac = a.len() as f64 / cloud.len() as f64;
            assert!(
                (0.45..=0.55).contains(&frac),
                "seed {seed}: split fraction {frac}"
            );
        }
    }

    #[test]
    fn multicut_two_parts_reduces_to_single_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let cloud = sample_shape(ShapeType::Box, 512, &mut rng);
        let parts = recursive_multicut(&cloud, 2, CutType::Planar, 64, &mut rng).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len() + parts[1].len(), cloud.len());
    }

    #[test]
    fn multicut_four_parts_meets_min_size_on_most_seeds() {
        let mut ok = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let cloud = sample_shape(ShapeType::Sphere, 2048, &mut rng);
            match recursive_multicut(&cloud, 4, CutType::Sine, 64, &mut rng) {
                Ok(parts) => {
                    assert_eq!(parts.iter().map(PointCloud::len).sum::<usize>(), 2048);
                    if parts.iter().all(|p| p.len() >= 64) {
                        ok += 1;
                    }
                }
                Err(_) => {}
            }
        }
        assert!(ok >= 95, "only {ok}/100 seeds produced 4 parts >= 64 points");
    }

    #[test]
    fn degenerate_cut_reports_error() {
        // A cloud far above any reachable heightfield: every cut puts all
        // points on one side.
        let cloud = PointCloud::new(vec![[5.0, 5.0, 5.0]; 300]);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let err = cut_with_retries(&cloud, CutType::Planar, 64, &mut rng).unwrap_err();
        assert!(matches!(err, GenError::DegenerateCut { .. }));
        assert!(err.to_string().contains("50 retries"));
    }
}
