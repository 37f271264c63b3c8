//! SE(3) perturbation of canonical parts into training inputs plus labels.

use rand::Rng;

use crate::correlation::PartCloud;
use crate::geometry::{add3, random_rotation_uniform, sub3, PointCloud, Pose, Vec3};

/// Rotate a canonical part about its own centroid, push it by a random
/// offset, resample to exactly `n_points` with replacement, and derive the
/// pose that undoes the perturbation.
///
/// The stored part is `(P - c) Q + c + delta`. Resampling shifts the
/// observed gravity center off `c + delta` by the sampling error, so the
/// label translation is the canonical-frame image of the centroid the
/// downstream networks will actually subtract: with observed centroid m,
/// `T = c + (m - c - delta) Q^T`. Applying `(R = Q^T, T)` about `m` then
/// lands every resampled point exactly on its canonical position.
pub fn perturb<R: Rng>(
    canonical_parts: &[PointCloud],
    n_points: usize,
    translation_range: f32,
    rng: &mut R,
) -> (Vec<PartCloud>, Vec<Pose>) {
    let mut parts = Vec::with_capacity(canonical_parts.len());
    let mut poses = Vec::with_capacity(canonical_parts.len());
    for (index, canonical) in canonical_parts.iter().enumerate() {
        let c = canonical.centroid();
        let q = random_rotation_uniform(rng);
        let delta: Vec3 = [
            rng.gen_range(-translation_range..translation_range),
            rng.gen_range(-translation_range..translation_range),
            rng.gen_range(-translation_range..translation_range),
        ];
        let moved = PointCloud::new(
            canonical
                .points
                .iter()
                .map(|&p| add3(add3(q.apply(sub3(p, c)), c), delta))
                .collect(),
        );
        let resampled = PointCloud::new(
            (0..n_points)
                .map(|_| moved.points[rng.gen_range(0..moved.len())])
                .collect(),
        );
        let part = PartCloud::from_raw(resampled, index);
        let q_t = q.transpose();
        let drift = sub3(part.centroid, add3(c, delta));
        let translation = add3(c, q_t.apply(drift));
        poses.push(Pose {
            rotation: q_t,
            translation,
        });
        parts.push(part);
    }
    (parts, poses)
}
