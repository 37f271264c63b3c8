//! Procedural fracture data: canonical shapes cut by heightfields into N
//! parts, perturbed with random SE(3) poses, serialized with ground-truth
//! labels.

pub mod cut;
pub mod io;
mod perturb;
pub mod shapes;

pub use cut::{
    cut_with_retries, heightfield_cut, recursive_multicut, Axis, CutParams, CutType, GenError,
};
pub use perturb::perturb;
pub use shapes::{sample_shape, ShapeType};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::PartCloud;
use crate::geometry::{apply_pose, chamfer, PointCloud, Pose};

/// A canonical whole, its perturbed parts, and the poses that reassemble it.
#[derive(Clone, Debug, PartialEq)]
pub struct AssemblySample {
    pub whole: PointCloud,
    pub parts: Vec<PartCloud>,
    pub gt_poses: Vec<Pose>,
    pub cut_type: CutType,
    pub shape_type: ShapeType,
}

impl AssemblySample {
    /// Union of all parts restored with their ground-truth poses.
    pub fn reassembled_with_gt(&self) -> PointCloud {
        let mut points = Vec::new();
        for (part, pose) in self.parts.iter().zip(&self.gt_poses) {
            points.extend(apply_pose(&part.points, pose, part.centroid).points);
        }
        PointCloud::new(points)
    }

    /// Chamfer between the ground-truth reassembly and the canonical whole.
    pub fn label_consistency(&self) -> f32 {
        chamfer(&self.reassembled_with_gt(), &self.whole)
    }
}

/// Generation parameters; these are echoed into the dataset manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GenConfig {
    pub samples: usize,
    pub seed: u64,
    /// Points sampled on the canonical whole.
    pub whole_points: usize,
    /// Points each part is resampled to.
    pub part_points: usize,
    /// Minimum original points per fragment before resampling.
    pub min_part_points: usize,
    pub parts_min: usize,
    pub parts_max: usize,
    pub shapes: Vec<ShapeType>,
    pub cuts: Vec<CutType>,
    /// Uniform translation perturbation range (unit-sphere scale).
    pub translation_range: f32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            samples: 2000,
            seed: 42,
            whole_points: 4096,
            part_points: 512,
            min_part_points: 64,
            parts_min: 2,
            parts_max: 2,
            shapes: vec![
                ShapeType::Sphere,
                ShapeType::Box,
                ShapeType::Cylinder,
                ShapeType::Ellipsoid,
            ],
            cuts: vec![
                CutType::Planar,
                CutType::Sine,
                CutType::Parabolic,
                CutType::Square,
            ],
            translation_range: 0.5,
        }
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generate one sample deterministically from (seed, index).
pub fn generate_sample(config: &GenConfig, index: u64) -> Result<AssemblySample, GenError> {
    let mut rng = sample_rng(config.seed, index);
    let shape_type = config.shapes[rng.gen_range(0..config.shapes.len())];
    let cut_type = config.cuts[rng.gen_range(0..config.cuts.len())];
    let n_parts = rng.gen_range(config.parts_min..=config.parts_max);
    let whole = sample_shape(shape_type, config.whole_points, &mut rng);
    let canonical = recursive_multicut(
        &whole,
        n_parts,
        cut_type,
        config.min_part_points,
        &mut rng,
    )?;
    let (parts, gt_poses) = perturb(
        &canonical,
        config.part_points,
        config.translation_range,
        &mut rng,
    );
    Ok(AssemblySample {
        whole,
        parts,
        gt_poses,
        cut_type,
        shape_type,
    })
}

/// Generate the full dataset. A degenerate sample (cut kept failing) is
/// reported with its index so the seed can be adjusted.
pub fn generate_dataset(config: &GenConfig) -> Result<Vec<AssemblySample>, (u64, GenError)> {
    (0..config.samples as u64)
        .map(|i| generate_sample(config, i).map_err(|e| (i, e)))
        .collect()
}
