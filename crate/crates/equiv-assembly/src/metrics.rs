//! Evaluation metrics: rotation RMSE over Euler angles, mean geodesic
//! distance, translation RMSE, and part accuracy.

use serde::{Deserialize, Serialize};

use crate::correlation::{AssemblyModel, PartCloud};
use crate::data::AssemblySample;
use crate::geometry::{apply_pose, chamfer, euler_from_matrix, geodesic, Pose};
use crate::grad::ParamSet;

/// Part-accuracy chamfer threshold in unit-sphere scale.
pub const PA_THRESHOLD: f32 = 0.01;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    /// Pooled RMSE over per-axis Euler errors, degrees.
    pub rmse_r_deg: f32,
    /// Mean geodesic rotation distance, radians.
    pub gd_rad: f32,
    /// Pooled RMSE over translation components, in units of 1e-2.
    pub rmse_t_hundredths: f32,
    /// Fraction of parts whose re-posed chamfer beats the threshold.
    pub pa: f32,
}

impl MetricReport {
    /// Aligned table in the conventional column order.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>8} {:>12} {:>7}\n{:>10} {:>8} {:>12} {:>7}\n{:>10.1} {:>8.2} {:>12.1} {:>7.1}",
            "RMSE(R)",
            "GD(R)",
            "RMSE(T)",
            "PA",
            "degree",
            "rad",
            "x10^-2",
            "%",
            self.rmse_r_deg,
            self.gd_rad,
            self.rmse_t_hundredths,
            self.pa * 100.0
        )
    }
}

/// Anything that can pose the parts of a sample.
pub trait Predictor {
    fn predict(&self, sample: &AssemblySample) -> Vec<Pose>;
}

/// The trained (or untrained) network.
pub struct ModelPredictor<'a> {
    pub model: &'a AssemblyModel,
    pub params: &'a ParamSet,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, sample: &AssemblySample) -> Vec<Pose> {
        let mut tape = crate::grad::Tape::new();
        let fwd = self.model.forward_parts(&mut tape, self.params, &sample.parts);
        fwd.iter().map(|p| p.pose(&tape)).collect()
    }
}

/// Pose-agnostic baseline: identity rotation, translation at the observed
/// centroid (i.e. leave every part where it is).
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn predict(&self, sample: &AssemblySample) -> Vec<Pose> {
        sample
            .parts
            .iter()
            .map(|p| Pose {
                rotation: crate::geometry::Mat3::IDENTITY,
                translation: p.centroid,
            })
            .collect()
    }
}

/// Upper bound: echoes the ground-truth poses.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, sample: &AssemblySample) -> Vec<Pose> {
        sample.gt_poses.clone()
    }
}

/// Minimal-wrap angular difference in degrees, in (-180, 180].
fn wrap_deg(e: f32) -> f32 {
    let mut v = e % 360.0;
    if v > 180.0 {
        v -= 360.0;
    } else if v <= -180.0 {
        v += 360.0;
    }
    v
}

/// Run a predictor over a dataset. Chamfer for part accuracy compares the
/// predicted re-posing of each part's points against its ground-truth
/// re-posing; the threshold is a strict inequality.
pub fn evaluate(
    samples: &[AssemblySample],
    predictor: &dyn Predictor,
    pa_threshold: f32,
) -> MetricReport {
    assert!(!samples.is_empty(), "evaluate needs a non-empty dataset");
    let mut sq_deg = 0.0f64;
    let mut axis_count = 0usize;
    let mut gd_sum = 0.0f64;
    let mut sq_t = 0.0f64;
    let mut t_count = 0usize;
    let mut correct = 0usize;
    let mut parts_total = 0usize;
    for sample in samples {
        let predicted = predictor.predict(sample);
        assert_eq!(predicted.len(), sample.parts.len());
        for ((part, pred), gt) in sample.parts.iter().zip(&predicted).zip(&sample.gt_poses) {
            let ep = euler_from_matrix(&pred.rotation);
            let eg = euler_from_matrix(&gt.rotation);
            for (a, b) in [(ep.rx, eg.rx), (ep.ry, eg.ry), (ep.rz, eg.rz)] {
                let e = wrap_deg(a - b) as f64;
                sq_deg += e * e;
                axis_count += 1;
            }
            gd_sum += geodesic(&pred.rotation, &gt.rotation) as f64;
            for a in 0..3 {
                let e = (pred.translation[a] - gt.translation[a]) as f64;
                sq_t += e * e;
                t_count += 1;
            }
            let pred_posed = apply_pose(&part.points, pred, part.centroid);
            let gt_posed = apply_pose(&part.points, gt, part.centroid);
            if chamfer(&pred_posed, &gt_posed) < pa_threshold {
                correct += 1;
            }
            parts_total += 1;
        }
    }
    MetricReport {
        rmse_r_deg: ((sq_deg / axis_count as f64).sqrt()) as f32,
        gd_rad: (gd_sum / parts_total as f64) as f32,
        rmse_t_hundredths: ((sq_t / t_count as f64).sqrt() * 100.0) as f32,
        pa: correct as f32 / parts_total as f32,
    }
}

/// Predicted re-posed parts of one sample, for export.
pub fn predicted_assembly(sample: &AssemblySample, poses: &[Pose]) -> Vec<crate::geometry::PointCloud> {
    sample
        .parts
        .iter()
        .zip(poses)
        .map(|(part, pose)| apply_pose(&part.points, pose, part.centroid))
        .collect()
}

/// Convenience for callers holding raw clouds.
pub fn parts_from_clouds(clouds: &[crate::geometry::PointCloud]) -> Vec<PartCloud> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| PartCloud::from_raw(c.clone(), i))
        .collect()
}
