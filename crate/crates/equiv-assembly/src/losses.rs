//! The six training loss terms and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::geometry::{Mat3, PointCloud, Vec3};
use crate::grad::{Tape, Var};

/// Weights of the total loss; all must be non-negative.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub rot: f32,
    pub trans: f32,
    pub point: f32,
    pub recon: f32,
    pub embed: f32,
    pub adv: f32,
}

impl Default for LossWeights {
    /// Chamfer terms are scale-small, so the point term is boosted; the
    /// adversarial term is kept small for stability.
    fn default() -> Self {
        LossWeights {
            rot: 1.0,
            trans: 1.0,
            point: 10.0,
            recon: 1.0,
            embed: 0.1,
            adv: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let entries = [
            ("rot", self.rot),
            ("trans", self.trans),
            ("point", self.point),
            ("recon", self.recon),
            ("embed", self.embed),
            ("adv", self.adv),
        ];
        for (name, v) in entries {
            if !(v >= 0.0) {
                return Err(format!("loss weight {name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Geodesic rotation loss for one part: `arccos((tr(R_gt R_pred^T) - 1)/2)`.
/// The arccos argument is clamped, and its gradient is bounded near 0 and pi.
pub fn loss_rot(tape: &mut Tape, r_pred: Var, r_gt: &Mat3) -> Var {
    assert_eq!(tape.shape(r_pred), &[3, 3], "loss_rot expects [3, 3]");
    let gt = tape.constant_data(vec![3, 3], r_gt.flat().to_vec());
    // tr(R_gt R_pred^T) = sum_ij R_gt[i,j] R_pred[i,j]
    let prod = tape.mul(gt, r_pred);
    let trace = tape.sum_all(prod);
    let minus_one = tape.constant_data(vec![1], vec![1.0]);
    let shifted = tape.sub(trace, minus_one);
    let arg = tape.scale(shifted, 0.5);
    tape.acos_safe(arg)
}

/// Squared-norm translation loss for one part: `|T_pred - T_gt|^2`.
pub fn loss_trans(tape: &mut Tape, t_pred: Var, t_gt: Vec3) -> Var {
    assert_eq!(tape.shape(t_pred), &[3], "loss_trans expects [3]");
    let gt = tape.constant_data(vec![3], t_gt.to_vec());
    let d = tape.sub(t_pred, gt);
    let sq = tape.mul(d, d);
    tape.sum_all(sq)
}

/// Chamfer between the predicted re-posing of a centered part and its
/// ground-truth-posed points.
pub fn loss_point(
    tape: &mut Tape,
    centered: Var,
    r_pred: Var,
    t_pred: Var,
    gt_posed: &PointCloud,
) -> Var {
    let rotated = tape.matmul(centered, r_pred);
    let posed = tape.add(rotated, t_pred); // broadcast [3] over rows
    let gt = tape.constant_data(vec![gt_posed.len(), 3], gt_posed.flat());
    tape.chamfer(posed, gt)
}

/// Chamfer between the decoder's canonical reconstruction and the
/// ground-truth-posed part.
pub fn loss_recon(tape: &mut Tape, decoded: Var, gt_posed: &PointCloud) -> Var {
    let gt = tape.constant_data(vec![gt_posed.len(), 3], gt_posed.flat());
    tape.chamfer(decoded, gt)
}

/// Translation-embedding loss: mean squared error between the sum of the
/// per-part correlation features and the whole shape's equivariant feature.
pub fn loss_embed(tape: &mut Tape, h_list: &[Var], f_star: Var) -> Var {
    assert!(!h_list.is_empty(), "loss_embed needs at least one part");
    let sum = tape.add_n(h_list);
    assert_eq!(
        tape.shape(sum),
        tape.shape(f_star),
        "loss_embed shape mismatch: {:?} vs {:?}",
        tape.shape(sum),
        tape.shape(f_star)
    );
    let d = tape.sub(sum, f_star);
    let sq = tape.mul(d, d);
    tape.mean_all(sq)
}

/// Least-squares GAN objectives over per-sample scores.
pub fn loss_gan_generator(tape: &mut Tape, scores_fake: &[Var]) -> Var {
    mean_sq_to(tape, scores_fake, 1.0)
}

pub fn loss_gan_discriminator(tape: &mut Tape, scores_fake: &[Var], scores_real: &[Var]) -> Var {
    let fake = mean_sq_to(tape, scores_fake, 0.0);
    let real = mean_sq_to(tape, scores_real, 1.0);
    tape.add(fake, real)
}

fn mean_sq_to(tape: &mut Tape, scores: &[Var], target: f32) -> Var {
    assert!(!scores.is_empty(), "gan loss needs at least one score");
    let t = tape.constant_data(vec![1], vec![target]);
    let sq: Vec<Var> = scores
        .iter()
        .map(|&s| {
            let d = tape.sub(s, t);
            tape.mul(d, d)
        })
        .collect();
    let total = tape.add_n(&sq);
    tape.scale(total, 1.0 / scores.len() as f32)
}

/// Scalar loss terms of one optimization step, pre-weighting.
#[derive(Clone, Copy)]
pub struct LossTerms {
    pub rot: Var,
    pub trans: Var,
    pub point: Var,
    pub recon: Var,
    pub embed: Var,
    pub adv: Var,
}

/// Weighted sum of the six terms.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, w: &LossWeights) -> Var {
    w.validate().expect("loss weights validated at config load");
    let parts = [
        (terms.rot, w.rot),
        (terms.trans, w.trans),
        (terms.point, w.point),
        (terms.recon, w.recon),
        (terms.embed, w.embed),
        (terms.adv, w.adv),
    ];
    let mut acc: Option<Var> = None;
    for (term, weight) in parts {
        let scaled = tape.scale(term, weight);
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled),
            None => scaled,
        });
    }
    acc.unwrap()
}

/// Mean of scalar vars (used to average per-part terms).
pub fn mean_scalars(tape: &mut Tape, vars: &[Var]) -> Var {
    assert!(!vars.is_empty(), "mean of no scalars");
    let s = tape.add_n(vars);
    tape.scale(s, 1.0 / vars.len() as f32)
}
