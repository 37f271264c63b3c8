//! Training loop with generator/discriminator alternation.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::correlation::AssemblyModel;
use crate::data::AssemblySample;
use crate::geometry::{apply_pose, PointCloud};
use crate::grad::{AdamOptimizer, ParamSet, Tape, Var};
use crate::losses::{
    loss_embed, loss_gan_discriminator, loss_gan_generator, loss_point, loss_recon, loss_rot,
    loss_trans, mean_scalars, total_loss, LossTerms, LossWeights,
};
use crate::metrics::{evaluate, ModelPredictor};

use super::config::Config;
use super::{load_model_params, save_checkpoint, HarnessError};

/// One line-delimited JSON record per epoch.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_rot: f32,
    pub loss_trans: f32,
    pub loss_point: f32,
    pub loss_recon: f32,
    pub loss_embed: f32,
    pub loss_adv_g: f32,
    pub loss_adv_d: f32,
    pub total: f32,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub checkpoint: PathBuf,
}

struct BatchStats {
    rot: f32,
    trans: f32,
    point: f32,
    recon: f32,
    embed: f32,
    adv_g: f32,
    adv_d: f32,
    total: f32,
}

pub fn cmd_train(config: &Config) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    config.require_dir(&config.dataset_dir, "dataset")?;
    let (_, samples) = crate::data::io::read_dataset(std::path::Path::new(&config.dataset_dir))?;
    if samples.is_empty() {
        return Err(HarnessError::Other("dataset is empty".into()));
    }
    let eval_samples = if config.eval_dataset_dir.is_empty() {
        Vec::new()
    } else {
        config.require_dir(&config.eval_dataset_dir, "eval dataset")?;
        crate::data::io::read_dataset(std::path::Path::new(&config.eval_dataset_dir))?.1
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ps = ParamSet::new();
    let model = AssemblyModel::init(&mut ps, config.model_config(), &mut init_rng);
    let lr = config.learning_rate;
    let mut adam_g = AdamOptimizer::for_matching(&ps, lr, |n| n.starts_with("gen."));
    let mut adam_d = AdamOptimizer::for_matching(&ps, lr, |n| n.starts_with("disc."));
    let weights = config.loss_weights();

    let mut start_epoch = 0usize;
    if !config.resume_from.is_empty() {
        let entries = crate::grad::checkpoint::load(&config.resume_from)?;
        load_model_params(&entries, &mut ps)?;
        adam_g
            .load_state(&ps, "adam_g", &entries)
            .map_err(HarnessError::Other)?;
        adam_d
            .load_state(&ps, "adam_d", &entries)
            .map_err(HarnessError::Other)?;
        if let Some((_, t)) = entries.iter().find(|(n, _)| n == "meta.epoch") {
            start_epoch = t.data()[0] as usize;
        }
        eprintln!(
            "resumed from {} at epoch {start_epoch}",
            config.resume_from
        );
    }

    std::fs::create_dir_all(&config.checkpoint_dir).map_err(|e| {
        HarnessError::Other(format!(
            "cannot create checkpoint dir {}: {e}",
            config.checkpoint_dir
        ))
    })?;
    let latest = PathBuf::from(&config.checkpoint_dir).join("latest.eqas");

    let mut logs = Vec::new();
    for epoch in start_epoch..config.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64 + 1).wrapping_mul(0xA5A5_5A5A));
        order.shuffle(&mut epoch_rng);

        let mut sums = BatchStats {
            rot: 0.0,
            trans: 0.0,
            point: 0.0,
            recon: 0.0,
            embed: 0.0,
            adv_g: 0.0,
            adv_d: 0.0,
            total: 0.0,
        };
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&AssemblySample> = chunk.iter().map(|&i| &samples[i]).collect();
            let stats = train_batch(
                &model,
                &mut ps,
                &mut adam_g,
                &mut adam_d,
                &batch,
                &weights,
                config,
                epoch,
                batch_idx,
            )?;
            sums.rot += stats.rot;
            sums.trans += stats.trans;
            sums.point += stats.point;
            sums.recon += stats.recon;
            sums.embed += stats.embed;
            sums.adv_g += stats.adv_g;
            sums.adv_d += stats.adv_d;
            sums.total += stats.total;
            batches += 1;
        }
        let nb = batches as f32;
        let log = EpochLog {
            epoch,
            loss_rot: sums.rot / nb,
            loss_trans: sums.trans / nb,
            loss_point: sums.point / nb,
            loss_recon: sums.recon / nb,
            loss_embed: sums.embed / nb,
            loss_adv_g: sums.adv_g / nb,
            loss_adv_d: sums.adv_d / nb,
            total: sums.total / nb,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        println!("{}", serde_json::to_string(&log).expect("log serializes"));
        logs.push(log);

        let last = epoch + 1 == config.epochs;
        if (epoch + 1) % config.checkpoint_interval.max(1) == 0 || last {
            let numbered =
                PathBuf::from(&config.checkpoint_dir).join(format!("checkpoint_epoch_{epoch}.eqas"));
            save_checkpoint(&numbered, &ps, &adam_g, &adam_d, epoch + 1)?;
            save_checkpoint(&latest, &ps, &adam_g, &adam_d, epoch + 1)?;
            if !eval_samples.is_empty() {
                let report = evaluate(
                    &eval_samples,
                    &ModelPredictor {
                        model: &model,
                        params: &ps,
                    },
                    config.pa_threshold,
                );
                let mut record = serde_json::to_value(report).expect("report serializes");
                record["epoch"] = serde_json::json!(epoch);
                println!("{record}");
            }
        }
    }

    Ok(TrainOutcome {
        logs,
        checkpoint: latest,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &AssemblyModel,
    ps: &mut ParamSet,
    adam_g: &mut AdamOptimizer,
    adam_d: &mut AdamOptimizer,
    batch: &[&AssemblySample],
    weights: &LossWeights,
    config: &Config,
    epoch: usize,
    batch_idx: usize,
) -> Result<BatchStats, HarnessError> {
    let use_adv = weights.adv > 0.0;
    let use_embed = weights.embed > 0.0;
    let mut tape = Tape::new();
    let mut rot_terms = Vec::new();
    let mut trans_terms = Vec::new();
    let mut point_terms = Vec::new();
    let mut recon_terms = Vec::new();
    let mut embed_terms = Vec::new();
    let mut fake_scores = Vec::new();
    let mut fake_clouds: Vec<Vec<f32>> = Vec::new();

    for (si, sample) in batch.iter().enumerate() {
        let mut sub_rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add((epoch as u64) << 40)
                .wrapping_add((batch_idx as u64) << 20)
                .wrapping_add(si as u64),
        );
        let fwd = model.forward_parts(&mut tape, ps, &sample.parts);
        let mut h_list = Vec::with_capacity(fwd.len());
        let mut posed_parts = Vec::with_capacity(fwd.len());
        for (pf, (part, gt_pose)) in fwd
            .iter()
            .zip(sample.parts.iter().zip(&sample.gt_poses))
        {
            let gt_posed = apply_pose(&part.points, gt_pose, part.centroid);
            rot_terms.push(loss_rot(&mut tape, pf.rotation, &gt_pose.rotation));
            trans_terms.push(loss_trans(&mut tape, pf.translation, gt_pose.translation));
            point_terms.push(loss_point(
                &mut tape,
                pf.centered,
                pf.rotation,
                pf.translation,
                &gt_posed,
            ));
            let decoded = model.decoder.forward(&mut tape, ps, pf.g);
            recon_terms.push(loss_recon(&mut tape, decoded, &gt_posed));
            h_list.push(pf.h);
            if use_adv {
                let rotated = tape.matmul(pf.centered, pf.rotation);
                posed_parts.push(tape.add(rotated, pf.translation));
            }
        }
        if use_embed {
            let f_star = encode_whole(&mut tape, model, ps, &sample.whole, config, &mut sub_rng);
            embed_terms.push(loss_embed(&mut tape, &h_list, f_star));
        }
        if use_adv {
            let mut composite = posed_parts[0];
            for &p in &posed_parts[1..] {
                composite = tape.concat(composite, p, 0);
            }
            let total_pts = tape.shape(composite)[0];
            let idx: Vec<usize> = (0..config.disc_points)
                .map(|_| sub_rng.gen_range(0..total_pts))
                .collect();
            let sub = tape.index_rows(composite, idx);
            let centered = center_on_tape(&mut tape, sub);
            fake_clouds.push(tape.value(centered).to_vec());
            fake_scores.push(model.discriminator.forward(&mut tape, ps, centered));
        }
    }

    let zero = tape.constant_data(vec![1], vec![0.0]);
    let terms = LossTerms {
        rot: mean_scalars(&mut tape, &rot_terms),
        trans: mean_scalars(&mut tape, &trans_terms),
        point: mean_scalars(&mut tape, &point_terms),
        recon: mean_scalars(&mut tape, &recon_terms),
        embed: if use_embed {
            mean_scalars(&mut tape, &embed_terms)
        } else {
            zero
        },
        adv: if use_adv {
            loss_gan_generator(&mut tape, &fake_scores)
        } else {
            zero
        },
    };
    let total = total_loss(&mut tape, &terms, weights);
    let total_v = tape.value(total)[0];
    if !total_v.is_finite() {
        return Err(HarnessError::NanLoss { epoch, batch_idx });
    }
    let stats_partial = (
        tape.value(terms.rot)[0],
        tape.value(terms.trans)[0],
        tape.value(terms.point)[0],
        tape.value(terms.recon)[0],
        tape.value(terms.embed)[0],
        tape.value(terms.adv)[0],
    );
    let mut grads = tape.backward(total);
    drop(tape);
    if config.grad_clip > 0.0 {
        grads.clip_param_global_norm(adam_g.owned(), config.grad_clip);
    }
    adam_g.step(ps, &grads);

    // Discriminator pass: rescore the (now fixed) composites and step only
    // the discriminator parameters.
    let mut adv_d = 0.0f32;
    if use_adv {
        let mut dtape = Tape::new();
        let mut dfake = Vec::with_capacity(fake_clouds.len());
        for cloud in &fake_clouds {
            let c = dtape.constant_data(vec![config.disc_points, 3], cloud.clone());
            dfake.push(model.discriminator.forward(&mut dtape, ps, c));
        }
        let mut dreal = Vec::with_capacity(batch.len());
        for (si, sample) in batch.iter().enumerate() {
            let mut real_rng = ChaCha8Rng::seed_from_u64(
                config
                    .seed
                    .wrapping_add(0x0DD0_0000_0000)
                    .wrapping_add((epoch as u64) << 40)
                    .wrapping_add((batch_idx as u64) << 20)
                    .wrapping_add(si as u64),
            );
            let sub = subsample_centered(&sample.whole, config.disc_points, &mut real_rng);
            let c = dtape.constant_data(vec![config.disc_points, 3], sub);
            dreal.push(model.discriminator.forward(&mut dtape, ps, c));
        }
        let l_d = loss_gan_discriminator(&mut dtape, &dfake, &dreal);
        adv_d = dtape.value(l_d)[0];
        if !adv_d.is_finite() {
            return Err(HarnessError::NanLoss { epoch, batch_idx });
        }
        let mut dgrads = dtape.backward(l_d);
        drop(dtape);
        if config.grad_clip > 0.0 {
            dgrads.clip_param_global_norm(adam_d.owned(), config.grad_clip);
        }
        adam_d.step(ps, &dgrads);
    }

    Ok(BatchStats {
        rot: stats_partial.0,
        trans: stats_partial.1,
        point: stats_partial.2,
        recon: stats_partial.3,
        embed: stats_partial.4,
        adv_g: stats_partial.5,
        adv_d,
        total: total_v,
    })
}

/// Equivariant feature of the (centered, density-matched) canonical whole.
fn encode_whole(
    tape: &mut Tape,
    model: &AssemblyModel,
    ps: &ParamSet,
    whole: &PointCloud,
    config: &Config,
    rng: &mut ChaCha8Rng,
) -> Var {
    let target = config.part_points.min(whole.len());
    let data = if whole.len() > target {
        let idx: Vec<usize> = (0..target).map(|_| rng.gen_range(0..whole.len())).collect();
        let mut out = Vec::with_capacity(target * 3);
        for i in idx {
            out.extend_from_slice(&whole.points[i]);
        }
        out
    } else {
        whole.flat()
    };
    let cloud = PointCloud::from_flat(&data);
    let (centered, _) = crate::correlation::center(&cloud);
    let vcloud = tape.constant_data(vec![centered.len(), 3], centered.flat());
    model
        .encoder
        .encode(tape, ps, vcloud, model.config.scramble_vn)
        .f
}

fn center_on_tape(tape: &mut Tape, cloud: Var) -> Var {
    let mean = tape.mean_axis(cloud, 0); // [3]
    tape.sub(cloud, mean)
}

fn subsample_centered(cloud: &PointCloud, m: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let picked = PointCloud::new(
        (0..m)
            .map(|_| cloud.points[rng.gen_range(0..cloud.len())])
            .collect(),
    );
    let (centered, _) = crate::correlation::center(&picked);
    centered.flat()
}
