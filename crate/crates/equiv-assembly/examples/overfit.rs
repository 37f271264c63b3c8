use equiv_assembly::correlation::*;
use equiv_assembly::data::*;
use equiv_assembly::geometry::apply_pose;
use equiv_assembly::grad::*;
use equiv_assembly::losses::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let lr: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let gen = GenConfig {
        samples: 8, seed: 42, whole_points: 512, part_points: 64,
        min_part_points: 48, parts_min: 2, parts_max: 2,
        shapes: vec![ShapeType::Sphere, ShapeType::Box],
        cuts: vec![CutType::Planar], translation_range: 0.5,
    };
    let samples = generate_dataset(&gen).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamSet::new();
    let config = ModelConfig {
        feature_dim: 24, knn: 8, points_per_part: 64,
        encoder_channels: [12, 12, 24], head_hidden: 128, decoder_hidden: 128,
        leaky_slope: 0.2, use_correlation: true, scramble_vn: false,
    };
    let model = AssemblyModel::init(&mut ps, config, &mut rng);
    let mut adam = AdamOptimizer::for_matching(&ps, lr, |n| n.starts_with("gen."));

    for step in 0..steps {
        let mut tape = Tape::new();
        let mut rot_t = Vec::new();
        let mut trans_t = Vec::new();
        let mut point_t = Vec::new();
        for s in &samples {
            let fwd = model.forward_parts(&mut tape, &ps, &s.parts);
            for (pf, (part, gt)) in fwd.iter().zip(s.parts.iter().zip(&s.gt_poses)) {
                let gt_posed = apply_pose(&part.points, gt, part.centroid);
                rot_t.push(loss_rot(&mut tape, pf.rotation, &gt.rotation));
                trans_t.push(loss_trans(&mut tape, pf.translation, gt.translation));
                point_t.push(loss_point(&mut tape, pf.centered, pf.rotation, pf.translation, &gt_posed));
            }
        }
        let rot = mean_scalars(&mut tape, &rot_t);
        let trans = mean_scalars(&mut tape, &trans_t);
        let point = mean_scalars(&mut tape, &point_t);
        let rp = tape.add(rot, trans);
        let p10 = tape.scale(point, 10.0);
        let total = tape.add(rp, p10);
        let mut grads = tape.backward(total);
        grads.clip_param_global_norm(adam.owned(), 10.0);

        if step % 100 == 0 || step + 1 == steps {
            let gnorm = |prefix: &str| -> f64 {
                let mut acc = 0.0f64;
                for id in ps.ids() {
                    if ps.name(id).starts_with(prefix) {
                        if let Some(g) = grads.param(id) {
                            acc += g.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
                        }
                    }
                }
                acc.sqrt()
            };
            println!(
                "step {step:4}: rot {:.4} trans {:.4} point {:.4} | g_enc {:.3e} g_rot {:.3e} g_trans {:.3e}",
                tape.value(rot)[0], tape.value(trans)[0], tape.value(point)[0],
                gnorm("gen.enc"), gnorm("gen.rot"), gnorm("gen.trans")
            );
        }
        drop(tape);
        adam.step(&mut ps, &grads);
    }
}
