use equiv_assembly::correlation::*;
use equiv_assembly::data::*;
use equiv_assembly::grad::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let gen = GenConfig {
        samples: 16, seed: 5, whole_points: 512, part_points: 64,
        min_part_points: 48, parts_min: 2, parts_max: 2,
        shapes: vec![ShapeType::Sphere, ShapeType::Box],
        cuts: vec![CutType::Planar], translation_range: 0.5,
    };
    let samples = generate_dataset(&gen).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    let config = ModelConfig {
        feature_dim: 24, knn: 8, points_per_part: 64,
        encoder_channels: [12, 12, 24], head_hidden: 128, decoder_hidden: 128,
        leaky_slope: 0.2, use_correlation: true, scramble_vn: false,
    };
    let model = AssemblyModel::init(&mut ps, config, &mut rng);

    // forward only
    let t0 = Instant::now();
    let reps = 50;
    for r in 0..reps {
        let s = &samples[r % samples.len()];
        let mut tape = Tape::new();
        let _ = model.forward_parts(&mut tape, &ps, &s.parts);
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    // forward + losses + backward
    let t0 = Instant::now();
    for r in 0..reps {
        let s = &samples[r % samples.len()];
        let mut tape = Tape::new();
        let fwd_parts = model.forward_parts(&mut tape, &ps, &s.parts);
        let mut terms = Vec::new();
        for (pf, (part, gt)) in fwd_parts.iter().zip(s.parts.iter().zip(&s.gt_poses)) {
            let gt_posed = equiv_assembly::geometry::apply_pose(&part.points, gt, part.centroid);
            terms.push(equiv_assembly::losses::loss_rot(&mut tape, pf.rotation, &gt.rotation));
            terms.push(equiv_assembly::losses::loss_trans(&mut tape, pf.translation, gt.translation));
            terms.push(equiv_assembly::losses::loss_point(&mut tape, pf.centered, pf.rotation, pf.translation, &gt_posed));
            let dec = model.decoder.forward(&mut tape, &ps, pf.g);
            terms.push(equiv_assembly::losses::loss_recon(&mut tape, dec, &gt_posed));
        }
        let total = equiv_assembly::losses::mean_scalars(&mut tape, &terms);
        let _g = tape.backward(total);
    }
    let full = t0.elapsed().as_secs_f64() / reps as f64;

    println!("forward only: {:.2} ms/sample", fwd * 1e3);
    println!("fwd+loss+bwd: {:.2} ms/sample", full * 1e3);

    // forward with frozen graphs+picks (no knn, no pool scoring)
    let s0 = &samples[0];
    let mut traces = Vec::new();
    {
        let mut tape = Tape::new();
        for part in &s0.parts {
            let c = part.centered();
            let v = tape.constant_data(vec![c.len(), 3], c.flat());
            traces.push(model.encoder.encode(&mut tape, &ps, v, false).trace);
        }
    }
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        for (part, trace) in s0.parts.iter().zip(&traces) {
            let c = part.centered();
            let v = tape.constant_data(vec![c.len(), 3], c.flat());
            let _ = model.encoder.encode_frozen(&mut tape, &ps, v, trace, false);
        }
    }
    println!("frozen-graph encode fwd: {:.2} ms/sample", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // knn alone
    let c = s0.parts[0].centered().flat();
    let t0 = Instant::now();
    for _ in 0..reps {
        for _ in 0..2 {
            let _ = equiv_assembly::geometry::knn_indices(&c, 3, 8);
            let fake: Vec<f32> = (0..64*36).map(|i| (i as f32 * 0.37).sin()).collect();
            let _ = equiv_assembly::geometry::knn_indices(&fake, 36, 8);
            let _ = equiv_assembly::geometry::knn_indices(&fake, 36, 8);
        }
    }
    println!("knn (3 graphs x 2 parts): {:.2} ms/sample", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}
// appended second entry point via env switch in main? no - quick hack: bench2 as test
