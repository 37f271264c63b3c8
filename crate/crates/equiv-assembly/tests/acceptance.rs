//! Acceptance gate: one pass/fail line per criterion, all criteria asserted
//! at the end. Run with `cargo test --test acceptance -- --nocapture` to
//! watch progress; the toy trainings dominate the runtime.

use std::path::Path;
use std::time::Instant;

use equiv_assembly::correlation::{rotation_from_6d, AssemblyModel, ModelConfig, PartCloud};
use equiv_assembly::data::{self, io as dataio, CutType, GenConfig, ShapeType};
use equiv_assembly::geometry::{
    self, chamfer, geodesic, knn_indices, Mat3, PointCloud,
};
use equiv_assembly::grad::{check, ParamSet, Tape, Var};
use equiv_assembly::harness::{self, cmd_train, run_suite, Config};
use equiv_assembly::losses;
use equiv_assembly::metrics::{evaluate, IdentityPredictor, ModelPredictor, OraclePredictor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gate {
    results: Vec<(String, bool, String)>,
}

impl Gate {
    fn new() -> Gate {
        Gate {
            results: Vec::new(),
        }
    }

    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!(
            "[{}] criterion {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.results.push((name.to_string(), pass, detail));
    }

    fn finish(self) {
        let failures: Vec<_> = self
            .results
            .iter()
            .filter(|(_, pass, _)| !pass)
            .collect();
        assert!(
            failures.is_empty(),
            "acceptance criteria failed: {failures:?}"
        );
    }
}

/// Small-but-real dimensions shared by the property criteria.
fn suite_config() -> Config {
    let mut c = Config::default();
    c.samples = 4;
    c.whole_points = 512;
    c.part_points = 64;
    c.min_part_points = 48;
    c.parts_min = 2;
    c.parts_max = 3;
    c.feature_dim = 24;
    c.knn = 8;
    c.encoder_channels = vec![12, 12, 24];
    c.head_hidden = 128;
    c.decoder_hidden = 128;
    c.seed = 5;
    c
}

#[test]
fn acceptance_criteria() {
    let mut gate = Gate::new();
    criterion_1_equivariance(&mut gate);
    criterion_2_negative_control(&mut gate);
    criterion_3_gradient_oracle(&mut gate);
    criterion_4_brute_force_oracles(&mut gate);
    criterion_5_chance_level(&mut gate);
    criterion_8_dataset_determinism(&mut gate);
    criterion_9_reproducible_training(&mut gate);
    criteria_6_7_toy_training(&mut gate);
    gate.finish();
}

fn criterion_1_equivariance(gate: &mut Gate) {
    let t0 = Instant::now();
    let config = suite_config();
    let (ps, model) = harness::build_model(&config);
    let report = run_suite(&model, &ps, &config, 100, 10).expect("suite runs");
    let elapsed = t0.elapsed().as_secs_f64();
    let max_err = report
        .properties
        .iter()
        .map(|p| p.max_rel_error)
        .fold(0.0f64, f64::max);
    let pass = report.all_pass() && report.uncertified == 0 && elapsed < 60.0;
    gate.record(
        "1 (equivariance suite)",
        pass,
        format!(
            "max rel err {max_err:.2e} (tol 1e-4), {} redraws, {} uncertified, {elapsed:.1}s",
            report.unstable_redraws, report.uncertified
        ),
    );
}

fn criterion_2_negative_control(gate: &mut Gate) {
    let mut config = suite_config();
    config.scramble_vn = true;
    let (ps, model) = harness::build_model(&config);
    let report = run_suite(&model, &ps, &config, 20, 4).expect("suite runs");
    let max_err = report
        .properties
        .iter()
        .map(|p| p.max_rel_error)
        .fold(0.0f64, f64::max);
    let pass = max_err >= 1e-1 && !report.all_pass();
    gate.record(
        "2 (negative control)",
        pass,
        format!("scrambled layers fail at rel err {max_err:.2e} (need >= 1e-1)"),
    );
}

/// Tiny pipeline instance for finite-difference checks: n=8 points, f=4.
struct TinyPipeline {
    ps: ParamSet,
    model: AssemblyModel,
    sample: data::AssemblySample,
    traces: Vec<equiv_assembly::vn::EncodeTrace>,
    whole_small: PointCloud,
    whole_trace: equiv_assembly::vn::EncodeTrace,
}

fn tiny_pipeline(seed: u64) -> TinyPipeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let config = ModelConfig {
        feature_dim: 4,
        knn: 3,
        points_per_part: 8,
        encoder_channels: [4, 4, 4],
        head_hidden: 16,
        decoder_hidden: 16,
        leaky_slope: 0.2,
        use_correlation: true,
        scramble_vn: false,
    };
    let model = AssemblyModel::init(&mut ps, config, &mut rng);
    let gen = GenConfig {
        samples: 1,
        seed,
        whole_points: 256,
        part_points: 8,
        min_part_points: 32,
        parts_min: 2,
        parts_max: 2,
        shapes: vec![ShapeType::Box, ShapeType::Ellipsoid],
        cuts: vec![CutType::Planar, CutType::Sine],
        translation_range: 0.5,
    };
    let sample = data::generate_sample(&gen, seed).expect("tiny sample");
    // pin the discrete selections at the base point
    let mut tape = Tape::new();
    let mut traces = Vec::new();
    for part in &sample.parts {
        let c = part.centered();
        let v = tape.constant_data(vec![c.len(), 3], c.flat());
        traces.push(model.encoder.encode(&mut tape, &ps, v, false).trace);
    }
    let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let whole_small = PointCloud::new(
        (0..8)
            .map(|_| sample.whole.points[wrng.gen_range(0..sample.whole.len())])
            .collect(),
    );
    let (wc, _) = equiv_assembly::correlation::center(&whole_small);
    let wv = tape.constant_data(vec![8, 3], wc.flat());
    let whole_trace = model.encoder.encode(&mut tape, &ps, wv, false).trace;
    TinyPipeline {
        ps,
        model,
        sample,
        traces,
        whole_small,
        whole_trace,
    }
}

impl TinyPipeline {
    /// Encode all parts with pinned traces and aggregate correlation
    /// features; returns per-part (centered cloud var, h, rotation, translation).
    fn forward(&self, tape: &mut Tape, ps: &ParamSet) -> Vec<(Var, Var, Var, Var)> {
        let mut encs = Vec::new();
        let mut clouds = Vec::new();
        for (part, trace) in self.sample.parts.iter().zip(&self.traces) {
            let c = part.centered();
            let v = tape.constant_data(vec![c.len(), 3], c.flat());
            let e = self
                .model
                .encoder
                .encode_frozen(tape, ps, v, trace, false);
            clouds.push(v);
            encs.push(e);
        }
        let features: Vec<(Var, Var)> = encs.iter().map(|e| (e.f, e.g)).collect();
        let mut out = Vec::new();
        for i in 0..self.sample.parts.len() {
            let h = equiv_assembly::correlation::aggregate(tape, &features, i);
            let sq = tape.mul(h, h);
            let total = tape.sum_all(sq);
            let mean = tape.scale(total, 1.0 / tape.numel(h) as f32);
            let rms = tape.sqrt(mean);
            let eps = tape.constant_data(vec![1], vec![1e-6]);
            let den = tape.add(rms, eps);
            let hn = tape.div(h, den);
            let f = self.model.config.feature_dim;
            let flat = tape.reshape(hn, vec![1, f * 3]);
            let six_row = self.model.rot_head.forward(tape, ps, flat);
            let six = tape.reshape(six_row, vec![6]);
            let rot = rotation_from_6d(tape, six);
            let t_row = self.model.trans_head.forward(tape, ps, flat);
            let t = tape.reshape(t_row, vec![3]);
            out.push((clouds[i], encs[i].g, rot, t));
        }
        out
    }

    fn gen_param_ids(&self) -> Vec<equiv_assembly::grad::ParamId> {
        self.ps
            .ids()
            .filter(|&id| {
                let n = self.ps.name(id);
                n.starts_with("gen.") && !n.contains(".pool.")
            })
            .collect()
    }

    fn disc_param_ids(&self) -> Vec<equiv_assembly::grad::ParamId> {
        self.ps
            .ids()
            .filter(|&id| self.ps.name(id).starts_with("disc."))
            .collect()
    }
}

fn criterion_3_gradient_oracle(gate: &mut Gate) {
    let t0 = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut all_pass = true;
    for seed in 0..20u64 {
        let tp = tiny_pipeline(9000 + seed);
        let ids = tp.gen_param_ids();
        let gt_posed: Vec<PointCloud> = tp
            .sample
            .parts
            .iter()
            .zip(&tp.sample.gt_poses)
            .map(|(part, pose)| geometry::apply_pose(&part.points, pose, part.centroid))
            .collect();

        type TermFn<'a> = Box<dyn FnMut(&mut Tape, &ParamSet) -> Var + 'a>;
        let mut terms: Vec<(&str, TermFn)> = Vec::new();
        let sample = &tp.sample;
        terms.push((
            "rot",
            Box::new(|tape, ps| {
                let fwd = tp.forward(tape, ps);
                let ts: Vec<Var> = fwd
                    .iter()
                    .zip(&sample.gt_poses)
                    .map(|((_, _, r, _), gt)| losses::loss_rot(tape, *r, &gt.rotation))
                    .collect();
                losses::mean_scalars(tape, &ts)
            }),
        ));
        terms.push((
            "trans",
            Box::new(|tape, ps| {
                let fwd = tp.forward(tape, ps);
                let ts: Vec<Var> = fwd
                    .iter()
                    .zip(&sample.gt_poses)
                    .map(|((_, _, _, t), gt)| losses::loss_trans(tape, *t, gt.translation))
                    .collect();
                losses::mean_scalars(tape, &ts)
            }),
        ));
        terms.push((
            "point",
            Box::new(|tape, ps| {
                let fwd = tp.forward(tape, ps);
                let ts: Vec<Var> = fwd
                    .iter()
                    .zip(&gt_posed)
                    .map(|((cloud, _, r, t), gtp)| losses::loss_point(tape, *cloud, *r, *t, gtp))
                    .collect();
                losses::mean_scalars(tape, &ts)
            }),
        ));
        terms.push((
            "recon",
            Box::new(|tape, ps| {
                let fwd = tp.forward(tape, ps);
                let ts: Vec<Var> = fwd
                    .iter()
                    .zip(&gt_posed)
                    .map(|((_, g, _, _), gtp)| {
                        let decoded = tp.model.decoder.forward(tape, ps, *g);
                        losses::loss_recon(tape, decoded, gtp)
                    })
                    .collect();
                losses::mean_scalars(tape, &ts)
            }),
        ));
        terms.push((
            "embed",
            Box::new(|tape, ps| {
                let mut encs = Vec::new();
                for (part, trace) in tp.sample.parts.iter().zip(&tp.traces) {
                    let c = part.centered();
                    let v = tape.constant_data(vec![c.len(), 3], c.flat());
                    encs.push(tp.model.encoder.encode_frozen(tape, ps, v, trace, false));
                }
                let features: Vec<(Var, Var)> = encs.iter().map(|e| (e.f, e.g)).collect();
                let hs: Vec<Var> = (0..tp.sample.parts.len())
                    .map(|i| equiv_assembly::correlation::aggregate(tape, &features, i))
                    .collect();
                let (wc, _) = equiv_assembly::correlation::center(&tp.whole_small);
                let wv = tape.constant_data(vec![8, 3], wc.flat());
                let f_star = tp
                    .model
                    .encoder
                    .encode_frozen(tape, ps, wv, &tp.whole_trace, false)
                    .f;
                losses::loss_embed(tape, &hs, f_star)
            }),
        ));
        terms.push((
            "gan_g",
            Box::new(|tape, ps| {
                let fwd = tp.forward(tape, ps);
                let mut scores = Vec::new();
                let mut composite: Option<Var> = None;
                for (cloud, _, r, t) in &fwd {
                    let rotated = tape.matmul(*cloud, *r);
                    let posed = tape.add(rotated, *t);
                    composite = Some(match composite {
                        Some(c) => tape.concat(c, posed, 0),
                        None => posed,
                    });
                }
                let comp = composite.unwrap();
                let mean = tape.mean_axis(comp, 0);
                let centered = tape.sub(comp, mean);
                scores.push(tp.model.discriminator.forward(tape, ps, centered));
                losses::loss_gan_generator(tape, &scores)
            }),
        ));

        for (name, mut f) in terms {
            let err = check::param_grad_rel_error(&tp.ps, &ids, 1e-3, f.as_mut());
            if err > worst.0 {
                worst = (err, format!("{name} seed {seed}"));
            }
            if err > 1e-3 {
                all_pass = false;
            }
        }

        // discriminator loss wrt discriminator weights
        let disc_ids = tp.disc_param_ids();
        let fake: Vec<f32> = {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..24).map(|_| r.gen_range(-1.0..1.0)).collect()
        };
        let real = tp.whole_small.flat();
        let err = check::param_grad_rel_error(&tp.ps, &disc_ids, 1e-3, &mut |tape, ps| {
            let fv = tape.constant_data(vec![8, 3], fake.clone());
            let rv = tape.constant_data(vec![8, 3], real.clone());
            let sf = tp.model.discriminator.forward(tape, ps, fv);
            let sr = tp.model.discriminator.forward(tape, ps, rv);
            losses::loss_gan_discriminator(tape, &[sf], &[sr])
        });
        if err > worst.0 {
            worst = (err, format!("gan_d seed {seed}"));
        }
        if err > 1e-3 {
            all_pass = false;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = all_pass && elapsed < 120.0;
    gate.record(
        "3 (gradient oracle)",
        pass,
        format!(
            "worst rel err {:.2e} at {} (tol 1e-3), {elapsed:.1}s",
            worst.0, worst.1
        ),
    );
}

fn criterion_4_brute_force_oracles(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut chamfer_exact = true;
    let mut knn_exact = true;
    for _ in 0..200 {
        let p: Vec<[f32; 3]> = (0..64)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let q: Vec<[f32; 3]> = (0..64)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let pc = PointCloud::new(p.clone());
        let qc = PointCloud::new(q.clone());
        if chamfer(&pc, &qc).to_bits() != brute_force_chamfer(&p, &q).to_bits() {
            chamfer_exact = false;
        }
        let flat = pc.flat();
        if knn_indices(&flat, 3, 8) != brute_force_knn(&p, 8) {
            knn_exact = false;
        }
    }
    gate.record(
        "4 (brute-force oracles)",
        chamfer_exact && knn_exact,
        format!("chamfer exact: {chamfer_exact}, knn exact: {knn_exact} (200 clouds of 64)"),
    );
}

/// Independent oracle: textbook double loop, f64 accumulation.
fn brute_force_chamfer(p: &[[f32; 3]], q: &[[f32; 3]]) -> f32 {
    let one_way = |a: &[[f32; 3]], b: &[[f32; 3]]| -> f64 {
        let mut acc = 0.0f64;
        for x in a {
            let mut best = f32::INFINITY;
            for y in b {
                let d = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
                if d < best {
                    best = d;
                }
            }
            acc += best as f64;
        }
        acc / a.len() as f64
    };
    (one_way(p, q) + one_way(q, p)) as f32
}

/// Independent oracle: full distance table, stable selection, low-index ties.
fn brute_force_knn(pts: &[[f32; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut cand: Vec<(f32, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = (pts[i][0] - pts[j][0]).powi(2)
                    + (pts[i][1] - pts[j][1]).powi(2)
                    + (pts[i][2] - pts[j][2]).powi(2);
                (d, j)
            })
            .collect();
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(cand[..k].iter().map(|&(_, j)| j).collect());
    }
    out
}

fn criterion_5_chance_level(gate: &mut Gate) {
    // 2600 samples x 2 parts = 5200 uniform rotations; the identity
    // predictor's mean geodesic estimates the Haar expectation pi/2 + 2/pi.
    let gen = GenConfig {
        samples: 2600,
        seed: 4242,
        whole_points: 256,
        part_points: 16,
        min_part_points: 48,
        parts_min: 2,
        parts_max: 2,
        shapes: vec![ShapeType::Sphere, ShapeType::Box],
        cuts: vec![CutType::Planar],
        translation_range: 0.5,
    };
    let samples = data::generate_dataset(&gen).expect("chance dataset");
    let report = evaluate(&samples, &IdentityPredictor, 0.01);
    let pass = (report.gd_rad - 2.2075).abs() <= 0.02;
    gate.record(
        "5 (chance-level calibration)",
        pass,
        format!("identity predictor GD {:.4} rad (expect 2.2075 +- 0.02)", report.gd_rad),
    );
}

fn criterion_8_dataset_determinism(gate: &mut Gate) {
    // default-density generation: regenerate byte-identically, and the
    // gt-pose reassembly stays under the 5e-3 chamfer budget on every sample
    let gen = GenConfig {
        samples: 24,
        seed: 88,
        ..GenConfig::default()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let samples_a = data::generate_dataset(&gen).expect("gen a");
    let samples_b = data::generate_dataset(&gen).expect("gen b");
    dataio::write_dataset(dir_a.path(), &gen, &samples_a).unwrap();
    dataio::write_dataset(dir_b.path(), &gen, &samples_b).unwrap();
    let identical = dirs_identical(dir_a.path(), dir_b.path());

    let mut worst = 0.0f32;
    for s in &samples_a {
        worst = worst.max(s.label_consistency());
    }
    let pass = identical && worst < 5e-3;
    gate.record(
        "8 (dataset determinism + labels)",
        pass,
        format!("byte-identical: {identical}, worst reassembly chamfer {worst:.2e} (tol 5e-3)"),
    );
}

fn dirs_identical(a: &Path, b: &Path) -> bool {
    let mut files_a = Vec::new();
    collect_files(a, &mut files_a);
    files_a.sort();
    for rel in &files_a {
        let ba = std::fs::read(a.join(rel)).unwrap();
        let bb = match std::fs::read(b.join(rel)) {
            Ok(x) => x,
            Err(_) => return false,
        };
        if ba != bb {
            return false;
        }
    }
    !files_a.is_empty()
}

fn collect_files(root: &Path, out: &mut Vec<std::path::PathBuf>) {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<std::path::PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    walk(root, root, out);
}

fn toy_config(root: &Path) -> Config {
    let mut c = Config::default();
    c.dataset_dir = root.join("train").to_string_lossy().into_owned();
    c.eval_dataset_dir = root.join("test").to_string_lossy().into_owned();
    c.checkpoint_dir = root.join("ckpt").to_string_lossy().into_owned();
    c.seed = 42;
    c.samples = 2000;
    c.whole_points = 512;
    c.part_points = 64;
    c.min_part_points = 48;
    c.parts_min = 2;
    c.parts_max = 2;
    c.shapes = vec![ShapeType::Sphere, ShapeType::Box];
    c.cuts = vec![CutType::Planar];
    c.feature_dim = 24;
    c.knn = 8;
    c.encoder_channels = vec![12, 12, 24];
    c.head_hidden = 128;
    c.decoder_hidden = 128;
    c.epochs = 50;
    c.batch_size = 8;
    c.learning_rate = 1e-3;
    c.lambda_embed = 0.0;
    c.lambda_adv = 0.0;
    c.checkpoint_interval = 25;
    c
}

fn criterion_9_reproducible_training(gate: &mut Gate) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = toy_config(dir.path());
    config.samples = 48;
    config.epochs = 3;
    config.eval_dataset_dir = String::new();
    config.checkpoint_interval = 3;
    harness::cmd_generate(&config).expect("generate");
    let run = |ckpt: &str| {
        let mut c = config.clone();
        c.checkpoint_dir = dir.path().join(ckpt).to_string_lossy().into_owned();
        let outcome = cmd_train(&c).expect("train");
        outcome.logs.last().unwrap().total
    };
    let a = run("ck_a");
    let b = run("ck_b");
    let pass = (a - b).abs() <= 1e-6;
    gate.record(
        "9 (reproducible training)",
        pass,
        format!("final losses {a} vs {b} (tol 1e-6)"),
    );
}

fn criteria_6_7_toy_training(gate: &mut Gate) {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());

    // training set + held-out set
    harness::cmd_generate(&config).expect("generate train");
    let mut test_cfg = config.clone();
    test_cfg.dataset_dir = config.eval_dataset_dir.clone();
    test_cfg.samples = 200;
    test_cfg.seed = 777;
    harness::cmd_generate(&test_cfg).expect("generate test");

    let t0 = Instant::now();
    let outcome = cmd_train(&config).expect("toy training");
    let train_mins = t0.elapsed().as_secs_f64() / 60.0;

    let first = outcome.logs.first().unwrap().total;
    let last = outcome.logs.last().unwrap().total;
    let loss_drop_ok = last <= 0.5 * first;

    let (_, test_samples) =
        dataio::read_dataset(Path::new(&config.eval_dataset_dir)).expect("test set");
    let (mut ps, model) = harness::build_model(&config);
    let entries =
        equiv_assembly::grad::checkpoint::load(&outcome.checkpoint).expect("checkpoint");
    harness::load_model_params(&entries, &mut ps).expect("load params");
    let report = evaluate(
        &test_samples,
        &ModelPredictor {
            model: &model,
            params: &ps,
        },
        config.pa_threshold,
    );
    let pass6 = report.gd_rad <= 1.2
        && report.pa >= 0.40
        && loss_drop_ok
        && train_mins < 30.0;
    gate.record(
        "6 (toy two-part training)",
        pass6,
        format!(
            "held-out GD {:.3} rad (<= 1.2), PA {:.1}% (>= 40%), loss {first:.2} -> {last:.2} \
             ({}), {train_mins:.1} min (< 30)",
            report.gd_rad,
            report.pa * 100.0,
            if loss_drop_ok { ">= 50% drop" } else { "drop < 50%" }
        ),
    );

    // sanity on the oracle predictor while the datasets are hot
    let oracle = evaluate(&test_samples, &OraclePredictor, config.pa_threshold);
    assert_eq!(oracle.pa, 1.0, "oracle predictor must score PA = 1.0");

    // criterion 7: identical setup with the correlation module removed
    let mut ablated = config.clone();
    ablated.use_correlation = false;
    ablated.checkpoint_dir = dir.path().join("ckpt_ablated").to_string_lossy().into_owned();
    let outcome_a = cmd_train(&ablated).expect("ablated training");
    let (mut ps_a, model_a) = harness::build_model(&ablated);
    let entries_a =
        equiv_assembly::grad::checkpoint::load(&outcome_a.checkpoint).expect("ablated ckpt");
    harness::load_model_params(&entries_a, &mut ps_a).expect("load ablated");
    let report_a = evaluate(
        &test_samples,
        &ModelPredictor {
            model: &model_a,
            params: &ps_a,
        },
        ablated.pa_threshold,
    );
    let rel = report_a.gd_rad / report.gd_rad;
    let pass7 = rel >= 1.10;
    gate.record(
        "7 (ablation direction)",
        pass7,
        format!(
            "GD without correlation {:.3} vs with {:.3} (ratio {rel:.2}, need >= 1.10)",
            report_a.gd_rad, report.gd_rad
        ),
    );
}

/// Used by the suites above; kept here so the whole gate reads top-down.
#[allow(dead_code)]
fn unused(_: &Mat3) {}
