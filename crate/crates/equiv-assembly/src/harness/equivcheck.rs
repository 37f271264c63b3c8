//! Architecture-level equivariance self-check: measures, on real fracture
//! parts and random rotations, the deviations that the encoder and the
//! correlation features promise to keep at zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correlation::{aggregate, AssemblyModel, PartCloud};
use crate::data::generate_sample;
use crate::geometry::{apply_pose, random_rotation_uniform, Mat3, Pose};
use crate::grad::{ParamSet, Tape, Var};
use crate::vn::{feature_rel_error, rotate_features};

use super::config::Config;
use super::HarnessError;

pub const EQUIV_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct PropertyResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl PropertyResult {
    pub fn pass(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct EquivReport {
    pub properties: Vec<PropertyResult>,
    /// Rotation draws skipped because float noise flipped a genuine
    /// near-tie (kNN distance or pool score) between the base and rotated
    /// encodes.
    pub unstable_redraws: usize,
    /// Rotations measured without a stable-selection certificate after the
    /// redraw budget ran out; stays zero for an equivariant architecture.
    pub uncertified: usize,
    pub rotations: usize,
    pub part_sets: usize,
}

impl EquivReport {
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(PropertyResult::pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<44} {:>12} {:>10} {:>6}\n",
            "property", "max rel err", "tolerance", "pass"
        );
        for p in &self.properties {
            out.push_str(&format!(
                "{:<44} {:>12.3e} {:>10.0e} {:>6}\n",
                p.name,
                p.max_rel_error,
                p.tolerance,
                if p.pass() { "yes" } else { "NO" }
            ));
        }
        out.push_str(&format!(
            "({} rotations x {} part sets, {} unstable redraws, {} uncertified)",
            self.rotations, self.part_sets, self.unstable_redraws, self.uncertified
        ));
        out
    }
}

/// Run the property suite on the given model.
pub fn run_suite(
    model: &AssemblyModel,
    ps: &ParamSet,
    config: &Config,
    rotations: usize,
    part_sets: usize,
) -> Result<EquivReport, HarnessError> {
    let mut err_equiv_f = 0.0f64; // E(PR) = E(P) R
    let mut err_inv_g = 0.0f64; // E_inv(PR) = E_inv(P)
    let mut err_corr_equiv = 0.0f64; // H_i co-rotates with part i
    let mut err_corr_inv = 0.0f64; // H_i ignores part j's rotation
    let mut redraws = 0usize;
    let mut uncertified = 0usize;

    let gen = config.gen_config();
    let mut rot_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xEC_0FF5);
    for set_idx in 0..part_sets {
        let sample = generate_sample(&gen, 1_000_000 + set_idx as u64)
            .map_err(|e| HarnessError::Other(format!("suite set {set_idx}: {e}")))?;
        let mut tape = Tape::new();
        // base encodes, one per part
        let mut base = Vec::new();
        for part in &sample.parts {
            let centered = part.centered();
            let cloud = tape.constant_data(vec![centered.len(), 3], centered.flat());
            let enc = model
                .encoder
                .encode(&mut tape, ps, cloud, model.config.scramble_vn);
            base.push(enc);
        }
        let feats: Vec<(Var, Var)> = base.iter().map(|e| (e.f, e.g)).collect();
        let h0_base = aggregate(&mut tape, &feats, 0);
        let h1_base = aggregate(&mut tape, &feats, 1);

        for _ in 0..rotations {
            // Prefer rotations whose encodes land in the same discrete
            // region (same kNN graphs and pool picks) as the base encode;
            // float noise on genuine near-ties otherwise shows up as a fake
            // equivariance error. A non-equivariant architecture never
            // stabilizes, so after a few redraws measure as-is - the error
            // it reports is then the real, large one.
            let mut accepted = None;
            for attempt in 0..5 {
                let r = random_rotation_uniform(&mut rot_rng);
                // rotate part 0 about its own centroid
                let part0 = &sample.parts[0];
                let centered0 = part0.centered();
                let rotated = rotate_features(&centered0.flat(), &r);
                let cloud_r = tape.constant_data(vec![centered0.len(), 3], rotated);
                let enc = model
                    .encoder
                    .encode(&mut tape, ps, cloud_r, model.config.scramble_vn);
                let stable = enc.trace.signature() == base[0].trace.signature();
                if stable {
                    accepted = Some((r, enc));
                    break;
                }
                redraws += 1;
                if attempt == 4 {
                    uncertified += 1;
                    accepted = Some((r, enc));
                }
            }
            let (r, enc_r) = accepted.expect("rotation draw loop always yields an encode");

            // property 1: equivariant head
            let f_want = rotate_features(tape.value(base[0].f), &r);
            let e1 = feature_rel_error(tape.value(enc_r.f), &f_want, tape.value(base[0].f));
            err_equiv_f = err_equiv_f.max(e1);

            // property 2: invariant head
            let e2 = feature_rel_error(
                tape.value(enc_r.g),
                tape.value(base[0].g),
                tape.value(base[0].g),
            );
            err_inv_g = err_inv_g.max(e2);

            // property 3: H_0 co-rotates when part 0 rotates
            let mut feats_rot = feats.clone();
            feats_rot[0] = (enc_r.f, enc_r.g);
            let h0_rot = aggregate(&mut tape, &feats_rot, 0);
            let h0_want = rotate_features(tape.value(h0_base), &r);
            let e3 = feature_rel_error(tape.value(h0_rot), &h0_want, tape.value(h0_base));
            err_corr_equiv = err_corr_equiv.max(e3);

            // property 4: H_1 ignores part 0's rotation
            let h1_rot = aggregate(&mut tape, &feats_rot, 1);
            let e4 = feature_rel_error(
                tape.value(h1_rot),
                tape.value(h1_base),
                tape.value(h1_base),
            );
            err_corr_inv = err_corr_inv.max(e4);
        }
    }

    let tol = EQUIV_TOLERANCE;
    Ok(EquivReport {
        properties: vec![
            PropertyResult {
                name: "equivariant encoder: E(PR) = E(P) R",
                max_rel_error: err_equiv_f,
                tolerance: tol,
            },
            PropertyResult {
                name: "invariant encoder: E_inv(PR) = E_inv(P)",
                max_rel_error: err_inv_g,
                tolerance: tol,
            },
            PropertyResult {
                name: "correlation: H_i(P_i R) = H_i(P_i) R",
                max_rel_error: err_corr_equiv,
                tolerance: tol,
            },
            PropertyResult {
                name: "correlation: H_i(P_j R) = H_i(P_j), j != i",
                max_rel_error: err_corr_inv,
                tolerance: tol,
            },
        ],
        unstable_redraws: redraws,
        uncertified,
        rotations,
        part_sets,
    })
}

/// `check-equivariance` entry point: build (or load) the model, run the
/// suite, print the per-property table.
pub fn cmd_check_equivariance(config: &Config) -> Result<EquivReport, HarnessError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ps = ParamSet::new();
    let model = AssemblyModel::init(&mut ps, config.model_config(), &mut rng);
    if !config.resume_from.is_empty() {
        let entries = crate::grad::checkpoint::load(&config.resume_from)?;
        super::load_model_params(&entries, &mut ps)?;
    }
    let report = run_suite(&model, &ps, config, 100, 10)?;
    println!("{}", report.table());
    Ok(report)
}

/// Identity check used by tests: rotating a part about its centroid leaves
/// the centered cloud exactly rotated.
pub fn rotate_part(part: &PartCloud, r: &Mat3) -> PartCloud {
    let pose = Pose {
        rotation: *r,
        translation: part.centroid,
    };
    let points = apply_pose(&part.points, &pose, part.centroid);
    PartCloud {
        points,
        centroid: part.centroid,
        index: part.index,
    }
}
