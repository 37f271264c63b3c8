//! Part-correlation features and pose prediction: translation handling by
//! centroid centering, the correlation feature C_ij = G_j * F_i, its
//! aggregate H_i, and the 6D rotation / translation regression heads.

use rand::Rng;

use crate::geometry::{Mat3, PointCloud, Pose, Vec3};
use crate::grad::{ParamSet, Tape, Var};
use crate::vn::{Decoder, Discriminator, DualEncoder, EncodeTrace, Mlp};

/// One fragment: the observed (raw) points, their gravity center, and the
/// part's index within its assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct PartCloud {
    pub points: PointCloud,
    pub centroid: Vec3,
    pub index: usize,
}

impl PartCloud {
    pub fn from_raw(points: PointCloud, index: usize) -> PartCloud {
        let centroid = points.centroid();
        PartCloud {
            points,
            centroid,
            index,
        }
    }

    /// Points with the gravity center subtracted; what the networks see.
    pub fn centered(&self) -> PointCloud {
        PointCloud::new(
            self.points
                .points
                .iter()
                .map(|p| crate::geometry::sub3(*p, self.centroid))
                .collect(),
        )
    }
}

/// Split a raw cloud into its centered form and gravity center.
pub fn center(raw: &PointCloud) -> (PointCloud, Vec3) {
    assert!(!raw.is_empty(), "center of empty cloud");
    let part = PartCloud::from_raw(raw.clone(), 0);
    (part.centered(), part.centroid)
}

/// C_ij = G_j * F_i: part j's invariant geometry summary mixed into part i's
/// equivariant feature. Equivariant to part i's rotation, invariant to j's.
pub fn part_correlation(tape: &mut Tape, g_j: Var, f_i: Var) -> Var {
    let gs = tape.shape(g_j);
    let fs = tape.shape(f_i);
    assert!(
        gs.len() == 2 && fs.len() == 2 && gs[0] == gs[1] && fs[1] == 3 && gs[1] == fs[0],
        "part_correlation expects G [f, f] and F [f, 3], got {gs:?} x {fs:?}"
    );
    tape.matmul(g_j, f_i)
}

/// H_i = (1/(N-1)) sum_{j != i} G_j * F_i.
pub fn aggregate(tape: &mut Tape, features: &[(Var, Var)], i: usize) -> Var {
    let n = features.len();
    assert!(
        n >= 2,
        "aggregate needs at least two parts, got {n} (single part has no assembly problem)"
    );
    let f_i = features[i].0;
    let mut terms = Vec::with_capacity(n - 1);
    for (j, &(_, g_j)) in features.iter().enumerate() {
        if j != i {
            terms.push(part_correlation(tape, g_j, f_i));
        }
    }
    let sum = tape.add_n(&terms);
    tape.scale(sum, 1.0 / (n - 1) as f32)
}

/// Orthonormalize a 6-number rotation representation into a row-convention
/// rotation matrix. Near-degenerate inputs (short first vector or collinear
/// pair) fall back to a coordinate axis, so the result is always a valid
/// rotation and never NaN.
pub fn rotation_from_6d(tape: &mut Tape, six: Var) -> Var {
    assert_eq!(tape.shape(six), &[6], "rotation_from_6d expects [6]");
    let a = tape.slice(six, 0, 0, 3);
    let b = tape.slice(six, 0, 3, 3);

    let a_norm = vec_norm(tape, a);
    let r1 = if tape.value(a_norm)[0] < 1e-6 {
        tape.constant_data(vec![3], vec![1.0, 0.0, 0.0])
    } else {
        normalize3(tape, a)
    };

    let d = dot3(tape, r1, b);
    let proj = tape.mul(r1, d);
    let u = tape.sub(b, proj);
    let u_norm = vec_norm(tape, u);
    let r2 = if tape.value(u_norm)[0] < 1e-6 {
        // pick the coordinate axis least aligned with r1 and orthogonalize
        let r1v = tape.value(r1);
        let axis = (0..3).min_by(|&x, &y| r1v[x].abs().total_cmp(&r1v[y].abs())).unwrap();
        let mut e = vec![0.0f32; 3];
        e[axis] = 1.0;
        let ev = tape.constant_data(vec![3], e);
        let d2 = dot3(tape, r1, ev);
        let proj2 = tape.mul(r1, d2);
        let u2 = tape.sub(ev, proj2);
        normalize3(tape, u2)
    } else {
        normalize3(tape, u)
    };
    let r3 = tape.cross3(r1, r2);

    let row1 = tape.reshape(r1, vec![1, 3]);
    let row2 = tape.reshape(r2, vec![1, 3]);
    let row3 = tape.reshape(r3, vec![1, 3]);
    let top = tape.concat(row1, row2, 0);
    tape.concat(top, row3, 0)
}

fn vec_norm(tape: &mut Tape, v: Var) -> Var {
    let sq = tape.mul(v, v);
    let s = tape.sum_axis(sq, 0);
    tape.sqrt(s)
}

/// Scale a feature tensor to unit root-mean-square entry. The Frobenius norm
/// is rotation-invariant, so equivariance of the input is preserved; the
/// pose heads then see inputs of a stable magnitude regardless of how small
/// the encoder products come out.
fn normalize_rms(tape: &mut Tape, h: Var) -> Var {
    let numel = tape.numel(h) as f32;
    let sq = tape.mul(h, h);
    let total = tape.sum_all(sq);
    let mean = tape.scale(total, 1.0 / numel);
    let rms = tape.sqrt(mean);
    let eps = tape.constant_data(vec![1], vec![1e-6]);
    let den = tape.add(rms, eps);
    tape.div(h, den)
}

fn normalize3(tape: &mut Tape, v: Var) -> Var {
    // Inputs shorter than the 1e-6 fallback cutoff never reach this, so the
    // eps only needs to keep 0/0 out, not to bias the unit norm.
    let n = vec_norm(tape, v);
    let eps = tape.constant_data(vec![1], vec![1e-12]);
    let den = tape.add(n, eps);
    tape.div(v, den)
}

fn dot3(tape: &mut Tape, a: Var, b: Var) -> Var {
    let p = tape.mul(a, b);
    tape.sum_axis(p, 0)
}

/// Network hyperparameters; read from the harness config.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub knn: usize,
    pub points_per_part: usize,
    pub encoder_channels: [usize; 3],
    pub head_hidden: usize,
    pub decoder_hidden: usize,
    pub leaky_slope: f32,
    /// H_i = F_i when false (correlation ablation).
    pub use_correlation: bool,
    /// Debug negative control: break equivariance with a plain linear mix.
    pub scramble_vn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 64,
            knn: 16,
            points_per_part: 512,
            encoder_channels: [32, 32, 64],
            head_hidden: 256,
            decoder_hidden: 512,
            leaky_slope: 0.2,
            use_correlation: true,
            scramble_vn: false,
        }
    }
}

/// Everything computed for one part during a forward pass.
pub struct PartForward {
    pub centered: Var,
    pub centroid: Vec3,
    pub f: Var,
    pub g: Var,
    pub h: Var,
    pub rotation: Var,
    pub translation: Var,
    pub trace: EncodeTrace,
}

impl PartForward {
    pub fn pose(&self, tape: &Tape) -> Pose {
        Pose {
            rotation: Mat3::from_flat(tape.value(self.rotation)),
            translation: {
                let t = tape.value(self.translation);
                [t[0], t[1], t[2]]
            },
        }
    }
}

/// The full assembly network: shared dual encoder, pose heads, canonical
/// decoder, and discriminator.
pub struct AssemblyModel {
    pub encoder: DualEncoder,
    pub rot_head: Mlp,
    pub trans_head: Mlp,
    pub decoder: Decoder,
    pub discriminator: Discriminator,
    pub config: ModelConfig,
}

impl AssemblyModel {
    /// Generator parameters are registered under `gen.`, discriminator
    /// parameters under `disc.`, so the two optimizers can partition them.
    pub fn init<R: Rng>(ps: &mut ParamSet, config: ModelConfig, rng: &mut R) -> AssemblyModel {
        let f = config.feature_dim;
        let encoder = DualEncoder::init(
            ps,
            "gen.enc",
            &config.encoder_channels,
            f,
            config.knn,
            config.leaky_slope,
            rng,
        );
        let rot_head = Mlp::init(
            ps,
            "gen.rot",
            &[f * 3, config.head_hidden, config.head_hidden, 6],
            rng,
        );
        let trans_head = Mlp::init(
            ps,
            "gen.trans",
            &[f * 3, config.head_hidden, config.head_hidden, 3],
            rng,
        );
        let decoder = Decoder::init(
            ps,
            "gen.dec",
            f,
            config.decoder_hidden,
            config.points_per_part,
            rng,
        );
        let discriminator = Discriminator::init(ps, "disc", rng);
        AssemblyModel {
            encoder,
            rot_head,
            trans_head,
            decoder,
            discriminator,
            config,
        }
    }

    /// Full pipeline on one assembly: center each part, encode, aggregate
    /// correlations, and regress poses. Needs at least two parts with at
    /// least k+1 points each.
    pub fn forward_parts(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        parts: &[PartCloud],
    ) -> Vec<PartForward> {
        assert!(
            parts.len() >= 2,
            "assembly needs at least two parts, got {}",
            parts.len()
        );
        let mut encoded = Vec::with_capacity(parts.len());
        for part in parts {
            let centered = part.centered();
            let cloud = tape.constant_data(vec![centered.len(), 3], centered.flat());
            let out = self
                .encoder
                .encode(tape, ps, cloud, self.config.scramble_vn);
            encoded.push((cloud, part.centroid, out));
        }
        let features: Vec<(Var, Var)> = encoded.iter().map(|(_, _, e)| (e.f, e.g)).collect();
        let mut forwards = Vec::with_capacity(parts.len());
        for (i, (cloud, centroid, enc)) in encoded.into_iter().enumerate() {
            let h = if self.config.use_correlation {
                aggregate(tape, &features, i)
            } else {
                enc.f
            };
            let head_in = normalize_rms(tape, h);
            let (rotation, translation) = self.heads(tape, ps, head_in);
            forwards.push(PartForward {
                centered: cloud,
                centroid,
                f: enc.f,
                g: enc.g,
                h,
                rotation,
                translation,
                trace: enc.trace,
            });
        }
        forwards
    }

    fn heads(&self, tape: &mut Tape, ps: &ParamSet, h: Var) -> (Var, Var) {
        let f = self.config.feature_dim;
        let flat = tape.reshape(h, vec![1, f * 3]);
        let six_row = self.rot_head.forward(tape, ps, flat);
        let six = tape.reshape(six_row, vec![6]);
        // The label rotation maps the observed pose back to canonical, so it
        // composes contravariantly: rotating a part by S sends its label R
        // to S^T R. Reading the 6D pair out of the (covariant) feature
        // stream and transposing the orthonormalized frame gives the head
        // that transformation law; without the transpose, pose-varied
        // samples pull the weights in cancelling directions.
        let frame = rotation_from_6d(tape, six);
        let rotation = tape.transpose_last2(frame);
        let t_row = self.trans_head.forward(tape, ps, flat);
        let translation = tape.reshape(t_row, vec![3]);
        (rotation, translation)
    }

    /// Predict per-part poses for raw part clouds.
    pub fn predict_assembly(&self, ps: &ParamSet, raw_parts: &[PointCloud]) -> Vec<Pose> {
        let parts: Vec<PartCloud> = raw_parts
            .iter()
            .enumerate()
            .map(|(i, p)| PartCloud::from_raw(p.clone(), i))
            .collect();
        let mut tape = Tape::new();
        let fwd = self.forward_parts(&mut tape, ps, &parts);
        fwd.iter().map(|p| p.pose(&tape)).collect()
    }
}
