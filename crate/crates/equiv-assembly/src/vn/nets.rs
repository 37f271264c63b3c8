//! Scalar-feature networks: the canonical-cloud decoder, the whole-shape
//! discriminator, and the plain MLP they are built from.

use rand::Rng;

use crate::grad::{ParamId, ParamSet, Tape, Var};

/// Fully connected stack with tanh hidden activations and a linear output.
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>, // (w [in, out], b [out])
}

impl Mlp {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, dims: &[usize], rng: &mut R) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::new();
        for (li, win) in dims.windows(2).enumerate() {
            let (d_in, d_out) = (win[0], win[1]);
            let w = ps.register_uniform(&format!("{name}.l{li}.w"), vec![d_in, d_out], d_in, rng);
            let b = ps.register(
                &format!("{name}.l{li}.b"),
                crate::grad::Tensor::zeros(vec![d_out]),
            );
            layers.push((w, b));
        }
        Mlp { layers }
    }

    /// `x` is `[batch, d_in]`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (li, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(ps, w);
            let bv = tape.param(ps, b);
            let mm = tape.matmul(h, wv);
            h = tape.add(mm, bv);
            if li != last {
                h = tape.tanh(h);
            }
        }
        h
    }
}

/// Decodes a flattened invariant feature `G in R^{f x f}` into the part's
/// canonical-pose point cloud.
pub struct Decoder {
    mlp: Mlp,
    feature_dim: usize,
    pub out_points: usize,
}

impl Decoder {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        feature_dim: usize,
        hidden: usize,
        out_points: usize,
        rng: &mut R,
    ) -> Decoder {
        let dims = [feature_dim * feature_dim, hidden, hidden, 3 * out_points];
        Decoder {
            mlp: Mlp::init(ps, name, &dims, rng),
            feature_dim,
            out_points,
        }
    }

    /// `g` is `[f, f]`; output is `[n, 3]`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, g: Var) -> Var {
        assert_eq!(
            tape.shape(g),
            &[self.feature_dim, self.feature_dim],
            "decoder expects [f, f] invariant feature"
        );
        let flat = tape.reshape(g, vec![1, self.feature_dim * self.feature_dim]);
        let out = self.mlp.forward(tape, ps, flat);
        tape.reshape(out, vec![self.out_points, 3])
    }
}

/// Permutation-invariant realism score for a whole cloud: shared per-point
/// MLP, max pool over points, then a scalar head.
pub struct Discriminator {
    point_mlp: Mlp,
    head: Mlp,
}

impl Discriminator {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, rng: &mut R) -> Discriminator {
        Discriminator {
            point_mlp: Mlp::init(ps, &format!("{name}.point"), &[3, 64, 128], rng),
            head: Mlp::init(ps, &format!("{name}.head"), &[128, 64, 1], rng),
        }
    }

    /// `cloud` is `[m, 3]`, centered; returns a scalar `[1]`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, cloud: Var) -> Var {
        let shape = tape.shape(cloud).to_vec();
        assert!(
            shape.len() == 2 && shape[1] == 3 && shape[0] > 0,
            "discriminator expects non-empty [m, 3], got {shape:?}"
        );
        let feats = self.point_mlp.forward(tape, ps, cloud); // [m, 128]
        let pooled = tape.max_axis(feats, 0); // [128]
        let row = tape.reshape(pooled, vec![1, 128]);
        let score = self.head.forward(tape, ps, row); // [1, 1]
        tape.reshape(score, vec![1])
    }
}
