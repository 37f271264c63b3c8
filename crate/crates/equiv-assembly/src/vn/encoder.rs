//! Shared-trunk dual encoder: rotation-equivariant features F and
//! rotation-invariant features G from one centered part cloud.
//!
//! The trunk is three dynamic edge-convolution blocks (graphs from point
//! coordinates for the first block, feature distances after) followed by a
//! mean pool. Three channel-mixing heads produce F and the two frames whose
//! product forms G: `G = V_eq V_frame^T`, invariant because
//! `(V_eq R)(V_frame R)^T = V_eq V_frame^T`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::geometry::knn_indices;
use crate::grad::{ParamSet, Tape, Var};

use super::layers::{EdgeConv, VnLinear, VnPool};

/// The discrete selections a forward pass made: per-layer neighbor graphs
/// and per-layer neighbor-max picks. Keeping them makes two things possible:
/// certifying that two encodes took the same piecewise-linear region (the
/// equivariance suite requires this, since float noise can flip genuine
/// near-ties in either selection) and pinning the region while
/// finite-differencing weights.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EncodeTrace {
    pub graphs: Vec<Vec<Vec<usize>>>,
    pub picks: Vec<Vec<usize>>,
}

impl EncodeTrace {
    pub fn signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.graphs.hash(&mut h);
        self.picks.hash(&mut h);
        h.finish()
    }
}

/// Equivariant + invariant encodings of one part.
pub struct EncoderOut {
    /// `[f, 3]`, satisfies E(PR) = E(P) R.
    pub f: Var,
    /// `[f, f]`, satisfies E(PR) = E(P).
    pub g: Var,
    pub trace: EncodeTrace,
}

pub struct DualEncoder {
    blocks: Vec<EdgeConv>,
    head_f: VnLinear,
    head_eq: VnLinear,
    head_frame: VnLinear,
    pool: VnPool,
    pub knn: usize,
    pub feature_dim: usize,
}

impl DualEncoder {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        channels: &[usize; 3],
        feature_dim: usize,
        knn: usize,
        slope: f32,
        rng: &mut R,
    ) -> DualEncoder {
        let blocks = vec![
            EdgeConv::init(ps, &format!("{name}.b1"), 1, channels[0], slope, rng),
            EdgeConv::init(ps, &format!("{name}.b2"), channels[0], channels[1], slope, rng),
            EdgeConv::init(ps, &format!("{name}.b3"), channels[1], channels[2], slope, rng),
        ];
        DualEncoder {
            blocks,
            head_f: VnLinear::init(ps, &format!("{name}.head_f.w"), channels[2], feature_dim, rng),
            head_eq: VnLinear::init(
                ps,
                &format!("{name}.head_eq.w"),
                channels[2],
                feature_dim,
                rng,
            ),
            head_frame: VnLinear::init(
                ps,
                &format!("{name}.head_frame.w"),
                channels[2],
                feature_dim,
                rng,
            ),
            pool: VnPool::Mean,
            knn,
            feature_dim,
        }
    }

    /// Encode a centered `[n, 3]` cloud, building neighbor graphs and pool
    /// selections as it goes.
    pub fn encode(&self, tape: &mut Tape, ps: &ParamSet, cloud: Var, scramble: bool) -> EncoderOut {
        self.encode_impl(tape, ps, cloud, None, scramble)
    }

    /// Encode with pinned graphs and pool picks (finite-difference checks
    /// perturb weights without re-deriving the discrete selections, matching
    /// what the tape gradient treats as constant).
    pub fn encode_frozen(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        cloud: Var,
        trace: &EncodeTrace,
        scramble: bool,
    ) -> EncoderOut {
        self.encode_impl(tape, ps, cloud, Some(trace), scramble)
    }

    fn encode_impl(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        cloud: Var,
        frozen: Option<&EncodeTrace>,
        scramble: bool,
    ) -> EncoderOut {
        let shape = tape.shape(cloud).to_vec();
        assert!(
            shape.len() == 2 && shape[1] == 3,
            "encoder expects [n, 3] cloud, got {shape:?}"
        );
        let n = shape[0];
        assert!(
            n >= self.knn + 1,
            "encoder needs at least k+1 = {} points, got {n}",
            self.knn + 1
        );
        let mut trace = EncodeTrace::default();
        let mut v = tape.reshape(cloud, vec![n, 1, 3]);
        for (li, block) in self.blocks.iter().enumerate() {
            let graph = match frozen {
                Some(f) => f.graphs[li].clone(),
                None => {
                    let values = tape.value(v);
                    let dim = tape.numel(v) / n;
                    knn_indices(values, dim, self.knn)
                }
            };
            let (out, picks) =
                block.forward(tape, ps, v, &graph, frozen.map(|f| f.picks[li].as_slice()), scramble);
            v = out;
            trace.graphs.push(graph);
            trace.picks.push(picks);
        }
        let pooled = self.pool.forward(tape, ps, v, scramble); // [c3, 3]
        let f_raw = self.head_f.forward(tape, ps, pooled, scramble);
        let f = tape.scale(f_raw, super::layers::VN_GAIN);
        let eq_raw = self.head_eq.forward(tape, ps, pooled, scramble);
        let v_eq = tape.scale(eq_raw, super::layers::VN_GAIN);
        let frame_raw = self.head_frame.forward(tape, ps, pooled, scramble);
        let v_frame = tape.scale(frame_raw, super::layers::VN_GAIN);
        let v_frame_t = tape.transpose_last2(v_frame);
        let g = tape.matmul(v_eq, v_frame_t);
        EncoderOut { f, g, trace }
    }
}
