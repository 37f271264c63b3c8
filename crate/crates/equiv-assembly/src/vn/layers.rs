//! Vector-neuron building blocks.
//!
//! A vector feature map is a `[n, C, 3]` tensor: C vector channels per point.
//! Rotating the underlying cloud by R (row convention) maps every channel
//! vector v to vR; each layer here commutes with that action.

use rand::Rng;

use crate::grad::{ParamId, ParamSet, Tape, Var};

/// Fixed non-orthogonal component mixing used by the negative-control debug
/// mode: applying it after a channel mix yields an ordinary (non-equivariant)
/// linear layer over the flattened features.
const SCRAMBLE_MIX: [f32; 9] = [1.0, 0.35, 0.0, 0.0, 1.0, 0.35, 0.2, 0.0, 1.0];

/// Uniform +-1/sqrt(fan_in) init shrinks output variance by 1/3 per linear;
/// with normalization layers out of scope, deep stacks would collapse
/// feature scale. Magnitude-carrying channel mixes (edge-conv outputs,
/// encoder heads) are followed by this compensating scalar gain, which
/// commutes with rotation.
pub const VN_GAIN: f32 = 1.732_050_8; // sqrt(3)

/// Channel-mixing linear layer `out[.., c', :] = sum_c w[c', c] v[.., c, :]`.
#[derive(Clone, Copy)]
pub struct VnLinear {
    pub w: ParamId,
}

impl VnLinear {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> VnLinear {
        VnLinear {
            w: ps.register_uniform(name, vec![c_out, c_in], c_in, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, v: Var, scramble: bool) -> Var {
        let w = tape.param(ps, self.w);
        let mixed = tape.vn_linear(w, v);
        if scramble {
            let s = tape.constant_data(vec![3, 3], SCRAMBLE_MIX.to_vec());
            tape.matmul(mixed, s)
        } else {
            mixed
        }
    }
}

/// Vector-neuron leaky ReLU: per channel, project onto a learned direction
/// and clamp the negative-half component.
///
/// With normalized direction d and s = <v, d>: output v where s >= 0, else
/// v - (1 - slope) * s * d. Zero-norm directions are guarded by adding 1e-8
/// to the norm before dividing.
#[derive(Clone, Copy)]
pub struct VnLeakyRelu {
    pub dir: VnLinear,
    pub slope: f32,
}

impl VnLeakyRelu {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        channels: usize,
        slope: f32,
        rng: &mut R,
    ) -> VnLeakyRelu {
        assert!((0.0..1.0).contains(&slope), "leaky slope must be in [0, 1)");
        VnLeakyRelu {
            dir: VnLinear::init(ps, name, channels, channels, rng),
            slope,
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, v: Var, scramble: bool) -> Var {
        let d_raw = self.dir.forward(tape, ps, v, scramble);
        tape.vn_gate(v, d_raw, self.slope)
    }
}

/// Pooling over the point axis of a `[n, C, 3]` feature map.
pub enum VnPool {
    Mean,
    /// Select, per channel, the point maximizing the inner product with a
    /// learned direction. The argmax index is locally constant, so gradients
    /// flow only through the selected vectors.
    LearnedMax(VnLinear),
}

impl VnPool {
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, v: Var, scramble: bool) -> Var {
        let shape = tape.shape(v).to_vec();
        assert!(
            shape.len() == 3 && shape[0] >= 1,
            "vn_pool expects non-empty [n, C, 3], got {shape:?}"
        );
        match self {
            VnPool::Mean => tape.mean_axis(v, 0),
            VnPool::LearnedMax(dir) => {
                let w = ps.get(dir.w).data();
                let scores = pool_scores(tape.value(v), w, shape[1], scramble);
                let idx = argmax_over_axis(&scores, shape[0], shape[1]);
                tape.select_max_vec(v, idx)
            }
        }
    }
}

/// Scores for the learned-direction max pool, computed off-tape:
/// `s[b, c] = <v[b, c, :], (W v)[b, c, :]>` over blocks of `[C, 3]` features.
/// The scramble debug mode applies its component mix to the directions, so
/// the negative control perturbs selections the same way the tape path does.
fn pool_scores(v: &[f32], w: &[f32], c: usize, scramble: bool) -> Vec<f32> {
    use crate::grad::kernels::{blocks_to_rows, gemm_nn};
    let blocks = v.len() / (c * 3);
    let vt = blocks_to_rows(v, c, 3); // [3B, C]
    let mut wt = vec![0.0f32; c * c];
    for o in 0..c {
        for i in 0..c {
            wt[i * c + o] = w[o * c + i];
        }
    }
    let mut dt = vec![0.0f32; blocks * 3 * c];
    gemm_nn(blocks * 3, c, c, &vt, &wt, &mut dt);
    if scramble {
        // rows of dt hold the x/y/z planes of each block in turn; remix them
        let m = &SCRAMBLE_MIX;
        for b in 0..blocks {
            for co in 0..c {
                let (x, y, z) = (
                    dt[(b * 3) * c + co],
                    dt[(b * 3 + 1) * c + co],
                    dt[(b * 3 + 2) * c + co],
                );
                dt[(b * 3) * c + co] = x * m[0] + y * m[3] + z * m[6];
                dt[(b * 3 + 1) * c + co] = x * m[1] + y * m[4] + z * m[7];
                dt[(b * 3 + 2) * c + co] = x * m[2] + y * m[5] + z * m[8];
            }
        }
    }
    let mut scores = vec![0.0f32; blocks * c];
    for b in 0..blocks {
        let out = &mut scores[b * c..(b + 1) * c];
        for x in 0..3 {
            let vrow = &vt[(b * 3 + x) * c..(b * 3 + x + 1) * c];
            let drow = &dt[(b * 3 + x) * c..(b * 3 + x + 1) * c];
            for ((o, &a), &bb) in out.iter_mut().zip(vrow).zip(drow) {
                *o += a * bb;
            }
        }
    }
    scores
}

/// Per-column argmax of a row-major `[rows, cols]` score table; ties keep the
/// lowest row.
fn argmax_over_axis(scores: &[f32], rows: usize, cols: usize) -> Vec<usize> {
    let mut idx = vec![0usize; cols];
    let mut best = vec![f32::NEG_INFINITY; cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = scores[r * cols + c];
            if v > best[c] {
                best[c] = v;
                idx[c] = r;
            }
        }
    }
    idx
}

/// One dynamic edge-convolution block: gather k neighbors, form edge features
/// (v_j - v_i, v_i), mix + gate them, then max-aggregate over the neighbors
/// along learned directions.
pub struct EdgeConv {
    pub lin: VnLinear,
    pub gate: VnLeakyRelu,
    pub pool_dir: VnLinear,
}

impl EdgeConv {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        slope: f32,
        rng: &mut R,
    ) -> EdgeConv {
        EdgeConv {
            lin: VnLinear::init(ps, &format!("{name}.lin.w"), 2 * c_in, c_out, rng),
            gate: VnLeakyRelu::init(ps, &format!("{name}.gate.w"), c_out, slope, rng),
            pool_dir: VnLinear::init(ps, &format!("{name}.pool.w"), c_out, c_out, rng),
        }
    }

    /// `graph[i]` lists the k neighbors of point i. Returns the output map
    /// plus the per-(point, channel) neighbor indices the max-aggregation
    /// picked; passing those back in as `frozen_picks` pins the selection.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        v: Var,
        graph: &[Vec<usize>],
        frozen_picks: Option<&[usize]>,
        scramble: bool,
    ) -> (Var, Vec<usize>) {
        let shape = tape.shape(v).to_vec();
        assert_eq!(shape.len(), 3, "edge conv expects [n, C, 3], got {shape:?}");
        let (n, c) = (shape[0], shape[1]);
        let k = graph.first().map_or(0, |g| g.len());
        assert!(k >= 1 && k < n, "edge conv needs 1 <= k < n (k={k}, n={n})");

        let mut nbr_idx = Vec::with_capacity(n * k);
        let mut self_idx = Vec::with_capacity(n * k);
        for (i, nbrs) in graph.iter().enumerate() {
            debug_assert_eq!(nbrs.len(), k);
            for &j in nbrs {
                nbr_idx.push(j);
                self_idx.push(i);
            }
        }
        let vj = tape.index_rows(v, nbr_idx);
        let vi = tape.index_rows(v, self_idx);
        let rel = tape.sub(vj, vi);
        let flat_edge = tape.concat(rel, vi, 1); // [n*k, 2C, 3]
        let edge = tape.reshape(flat_edge, vec![n, k, 2 * c, 3]);

        let raw = self.lin.forward(tape, ps, edge, scramble);
        let mixed = tape.scale(raw, super::layers::VN_GAIN);
        let gated = self.gate.forward(tape, ps, mixed, scramble);

        // Neighbor max along learned directions. The scores only pick argmax
        // indices (a locally constant selection that carries no gradient),
        // so they are computed off-tape.
        let c_out = tape.shape(gated)[2];
        let idx = match frozen_picks {
            Some(picks) => {
                assert_eq!(picks.len(), n * c_out, "frozen picks count");
                picks.to_vec()
            }
            None => {
                let w = ps.get(self.pool_dir.w).data();
                let gv = tape.value(gated);
                let scores = pool_scores(gv, w, c_out, scramble);
                let mut idx = vec![0usize; n * c_out];
                for i in 0..n {
                    let block = &scores[i * k * c_out..(i + 1) * k * c_out];
                    let sel = argmax_over_axis(block, k, c_out);
                    idx[i * c_out..(i + 1) * c_out].copy_from_slice(&sel);
                }
                idx
            }
        };
        let out = tape.select_max_vec(gated, idx.clone());
        (out, idx)
    }
}
