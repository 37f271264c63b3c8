//! Minimal reverse-mode automatic differentiation over dense f32 arrays:
//! the substrate every network layer and loss is built on.

pub mod check;
pub mod checkpoint;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::AdamOptimizer;
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Flat kernels shared with network code that computes off-tape values.
pub(crate) mod kernels {
    pub(crate) use super::tape::{blocks_to_rows, gemm_nn};
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut tape = Tape::new();
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = tape.constant(&eye);
        let b = tape.constant(&eye);
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c), eye.data());

        let a = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(&t(&[2, 1], &[5.0, 6.0]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c), &[17.0, 39.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
    }

    #[test]
    #[should_panic(expected = "inner dims disagree")]
    fn matmul_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(vec![2, 3]));
        let b = tape.constant(&Tensor::zeros(vec![2, 3]));
        tape.matmul(a, b);
    }

    #[test]
    fn batched_matmul_broadcasts_rhs() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 1, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.shape(c), &[2, 1, 2]);
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2], &[1.0, 2.0]));
        let b = tape.constant(&t(&[2], &[3.0, 4.0]));
        let s = tape.add(a, b);
        assert_eq!(tape.value(s), &[4.0, 6.0]);
        let a2 = tape.constant(&t(&[2], &[1.0, -2.0]));
        let h = tape.scale(a2, 0.5);
        assert_eq!(tape.value(h), &[0.5, -1.0]);
        let n = tape.neg(a);
        assert_eq!(tape.value(n), &[-1.0, -2.0]);
    }

    #[test]
    #[should_panic(expected = "elementwise shape mismatch")]
    fn elementwise_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(vec![2, 3]));
        let b = tape.constant(&Tensor::zeros(vec![3, 2]));
        tape.add(a, b);
    }

    #[test]
    fn reduce_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[3], &[2.0, 4.0, 6.0]));
        let m = tape.mean_axis(a, 0);
        assert_eq!(tape.value(m), &[4.0]);

        let b = tape.constant(&t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let mx = tape.max_axis(b, 1);
        assert_eq!(tape.value(mx), &[5.0, 3.0]);
    }

    #[test]
    #[should_panic(expected = "axis 2 out of range")]
    fn reduce_invalid_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(vec![2, 2]));
        tape.sum_axis(a, 2);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean_axis(x, 0);
        let root = tape.sum_all(m);
        let grads = tape.backward(root);
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn backward_square_and_unused() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0));
        let unused = tape.leaf(&Tensor::scalar(5.0));
        let sq = tape.mul(x, x);
        let root = tape.sum_all(sq);
        let grads = tape.backward(root);
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
        // never used on the path to root -> no gradient recorded
        assert!(grads.wrt(unused).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut ps = ParamSet::new();
        let used = ps.register("used", Tensor::scalar(2.0));
        let unused = ps.register("unused", Tensor::from_vec(vec![2], vec![1.0, 1.0]));
        let mut tape = Tape::new();
        let u = tape.param(&ps, used);
        let _nu = tape.param(&ps, unused);
        let root = tape.sum_all(u);
        let grads = tape.backward(root);
        assert_eq!(grads.param(unused).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.param(used).unwrap().data(), &[1.0]);
    }

    #[test]
    #[should_panic(expected = "backward root must be scalar")]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![2]));
        tape.backward(x);
    }

    #[test]
    fn shared_subexpression_accumulates_like_duplicated_graph() {
        // root = sum((x + x) * x) with x shared three times, against the same
        // expression built from independent copies of x.
        let xv = t(&[3], &[0.5, -1.25, 2.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(&xv);
        let s = tape.add(x, x);
        let p = tape.mul(s, x);
        let root = tape.sum_all(p);
        let g_shared = tape.backward(root).wrt(x).unwrap().clone();

        let mut tape2 = Tape::new();
        let x1 = tape2.leaf(&xv);
        let x2 = tape2.leaf(&xv);
        let x3 = tape2.leaf(&xv);
        let s = tape2.add(x1, x2);
        let p = tape2.mul(s, x3);
        let root = tape2.sum_all(p);
        let g = tape2.backward(root);
        let mut summed = vec![0.0f32; 3];
        for part in [x1, x2, x3] {
            for (d, &v) in summed.iter_mut().zip(g.wrt(part).unwrap().data()) {
                *d += v;
            }
        }
        for (a, b) in g_shared.data().iter().zip(&summed) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a: Vec<f32> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let run = |data: &[f32]| {
            let mut tape = Tape::new();
            let x = tape.constant(&t(&[2, 3, 4], data));
            let y = tape.tanh(x);
            let z = tape.mean_axis(y, 1);
            let r = tape.sum_all(z);
            tape.value(r)[0]
        };
        assert_eq!(run(&a).to_bits(), run(&a).to_bits());
    }

    /// Randomized finite-difference oracle over every differentiable op,
    /// 20 seeds, rel error <= 1e-3 at h = 1e-3.
    #[test]
    fn gradient_check_all_ops() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ps = ParamSet::new();
            let a = ps.register_uniform("a", vec![4, 5], 5, &mut rng);
            let b = ps.register_uniform("b", vec![5, 3], 5, &mut rng);
            let c = ps.register_uniform("c", vec![4, 3], 3, &mut rng);
            let d = ps.register_uniform("d", vec![3], 3, &mut rng);
            let ids = [a, b, c, d];

            let err = check::param_grad_rel_error(&ps, &ids, 1e-3, &mut |tape, ps| {
                let av = tape.param(ps, a);
                let bv = tape.param(ps, b);
                let cv = tape.param(ps, c);
                let dv = tape.param(ps, d);
                let mm = tape.matmul(av, bv); // [4,3]
                let sum = tape.add(mm, cv);
                let bcast = tape.add(sum, dv); // suffix broadcast
                let th = tape.tanh(bcast);
                let sc = tape.scale(th, 0.7);
                let prod = tape.mul(sc, cv);
                let neg = tape.sub(prod, cv);
                let m = tape.mean_axis(neg, 0);
                tape.sum_all(m)
            });
            assert!(err <= 1e-3, "seed {seed}: rel error {err}");
        }
    }

    #[test]
    fn gradient_check_nonlinear_ops() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut ps = ParamSet::new();
            // keep sqrt inputs away from 0 and acos away from +-1
            let x = ps.register(
                "x",
                Tensor::from_vec(
                    vec![6],
                    (0..6).map(|_| rng.gen_range(0.2..0.8f32)).collect(),
                ),
            );
            let y = ps.register_uniform("y", vec![2, 3], 3, &mut rng);
            let ids = [x, y];
            let err = check::param_grad_rel_error(&ps, &ids, 1e-3, &mut |tape, ps| {
                let xv = tape.param(ps, x);
                let yv = tape.param(ps, y);
                let sq = tape.sqrt(xv);
                let ac = tape.acos_safe(sq);
                let yr = tape.reshape(yv, vec![6]);
                let rl = tape.relu(yr);
                let dv = tape.div(ac, xv);
                let pr = tape.mul(dv, rl);
                let ex = tape.expand_tail(pr, 2);
                let red = tape.sum_axis(ex, 1);
                let m = tape.max_axis(red, 0);
                let s = tape.sum_all(pr);
                let both = tape.add(m, s);
                tape.sum_all(both)
            });
            assert!(err <= 1e-3, "seed {seed}: rel error {err}");
        }
    }

    #[test]
    fn gradient_check_structural_ops() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut ps = ParamSet::new();
            let v = ps.register_uniform("v", vec![4, 3, 3], 3, &mut rng);
            let w = ps.register_uniform("w", vec![5, 3], 3, &mut rng);
            let ids = [v, w];
            let err = check::param_grad_rel_error(&ps, &ids, 1e-3, &mut |tape, ps| {
                let vv = tape.param(ps, v);
                let wv = tape.param(ps, w);
                let vn = tape.vn_linear(wv, vv); // [4, 5, 3]
                let tr = tape.transpose_last2(vn);
                let cat = tape.concat(vn, vn, 1); // [4, 10, 3]
                let sl = tape.slice(cat, 1, 2, 3);
                let rows = tape.index_rows(sl, vec![1, 1, 3, 0]);
                let a = tape.slice(rows, 1, 0, 1);
                let b = tape.slice(rows, 1, 1, 1);
                let cr = tape.cross3(a, b);
                let s1 = tape.sum_all(cr);
                let s2 = tape.sum_all(tr);
                let total = tape.add(s1, s2);
                tape.sum_all(total)
            });
            assert!(err <= 1e-3, "seed {seed}: rel error {err}");
        }
    }

    #[test]
    fn gradient_check_chamfer_and_select() {
        // Chamfer is piecewise smooth in the nearest-neighbor assignment;
        // redraw clouds whose argmin margin could flip under the +-h probe.
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let mut checked = 0u32;
        while checked < 20 {
            let pd: Vec<f32> = (0..18).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            let qd: Vec<f32> = (0..15).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            if argmin_margin(&pd, &qd) < 2e-2 || argmin_margin(&qd, &pd) < 2e-2 {
                continue;
            }
            let mut ps = ParamSet::new();
            let p = ps.register("p", t(&[6, 3], &pd));
            let q = ps.register("q", t(&[5, 3], &qd));
            let ids = [p, q];
            let err = check::param_grad_rel_error(&ps, &ids, 1e-3, &mut |tape, ps| {
                let pv = tape.param(ps, p);
                let qv = tape.param(ps, q);
                tape.chamfer(pv, qv)
            });
            assert!(err <= 1e-3, "draw {checked}: chamfer rel error {err}");
            checked += 1;
        }
    }

    /// Smallest gap between best and second-best squared distance from any
    /// row of `p` to rows of `q`.
    fn argmin_margin(p: &[f32], q: &[f32]) -> f32 {
        let mut margin = f32::INFINITY;
        for a in p.chunks_exact(3) {
            let mut best = f32::INFINITY;
            let mut second = f32::INFINITY;
            for b in q.chunks_exact(3) {
                let d = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                if d < best {
                    second = best;
                    best = d;
                } else if d < second {
                    second = d;
                }
            }
            margin = margin.min(second - best);
        }
        margin
    }

    #[test]
    fn vn_gate_matches_composed_primitives() {
        // The fused gate must agree, in value and gradient, with the same
        // computation spelled out of elementwise primitives.
        let slope = 0.2f32;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let shape = vec![5, 4, 3];
            let vd: Vec<f32> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dd: Vec<f32> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let composed = |tape: &mut Tape, v: Var, d: Var| -> Var {
                let d_sq = tape.mul(d, d);
                let n_sq = tape.sum_axis(d_sq, 2);
                let n = tape.sqrt(n_sq);
                let eps = tape.constant_data(vec![1], vec![1e-8]);
                let n_eps = tape.add(n, eps);
                let den = tape.expand_tail(n_eps, 3);
                let d_hat = tape.div(d, den);
                let vdot = tape.mul(v, d_hat);
                let s = tape.sum_axis(vdot, 2);
                let s_pos = tape.relu(s);
                let s_neg = tape.sub(s, s_pos);
                let s3 = tape.expand_tail(s_neg, 3);
                let coef = tape.scale(s3, 1.0 - slope);
                let corr = tape.mul(coef, d_hat);
                tape.sub(v, corr)
            };

            let mut tape = Tape::new();
            let v1 = tape.leaf(&t(&shape, &vd));
            let d1 = tape.leaf(&t(&shape, &dd));
            let fused = tape.vn_gate(v1, d1, slope);
            let v2 = tape.leaf(&t(&shape, &vd));
            let d2 = tape.leaf(&t(&shape, &dd));
            let spelled = composed(&mut tape, v2, d2);
            for (a, b) in tape.value(fused).iter().zip(tape.value(spelled)) {
                assert!((a - b).abs() <= 1e-6, "seed {seed}: value {a} vs {b}");
            }

            let fsum = tape.sum_all(fused);
            let fsq = tape.mul(fsum, fsum);
            let g_fused = tape.backward(fsq);
            let ssum = tape.sum_all(spelled);
            let ssq = tape.mul(ssum, ssum);
            let g_spelled = tape.backward(ssq);
            for (leaf_f, leaf_s) in [(v1, v2), (d1, d2)] {
                let gf = g_fused.wrt(leaf_f).unwrap();
                let gs = g_spelled.wrt(leaf_s).unwrap();
                let err = check::rel_error(gs.data(), gf.data());
                assert!(err <= 1e-4, "seed {seed}: gradient mismatch {err}");
            }
        }
    }

    #[test]
    fn vn_gate_gradient_matches_finite_differences() {
        // the gate is piecewise smooth in sign(<v, dh>); skip draws whose
        // inner product sits within reach of the +-h probe
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let mut checked = 0u32;
        while checked < 20 {
            let vd: Vec<f32> = (0..54).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            let dd: Vec<f32> = (0..54).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            let near_kink = vd.chunks_exact(3).zip(dd.chunks_exact(3)).any(|(v3, d3)| {
                let n = (d3[0] * d3[0] + d3[1] * d3[1] + d3[2] * d3[2]).sqrt();
                let s = (v3[0] * d3[0] + v3[1] * d3[1] + v3[2] * d3[2]) / (n + 1e-8);
                n < 0.2 || s.abs() < 0.05
            });
            if near_kink {
                continue;
            }
            let mut ps = ParamSet::new();
            let v = ps.register("v", t(&[6, 3, 3], &vd));
            let d = ps.register("d", t(&[6, 3, 3], &dd));
            let err = check::param_grad_rel_error(&ps, &[v, d], 1e-3, &mut |tape, ps| {
                let vv = tape.param(ps, v);
                let dv = tape.param(ps, d);
                let out = tape.vn_gate(vv, dv, 0.2);
                let s = tape.sum_all(out);
                tape.mul(s, s)
            });
            assert!(err <= 1e-3, "draw {checked}: rel error {err}");
            checked += 1;
        }
    }

    #[test]
    fn select_max_vec_routes_gradient_to_argmax_only() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(
            &[2, 1, 3],
            &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0], // two candidate vectors, one channel
        ));
        // select candidate 1 for the single channel
        let y = tape.select_max_vec(x, vec![1]);
        assert_eq!(tape.shape(y), &[1, 3]);
        assert_eq!(tape.value(y), &[0.0, 2.0, 0.0]);
        let root = tape.sum_all(y);
        let grads = tape.backward(root);
        assert_eq!(
            grads.wrt(x).unwrap().data(),
            &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn max_pool_backward_routes_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let m = tape.max_axis(x, 1);
        let root = tape.sum_all(m);
        let grads = tape.backward(root);
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
