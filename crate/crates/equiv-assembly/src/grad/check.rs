//! Central finite-difference probes used to verify tape gradients.
//!
//! These evaluate the forward function only, independent of the backward
//! pass they are checking.

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};

/// Relative disagreement between the tape gradient of `f` and central finite
/// differences over every scalar of every listed parameter:
/// `|g_fd - g_ad| / max(|g_fd|, |g_ad|, floor)` measured over flattened
/// gradient vectors in the 2-norm.
pub fn param_grad_rel_error(
    params: &ParamSet,
    ids: &[ParamId],
    h: f32,
    f: &mut dyn FnMut(&mut Tape, &ParamSet) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let root = f(&mut tape, params);
    let grads = tape.backward(root);

    let mut ad = Vec::new();
    let mut fd = Vec::new();
    let mut work = params.clone();
    for &id in ids {
        let grad = grads
            .param(id)
            .unwrap_or_else(|| panic!("parameter {} not on tape", params.name(id)))
            .clone();
        ad.extend_from_slice(grad.data());
        for i in 0..params.get(id).numel() {
            let base = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = base + h;
            let up = eval_scalar(&work, f);
            work.get_mut(id).data_mut()[i] = base - h;
            let down = eval_scalar(&work, f);
            work.get_mut(id).data_mut()[i] = base;
            fd.push(((up - down) / (2.0 * h as f64)) as f32);
        }
    }
    rel_error(&fd, &ad)
}

fn eval_scalar(params: &ParamSet, f: &mut dyn FnMut(&mut Tape, &ParamSet) -> Var) -> f64 {
    let mut tape = Tape::new();
    let root = f(&mut tape, params);
    tape.value(root)[0] as f64
}

/// Norm-relative error between two flat gradient vectors.
pub fn rel_error(expected: &[f32], got: &[f32]) -> f64 {
    assert_eq!(expected.len(), got.len());
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&e, &g) in expected.iter().zip(got) {
        diff += ((e - g) as f64).powi(2);
        na += (e as f64).powi(2);
        nb += (g as f64).powi(2);
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-8)
}
