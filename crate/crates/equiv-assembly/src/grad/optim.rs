//! Adam with bias correction.

use std::collections::HashSet;

use super::params::{ParamId, ParamSet};
use super::tape::Gradients;
use super::tensor::Tensor;

/// Adam state: hyperparameters plus first/second moments per owned parameter.
pub struct AdamOptimizer {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Parameters this optimizer owns; others are left untouched.
    owned: Vec<ParamId>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    pub step_count: u64,
}

impl AdamOptimizer {
    /// Paper default learning rate.
    pub const DEFAULT_LR: f32 = 1e-4;

    pub fn new(params: &ParamSet, owned: Vec<ParamId>, learning_rate: f32) -> AdamOptimizer {
        let first = owned
            .iter()
            .map(|&id| Tensor::zeros(params.get(id).shape().to_vec()))
            .collect();
        let second = owned
            .iter()
            .map(|&id| Tensor::zeros(params.get(id).shape().to_vec()))
            .collect();
        AdamOptimizer {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            owned,
            first_moment: first,
            second_moment: second,
            step_count: 0,
        }
    }

    pub fn for_all(params: &ParamSet, learning_rate: f32) -> AdamOptimizer {
        AdamOptimizer::new(params, params.ids().collect(), learning_rate)
    }

    /// Own every parameter whose name satisfies the filter.
    pub fn for_matching(
        params: &ParamSet,
        learning_rate: f32,
        filter: impl Fn(&str) -> bool,
    ) -> AdamOptimizer {
        let owned = params.ids().filter(|&id| filter(params.name(id))).collect();
        AdamOptimizer::new(params, owned, learning_rate)
    }

    pub fn owned(&self) -> &[ParamId] {
        &self.owned
    }

    /// One Adam step over the owned parameters. Parameters with no gradient
    /// in `grads` are treated as zero-gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step_count += 1;
        let t = self.step_count as f32;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (slot, &id) in self.owned.iter().enumerate() {
            let p = params.get_mut(id);
            let m = self.first_moment[slot].data_mut();
            let v = self.second_moment[slot].data_mut();
            let zero;
            let g: &[f32] = match grads.param(id) {
                Some(gt) => {
                    assert_eq!(
                        gt.shape(),
                        p.shape(),
                        "gradient shape mismatch for parameter {id:?}"
                    );
                    gt.data()
                }
                None => {
                    zero = vec![0.0f32; p.numel()];
                    &zero
                }
            };
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }

    /// Moments flattened as named tensors for checkpointing, prefixed so they
    /// cannot collide with model parameters.
    pub fn state_entries(&self, params: &ParamSet, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push((
            format!("{prefix}.step"),
            Tensor::from_vec(vec![1], vec![self.step_count as f32]),
        ));
        for (slot, &id) in self.owned.iter().enumerate() {
            let name = params.name(id);
            out.push((format!("{prefix}.m.{name}"), self.first_moment[slot].clone()));
            out.push((format!("{prefix}.v.{name}"), self.second_moment[slot].clone()));
        }
        out
    }

    /// Restore moments and step count from checkpoint entries.
    pub fn load_state(
        &mut self,
        params: &ParamSet,
        prefix: &str,
        entries: &[(String, Tensor)],
    ) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (name, tensor) in entries {
            let Some(rest) = name.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) else {
                continue;
            };
            if rest == "step" {
                self.step_count = tensor.data()[0] as u64;
                seen.insert("step".to_string());
            } else if let Some(pname) = rest.strip_prefix("m.") {
                let slot = self.slot_of(params, pname)?;
                check_shape(pname, &self.first_moment[slot], tensor)?;
                self.first_moment[slot] = tensor.clone();
                seen.insert(format!("m.{pname}"));
            } else if let Some(pname) = rest.strip_prefix("v.") {
                let slot = self.slot_of(params, pname)?;
                check_shape(pname, &self.second_moment[slot], tensor)?;
                self.second_moment[slot] = tensor.clone();
                seen.insert(format!("v.{pname}"));
            }
        }
        let expected = 1 + 2 * self.owned.len();
        if seen.len() != expected {
            return Err(format!(
                "optimizer state {prefix} incomplete: found {} of {expected} entries",
                seen.len()
            ));
        }
        Ok(())
    }

    fn slot_of(&self, params: &ParamSet, name: &str) -> Result<usize, String> {
        let id = params
            .find(name)
            .ok_or_else(|| format!("optimizer state references unknown parameter {name}"))?;
        self.owned
            .iter()
            .position(|&o| o == id)
            .ok_or_else(|| format!("optimizer state references unowned parameter {name}"))
    }
}

fn check_shape(name: &str, expected: &Tensor, found: &Tensor) -> Result<(), String> {
    if expected.shape() != found.shape() {
        return Err(format!(
            "moment shape mismatch for {name}: expected {:?}, found {:?}",
            expected.shape(),
            found.shape()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Tape;

    fn single_param() -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.register("p", Tensor::from_vec(vec![1], vec![0.0]));
        (ps, id)
    }

    #[test]
    fn first_step_matches_closed_form() {
        // From zero moments with g = 1: m_hat = v_hat = 1, so the update is
        // -lr / (1 + eps).
        let (mut ps, id) = single_param();
        let mut opt = AdamOptimizer::for_all(&ps, 1e-4);
        let mut tape = Tape::new();
        let p = tape.param(&ps, id);
        let root = tape.sum_all(p); // d root / d p = 1
        let grads = tape.backward(root);
        opt.step(&mut ps, &grads);
        let expected = -1e-4f32 / (1.0 + 1e-8);
        let got = ps.get(id).data()[0];
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let (mut ps, id) = single_param();
        let mut opt = AdamOptimizer::for_all(&ps, 1e-4);
        let mut tape = Tape::new();
        let _p = tape.param(&ps, id);
        let c = tape.constant(&Tensor::scalar(3.0));
        let root = tape.sum_all(c);
        let grads = tape.backward(root); // p unused -> zero grad
        opt.step(&mut ps, &grads);
        assert_eq!(ps.get(id).data()[0], 0.0);
    }

    #[test]
    fn state_round_trip() {
        let (mut ps, id) = single_param();
        let mut opt = AdamOptimizer::for_all(&ps, 1e-3);
        let mut tape = Tape::new();
        let p = tape.param(&ps, id);
        let root = tape.sum_all(p);
        let grads = tape.backward(root);
        opt.step(&mut ps, &grads);

        let entries = opt.state_entries(&ps, "adam_g");
        let mut fresh = AdamOptimizer::for_all(&ps, 1e-3);
        fresh.load_state(&ps, "adam_g", &entries).unwrap();
        assert_eq!(fresh.step_count, 1);
        assert_eq!(
            fresh.first_moment[0].data(),
            opt.first_moment[0].data()
        );
    }
}
