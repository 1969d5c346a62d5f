use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation over a fixed group of parameters. Parameters
/// outside the group are never touched, whatever the gradients contain.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    group: Vec<ParamId>,
    step: u64,
    first: BTreeMap<ParamId, Tensor<T>>,
    second: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, group: &[ParamId]) -> Self {
        let mut group = group.to_vec();
        group.sort();
        group.dedup();
        Adam {
            config,
            group,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn group(&self) -> &[ParamId] {
        &self.group
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next steps.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bias1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bias2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.eps);
        for &id in &self.group {
            let Some(g) = grads.param(id) else { continue };
            let shape = g.shape();
            let m = self.first.entry(id).or_insert_with(|| Tensor::zeros(shape));
            let v = self.second.entry(id).or_insert_with(|| Tensor::zeros(shape));
            let p = store.get_mut(id);
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mh = *mv / bias1;
                let vh = *vv / bias2;
                *pv -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    /// Moment tensors for checkpointing, as `(param, first, second)`.
    pub fn state(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>, &Tensor<T>)> {
        self.first
            .iter()
            .filter_map(|(id, m)| self.second.get(id).map(|v| (*id, m, v)))
    }

    pub fn restore(&mut self, step: u64, state: Vec<(ParamId, Tensor<T>, Tensor<T>)>) {
        self.step = step;
        self.first.clear();
        self.second.clear();
        for (id, m, v) in state {
            self.first.insert(id, m);
            self.second.insert(id, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected first step is lr * g/|g|
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::full([1, 1, 1, 2], 1.0));
        let b = store.add("b", Tensor::full([1, 1, 1, 2], 1.0));
        let grads = {
            let mut tape = Tape::new(&store);
            let (av, bv) = (tape.param(a), tape.param(b));
            let s = tape.add(av, bv);
            let l = tape.mean_square(s);
            tape.backward(l)
        };
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &[a]);
        opt.step(&mut store, &grads);
        for v in store.get(a).data() {
            assert!((v - 0.9).abs() < 1e-6);
        }
        assert_eq!(store.get(b).data(), &[1.0, 1.0]);
    }
}
