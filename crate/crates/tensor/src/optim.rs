//! Adam.

use std::collections::HashMap;

use crate::graph::Gradients;
use crate::param::{Param, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub steps: u64,
}

/// Adam with per-parameter step counts. Parameters without a gradient in a
/// given step are left untouched, moments included.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: HashMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>, grads: &Gradients) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for p in params {
            let Some(g) = grads.param(p) else { continue };
            assert_eq!(g.shape(), p.value.shape(), "gradient shape mismatch");
            let st = self.state.entry(p.id()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
                steps: 0,
            });
            st.steps += 1;
            let bc1 = 1.0 - beta1.powi(st.steps as i32);
            let bc2 = 1.0 - beta2.powi(st.steps as i32);
            let step_size = lr / bc1;
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= step_size * *m / ((*v / bc2).sqrt() + eps);
            }
        }
    }

    pub fn moments(&self, p: &Param) -> Option<&Moments> {
        self.state.get(&p.id())
    }

    pub fn set_moments(&mut self, p: &Param, moments: Moments) {
        self.set_moments_by_id(p.id(), moments);
    }

    pub fn set_moments_by_id(&mut self, id: ParamId, moments: Moments) {
        self.state.insert(id, moments);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Param::new(Tensor::new(&[2], vec![1.0, -1.0]).unwrap());
        let mut g = Graph::new();
        let x = g.param(&p);
        let sq = g.square(x);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step([&mut p], &grads);
        assert!((p.value.data()[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((p.value.data()[1] - (-1.0 + 1e-3)).abs() < 1e-6);
        assert_eq!(adam.moments(&p).unwrap().steps, 1);
    }

    #[test]
    fn params_without_gradient_are_untouched() {
        let mut used = Param::new(Tensor::scalar(2.0));
        let mut unused = Param::new(Tensor::scalar(3.0));
        let mut g = Graph::new();
        let x = g.param(&used);
        let loss = g.square(x);
        let grads = g.backward(loss);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step([&mut used, &mut unused], &grads);
        assert_eq!(unused.value.item(), 3.0);
        assert!(adam.moments(&unused).is_none());
    }
}
