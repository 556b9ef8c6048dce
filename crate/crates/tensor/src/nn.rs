//! Parameterized layers.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::param::{scoped, scoped_mut, Module, Param};
use crate::tensor::Tensor;

/// Uniform `(-1/√fan_in, 1/√fan_in)` initialization.
fn fan_in_uniform(rng: &mut dyn rand::RngCore, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_parts(shape, data)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut dyn rand::RngCore) -> Self {
        Self {
            weight: Param::new(fan_in_uniform(rng, &[out_dim, in_dim], in_dim)),
            bias: Param::new(fan_in_uniform(rng, &[out_dim], in_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.linear(x, w, Some(b))
    }
}

impl Module for Linear {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// 2-d convolution without padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut dyn rand::RngCore,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        Self {
            weight: Param::new(fan_in_uniform(
                rng,
                &[out_channels, in_channels, kernel.0, kernel.1],
                fan_in,
            )),
            bias: Param::new(fan_in_uniform(rng, &[out_channels], fan_in)),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.value.dim(2), self.weight.value.dim(3))
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        ((h - kh) / self.stride.0 + 1, (w - kw) / self.stride.1 + 1)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv2d(x, w, Some(b), self.stride)
    }
}

impl Module for Conv2d {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[dim], 1.0)),
            beta: Param::new(Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
        ]
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(dims: &[usize], rng: &mut dyn rand::RngCore) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::new(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i < last {
                h = g.relu(h);
            }
        }
        h
    }
}

impl Module for Mlp {
    fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| scoped(&i.to_string(), l.named_params()))
            .collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| scoped_mut(&i.to_string(), l.named_params_mut()))
            .collect()
    }
}
