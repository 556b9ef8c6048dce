//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of a
//! scalar with respect to every node that requires one. Parameters enter the
//! tape through [`Graph::param`]; whether they require gradients is decided by
//! the graph mode, which is how callers detach whole sub-networks.

use std::collections::HashMap;

use crate::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::linalg::{gemm, MatRef};
use crate::param::{Param, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Fractional sampling coordinates `(row, col)` for every output location of a
/// `[B, C, H, W]` map, shared across channels. Coordinates are clamped to the
/// map before interpolation.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub coords: Vec<(f32, f32)>,
}

struct Taps {
    index: Vec<[u32; 4]>,
    weight: Vec<[f32; 4]>,
}

impl Taps {
    fn new(grid: &SampleGrid) -> Self {
        let (h, w) = (grid.height, grid.width);
        let mut index = Vec::with_capacity(grid.coords.len());
        let mut weight = Vec::with_capacity(grid.coords.len());
        for &(r, c) in &grid.coords {
            let r = r.clamp(0.0, (h - 1) as f32);
            let c = c.clamp(0.0, (w - 1) as f32);
            let r0 = (r.floor() as usize).min(h - 1);
            let c0 = (c.floor() as usize).min(w - 1);
            let r1 = (r0 + 1).min(h - 1);
            let c1 = (c0 + 1).min(w - 1);
            let fr = r - r0 as f32;
            let fc = c - c0 as f32;
            index.push([
                (r0 * w + c0) as u32,
                (r0 * w + c1) as u32,
                (r1 * w + c0) as u32,
                (r1 * w + c1) as u32,
            ]);
            weight.push([
                (1.0 - fr) * (1.0 - fc),
                (1.0 - fr) * fc,
                fr * (1.0 - fc),
                fr * fc,
            ]);
        }
        Self { index, weight }
    }
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f32),
    Scale(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Minimum(Var, Var),
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    SumLast(Var),
    SumAll(Var),
    MeanAll(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    TransposeLast2(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Bilinear {
        x: Var,
        taps: Taps,
        channels: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
        reduction: Reduction,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, p: &Param) -> Option<&Tensor> {
        self.params
            .get(&p.id())
            .and_then(|v| self.grads[v.0].as_ref())
    }

    pub fn by_id(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.grads[v.0].as_ref())
    }

    /// Ids of every parameter that received a gradient.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self
            .params
            .iter()
            .filter(|(_, v)| self.grads[v.0].is_some())
            .map(|(id, _)| *id)
            .collect();
        ids.sort();
        ids
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    params_frozen: bool,
    param_vars: HashMap<(ParamId, bool), Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            params_frozen: false,
            param_vars: HashMap::new(),
        }
    }

    /// A graph that never tracks gradients.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Runs `f` with parameters entering the tape as constants. Gradients
    /// still flow through frozen sub-networks to their tracked inputs.
    pub fn frozen<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        let previous = self.params_frozen;
        self.params_frozen = true;
        let out = f(self);
        self.params_frozen = previous;
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, p: &Param) -> Var {
        let key = (p.id(), self.params_frozen);
        if let Some(v) = self.param_vars.get(&key) {
            return *v;
        }
        let requires_grad = self.grad_enabled && !self.params_frozen;
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Leaf,
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(key, v);
        v
    }

    /// `x · wᵀ + b` over the last dimension of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (out_dim, in_dim) = (wv.dim(0), wv.dim(1));
        assert_eq!(
            xv.last_dim(),
            in_dim,
            "linear: input width {} != {}",
            xv.last_dim(),
            in_dim
        );
        let rows = xv.rows();
        let mut y = vec![0.0f32; rows * out_dim];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(out_dim) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            MatRef::row_major(xv.data(), rows, in_dim),
            MatRef::row_major(wv.data(), out_dim, in_dim).t(),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut y,
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            Tensor::from_parts(&shape, y),
            Op::Linear { x, w, b },
            &inputs,
        )
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize)) -> Var {
        let geom = ConvGeometry::new(self.value(x).shape(), self.value(w).shape(), stride)
            .unwrap_or_else(|e| panic!("{e}"));
        let y = conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            Tensor::from_parts(&geom.out_shape(), y),
            Op::Conv2d { x, w, b, geom },
            &inputs,
        )
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::from_parts(av.shape(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let av = self.value(a);
        Tensor::from_parts(av.shape(), av.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, f32::min);
        self.push(v, Op::Minimum(a, b), &[a, b])
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let v = self.map(a, |x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        let v = self.map(a, |x| x * s);
        self.push(v, Op::MulScalar(a, s), &[a])
    }

    /// `a * s` where `s` holds a single element.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(
            self.value(s).numel(),
            1,
            "scale: factor must have one element"
        );
        let k = self.value(s).data()[0];
        let v = self.map(a, |x| x * k);
        self.push(v, Op::Scale(a, s), &[a, s])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f32::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f32::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, f32::ln);
        self.push(v, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    /// `ln(1 + eˣ)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.map(a, softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let v = self.map(a, |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp { x: a, lo, hi }, &[a])
    }

    /// Sums over the last dimension, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = av.last_dim();
        let data: Vec<f32> = av.data().chunks(d).map(|r| r.iter().sum()).collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::from_parts(&shape, data), Op::SumLast(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f32>() / av.numel() as f32;
        self.push(Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
        for p in parts {
            assert_eq!(
                self.value(*p).rows(),
                rows,
                "concat_last: leading dims differ"
            );
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0f32; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for r in 0..rows {
                data[r * total + offset..][..*w].copy_from_slice(&src[r * w..][..*w]);
            }
            offset += w;
        }
        let mut shape = self.value(parts[0]).shape().to_vec();
        *shape.last_mut().unwrap() = total;
        self.push(
            Tensor::from_parts(&shape, data),
            Op::Concat(parts.to_vec()),
            parts,
        )
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let d = av.last_dim();
        assert!(start + len <= d, "slice_last out of range");
        let data: Vec<f32> = av
            .data()
            .chunks(d)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(
            Tensor::from_parts(&shape, data),
            Op::Slice { x: a, start, len },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .clone()
            .reshape(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Swaps the last two dimensions.
    pub fn transpose_last2(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let nd = av.shape().len();
        assert!(nd >= 2, "transpose_last2 needs 2+ dims");
        let (r, c) = (av.shape()[nd - 2], av.shape()[nd - 1]);
        let mut data = vec![0.0f32; av.numel()];
        for (blk, src) in av.data().chunks(r * c).enumerate() {
            let dst = &mut data[blk * r * c..][..r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = av.shape().to_vec();
        shape.swap(nd - 2, nd - 1);
        self.push(
            Tensor::from_parts(&shape, data),
            Op::TransposeLast2(a),
            &[a],
        )
    }

    /// Normalizes the last dimension, then applies the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert_eq!(g.len(), d);
        let mut xhat = vec![0.0f32; xv.numel()];
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut y = vec![0.0f32; xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for k in 0..d {
                let h = (row[k] - mean) * rs;
                xhat[r * d + k] = h;
                y[r * d + k] = h * g[k] + b[k];
            }
        }
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::from_parts(&shape, y),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Bilinear resampling of each channel of a `[B, C, H, W]` map at the
    /// grid's coordinates (edge-clamped). Output has the input's shape.
    pub fn bilinear_sample(&mut self, x: Var, grid: &SampleGrid) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        assert_eq!(s.len(), 4, "bilinear_sample expects NCHW");
        let (bsz, ch, h, w) = (s[0], s[1], s[2], s[3]);
        assert_eq!(
            (grid.batch, grid.height, grid.width),
            (bsz, h, w),
            "sample grid shape mismatch"
        );
        assert_eq!(grid.coords.len(), bsz * h * w);
        let taps = Taps::new(grid);
        let plane = h * w;
        let mut y = vec![0.0f32; xv.numel()];
        for b in 0..bsz {
            let tap_idx = &taps.index[b * plane..][..plane];
            let tap_w = &taps.weight[b * plane..][..plane];
            for c in 0..ch {
                let src = &xv.data()[(b * ch + c) * plane..][..plane];
                let dst = &mut y[(b * ch + c) * plane..][..plane];
                for p in 0..plane {
                    let [i0, i1, i2, i3] = tap_idx[p];
                    let [w0, w1, w2, w3] = tap_w[p];
                    dst[p] = w0 * src[i0 as usize]
                        + w1 * src[i1 as usize]
                        + w2 * src[i2 as usize]
                        + w3 * src[i3 as usize];
                }
            }
        }
        let shape = s.to_vec();
        self.push(
            Tensor::from_parts(&shape, y),
            Op::Bilinear {
                x,
                taps,
                channels: ch,
            },
            &[x],
        )
    }

    /// Softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], reduction: Reduction) -> Var {
        let lv = self.value(logits);
        let c = lv.last_dim();
        assert_eq!(lv.rows(), labels.len(), "cross_entropy: one label per row");
        let mut probs = vec![0.0f32; lv.numel()];
        let mut total = 0.0f64;
        for (r, row) in lv.data().chunks(c).enumerate() {
            assert!(
                labels[r] < c,
                "label {} out of range for {} classes",
                labels[r],
                c
            );
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = row.iter().map(|v| ((v - m) as f64).exp()).sum();
            let lse = m as f64 + z.ln();
            for k in 0..c {
                probs[r * c + k] = ((row[k] as f64 - lse).exp()) as f32;
            }
            total += lse - row[labels[r]] as f64;
        }
        if reduction == Reduction::Mean {
            total /= labels.len().max(1) as f64;
        }
        self.push(
            Tensor::scalar(total as f32),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                reduction,
            },
            &[logits],
        )
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            let rv = &self.nodes[root.0].value;
            grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        }
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let params = self
            .param_vars
            .iter()
            .filter(|((_, frozen), _)| !frozen)
            .map(|((id, _), v)| (*id, *v))
            .collect();
        Gradients { grads, params }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn acc_map(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        gy: &Tensor,
        f: impl Fn(usize, f32) -> f32,
    ) {
        if !self.needs(v) {
            return;
        }
        let data = gy
            .data()
            .iter()
            .enumerate()
            .map(|(k, g)| f(k, *g))
            .collect();
        self.acc(grads, v, Tensor::from_parts(self.value(v).shape(), data));
    }

    fn backprop_node(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (x, w) = (*x, *w);
                let xv = self.value(x);
                let wv = self.value(w);
                let (out_dim, in_dim) = (wv.dim(0), wv.dim(1));
                let rows = xv.rows();
                let gym = MatRef::row_major(gy.data(), rows, out_dim);
                if self.needs(x) {
                    let mut dx = vec![0.0f32; rows * in_dim];
                    gemm(
                        gym,
                        MatRef::row_major(wv.data(), out_dim, in_dim),
                        0.0,
                        &mut dx,
                    );
                    self.acc(grads, x, Tensor::from_parts(xv.shape(), dx));
                }
                if self.needs(w) {
                    let mut dw = vec![0.0f32; out_dim * in_dim];
                    gemm(
                        gym.t(),
                        MatRef::row_major(xv.data(), rows, in_dim),
                        0.0,
                        &mut dw,
                    );
                    self.acc(grads, w, Tensor::from_parts(wv.shape(), dw));
                }
                if let Some(b) = *b {
                    if self.needs(b) {
                        let mut db = vec![0.0f32; out_dim];
                        for row in gy.data().chunks(out_dim) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        self.acc(grads, b, Tensor::from_parts(&[out_dim], db));
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_b = b.is_some_and(|b| self.needs(b));
                let cg = conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy.data(),
                    (self.needs(*x), self.needs(*w), need_b),
                );
                if let Some(dx) = cg.dx {
                    self.acc(grads, *x, Tensor::from_parts(self.value(*x).shape(), dx));
                }
                if let Some(dw) = cg.dw {
                    self.acc(grads, *w, Tensor::from_parts(self.value(*w).shape(), dw));
                }
                if let (Some(db), Some(b)) = (cg.db, b) {
                    self.acc(grads, *b, Tensor::from_parts(self.value(*b).shape(), db));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc_map(grads, *b, gy, |_, g| -g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, gy, |k, g| g * bv[k]);
                self.acc_map(grads, *b, gy, |k, g| g * av[k]);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, gy, |k, g| if av[k] <= bv[k] { g } else { 0.0 });
                self.acc_map(grads, *b, gy, |k, g| if av[k] <= bv[k] { 0.0 } else { g });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, Tensor::from_parts(&shape, gy.data().to_vec()));
            }
            Op::MulScalar(a, s) => self.acc_map(grads, *a, gy, |_, g| g * s),
            Op::Scale(a, s) => {
                let k = self.value(*s).data()[0];
                self.acc_map(grads, *a, gy, |_, g| g * k);
                let av = self.value(*a).data();
                let ds: f32 = gy.data().iter().zip(av).map(|(g, x)| g * x).sum();
                let shape = self.value(*s).shape().to_vec();
                self.acc(grads, *s, Tensor::from_parts(&shape, vec![ds]));
            }
            Op::Relu(a) => self.acc_map(grads, *a, gy, |k, g| if y[k] > 0.0 { g } else { 0.0 }),
            Op::Tanh(a) => self.acc_map(grads, *a, gy, |k, g| g * (1.0 - y[k] * y[k])),
            Op::Exp(a) => self.acc_map(grads, *a, gy, |k, g| g * y[k]),
            Op::Log(a) => {
                let av = self.value(*a).data();
                self.acc_map(grads, *a, gy, |k, g| g / av[k]);
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                self.acc_map(grads, *a, gy, |k, g| 2.0 * g * av[k]);
            }
            Op::Softplus(a) => {
                let av = self.value(*a).data();
                self.acc_map(grads, *a, gy, |k, g| g * sigmoid(av[k]));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, gy, |k, g| {
                    if xv[k] >= *lo && xv[k] <= *hi {
                        g
                    } else {
                        0.0
                    }
                });
            }
            Op::SumLast(a) => {
                let d = self.value(*a).last_dim();
                self.acc_map(grads, *a, &expand_rows(gy, self.value(*a), d), |_, g| g);
            }
            Op::SumAll(a) => {
                let g = gy.item();
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, Tensor::full(&shape, g));
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let g = gy.item() / av.numel() as f32;
                self.acc(grads, *a, Tensor::full(av.shape(), g));
            }
            Op::Concat(parts) => {
                let total = gy.last_dim();
                let rows = gy.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).last_dim();
                    if self.needs(*p) {
                        let mut d = vec![0.0f32; rows * w];
                        for r in 0..rows {
                            d[r * w..][..w].copy_from_slice(&gy.data()[r * total + offset..][..w]);
                        }
                        self.acc(grads, *p, Tensor::from_parts(self.value(*p).shape(), d));
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start, len } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let d = xv.last_dim();
                    let mut dx = vec![0.0f32; xv.numel()];
                    for (r, row) in gy.data().chunks(*len).enumerate() {
                        dx[r * d + start..][..*len].copy_from_slice(row);
                    }
                    self.acc(grads, *x, Tensor::from_parts(xv.shape(), dx));
                }
            }
            Op::TransposeLast2(a) => {
                if self.needs(*a) {
                    let av = self.value(*a);
                    let nd = av.shape().len();
                    let (r, c) = (av.shape()[nd - 2], av.shape()[nd - 1]);
                    let mut d = vec![0.0f32; av.numel()];
                    for (blk, src) in gy.data().chunks(r * c).enumerate() {
                        let dst = &mut d[blk * r * c..][..r * c];
                        for j in 0..c {
                            for i in 0..r {
                                dst[i * c + j] = src[j * r + i];
                            }
                        }
                    }
                    self.acc(grads, *a, Tensor::from_parts(av.shape(), d));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*x).last_dim();
                let g = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![0.0f32; d];
                    let mut db = vec![0.0f32; d];
                    for (r, row) in gy.data().chunks(d).enumerate() {
                        for k in 0..d {
                            dg[k] += row[k] * xhat[r * d + k];
                            db[k] += row[k];
                        }
                    }
                    self.acc(grads, *gamma, Tensor::from_parts(&[d], dg));
                    self.acc(grads, *beta, Tensor::from_parts(&[d], db));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; gy.numel()];
                    for (r, row) in gy.data().chunks(d).enumerate() {
                        let xh = &xhat[r * d..][..d];
                        let mut sum_dh = 0.0f32;
                        let mut sum_dh_xh = 0.0f32;
                        for k in 0..d {
                            let dh = row[k] * g[k];
                            sum_dh += dh;
                            sum_dh_xh += dh * xh[k];
                        }
                        let scale = rstd[r] / d as f32;
                        for k in 0..d {
                            let dh = row[k] * g[k];
                            dx[r * d + k] = scale * (d as f32 * dh - sum_dh - xh[k] * sum_dh_xh);
                        }
                    }
                    self.acc(grads, *x, Tensor::from_parts(self.value(*x).shape(), dx));
                }
            }
            Op::Bilinear { x, taps, channels } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let s = xv.shape();
                    let plane = s[2] * s[3];
                    let mut dx = vec![0.0f32; xv.numel()];
                    for b in 0..s[0] {
                        let tap_idx = &taps.index[b * plane..][..plane];
                        let tap_w = &taps.weight[b * plane..][..plane];
                        for c in 0..*channels {
                            let src = &gy.data()[(b * channels + c) * plane..][..plane];
                            let dst = &mut dx[(b * channels + c) * plane..][..plane];
                            for p in 0..plane {
                                let g = src[p];
                                for t in 0..4 {
                                    dst[tap_idx[p][t] as usize] += tap_w[p][t] * g;
                                }
                            }
                        }
                    }
                    self.acc(grads, *x, Tensor::from_parts(s, dx));
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                reduction,
            } => {
                let c = self.value(*logits).last_dim();
                let mut scale = gy.item();
                if *reduction == Reduction::Mean {
                    scale /= labels.len().max(1) as f32;
                }
                let mut d = probs.clone();
                for (r, l) in labels.iter().enumerate() {
                    d[r * c + l] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                self.acc(
                    grads,
                    *logits,
                    Tensor::from_parts(self.value(*logits).shape(), d),
                );
            }
        }
    }
}

fn expand_rows(gy: &Tensor, like: &Tensor, d: usize) -> Tensor {
    let data = gy
        .data()
        .iter()
        .flat_map(|g| std::iter::repeat_n(*g, d))
        .collect();
    Tensor::from_parts(like.shape(), data)
}

pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}
