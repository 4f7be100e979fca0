//! Linear maps, softmax, layer normalisation and activations.
//!
//! Every layer exposes a forward that returns whatever the backward needs and
//! a backward that accumulates parameter gradients (`+=`) and returns the
//! gradient with respect to its input.

use rand::Rng;

use super::module::{join, Module};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};

/// `y = x·w + b` with `w: [din, dout]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new(din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (din + dout) as f64).sqrt();
        Self {
            w: Tensor::param_uniform(&[din, dout], limit, rng),
            b: Tensor::param_zeros(&[dout]),
        }
    }

    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            w: Tensor::param_zeros(&[din, dout]),
            b: Tensor::param_zeros(&[dout]),
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut l = Self::zeros(d, d);
        for i in 0..d {
            l.w.data[i * d + i] = 1.0;
        }
        l
    }

    pub fn din(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.w.shape()[1]
    }

    /// `x` holds `n` rows of `din` values.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (din, dout) = (self.din(), self.dout());
        let n = x.len() / din;
        let mut y = Vec::with_capacity(n * dout);
        for row in x.chunks_exact(din) {
            y.extend_from_slice(&self.b.data);
            let start = y.len() - dout;
            let out = &mut y[start..];
            for (i, &xi) in row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &self.w.data[i * dout..(i + 1) * dout];
                for (o, w) in out.iter_mut().zip(wrow) {
                    *o += xi * w;
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], gy: &[f64]) -> Vec<f64> {
        let gx = self.input_grad(gy);
        self.accumulate(x, gy);
        gx
    }

    /// Parameter gradients only.
    pub fn accumulate(&mut self, x: &[f64], gy: &[f64]) {
        let (din, dout) = (self.din(), self.dout());
        let gw = self.w.grad_mut();
        for (row, grow) in x.chunks_exact(din).zip(gy.chunks_exact(dout)) {
            for (i, &xi) in row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (g, gyo) in gw[i * dout..(i + 1) * dout].iter_mut().zip(grow) {
                    *g += xi * gyo;
                }
            }
        }
        let gb = self.b.grad_mut();
        for grow in gy.chunks_exact(dout) {
            for (g, v) in gb.iter_mut().zip(grow) {
                *g += v;
            }
        }
    }

    pub fn input_grad(&self, gy: &[f64]) -> Vec<f64> {
        let (din, dout) = (self.din(), self.dout());
        let n = gy.len() / dout;
        let mut gx = vec![0.0; n * din];
        for (grow, gxrow) in gy.chunks_exact(dout).zip(gx.chunks_exact_mut(din)) {
            for (i, gxi) in gxrow.iter_mut().enumerate() {
                let wrow = &self.w.data[i * dout..(i + 1) * dout];
                *gxi = wrow.iter().zip(grow).map(|(w, g)| w * g).sum();
            }
        }
        gx
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Tensor-level `linear` with shape checking: `x[.., din] · w[din, dout] + b[dout]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return dim_err("weight must be rank 2");
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if x.last_dim() != din {
        return dim_err(format!(
            "input inner dim {} != weight rows {din}",
            x.last_dim()
        ));
    }
    if b.len() != dout {
        return dim_err(format!("bias has {} entries, expected {dout}", b.len()));
    }
    let layer = Linear {
        w: w.clone(),
        b: b.clone(),
    };
    let mut shape = x.shape().to_vec();
    if shape.is_empty() {
        shape.push(dout);
    } else {
        *shape.last_mut().unwrap() = dout;
    }
    Tensor::new(&shape, layer.forward(&x.data))
}

/// Softmax over consecutive slices of length `k`.
pub fn softmax_rows(x: &[f64], k: usize) -> Vec<f64> {
    let mut y = x.to_vec();
    for row in y.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Given softmax output `y` and upstream `gy`, returns the logit gradient.
pub fn softmax_rows_backward(y: &[f64], gy: &[f64], k: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for ((yr, gr), gxr) in y
        .chunks_exact(k)
        .zip(gy.chunks_exact(k))
        .zip(gx.chunks_exact_mut(k))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((g, yv), gv) in gxr.iter_mut().zip(yr).zip(gr) {
            *g = yv * (gv - dot);
        }
    }
    gx
}

/// Softmax over the trailing dimension.
pub fn softmax(x: &Tensor) -> Tensor {
    let k = x.last_dim().max(1);
    Tensor::new(x.shape(), softmax_rows(&x.data, k)).expect("same shape")
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::param(&[c], vec![1.0; c]).unwrap(),
            beta: Tensor::param_zeros(&[c]),
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let c = self.dim();
        let rows = x.len() / c;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in x.chunks_exact(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                y[r * c + j] = self.gamma.data[j] * h + self.beta.data[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, gy: &[f64]) -> Vec<f64> {
        let c = self.dim();
        let mut gx = vec![0.0; gy.len()];
        {
            let gg = self.gamma.grad_mut();
            for (grow, hrow) in gy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
                for j in 0..c {
                    gg[j] += grow[j] * hrow[j];
                }
            }
        }
        {
            let gb = self.beta.grad_mut();
            for grow in gy.chunks_exact(c) {
                for j in 0..c {
                    gb[j] += grow[j];
                }
            }
        }
        for (r, grow) in gy.chunks_exact(c).enumerate() {
            let hrow = &cache.xhat[r * c..(r + 1) * c];
            let mut mean_g = 0.0;
            let mut mean_gh = 0.0;
            for j in 0..c {
                let gh = grow[j] * self.gamma.data[j];
                mean_g += gh;
                mean_gh += gh * hrow[j];
            }
            mean_g /= c as f64;
            mean_gh /= c as f64;
            let is = cache.inv_std[r];
            for j in 0..c {
                let gh = grow[j] * self.gamma.data[j];
                gx[r * c + j] = is * (gh - mean_g - hrow[j] * mean_gh);
            }
        }
        gx
    }
}

impl Module for LayerNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Tensor-level layer normalisation over the trailing dimension.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let c = x.last_dim();
    if gamma.len() != c || beta.len() != c {
        return dim_err(format!("affine params must have {c} entries"));
    }
    let ln = LayerNorm {
        gamma: gamma.clone(),
        beta: beta.clone(),
        eps,
    };
    Tensor::new(x.shape(), ln.forward(&x.data).0)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &[f64], gy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(gy)
        .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
        .collect()
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Position-wise feed-forward block `W2·relu(W1·x)` with hidden width `hidden`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl FeedForward {
    pub fn new(c: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(c, hidden, rng),
            fc2: Linear::new(hidden, c, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, FeedForwardCache) {
        let pre = self.fc1.forward(x);
        let hidden = relu(&pre);
        let y = self.fc2.forward(&hidden);
        (
            y,
            FeedForwardCache {
                x: x.to_vec(),
                pre,
                hidden,
            },
        )
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, gy: &[f64]) -> Vec<f64> {
        let gh = self.fc2.backward(&cache.hidden, gy);
        let gpre = relu_backward(&cache.pre, &gh);
        self.fc1.backward(&cache.x, &gpre)
    }
}

impl Module for FeedForward {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}
