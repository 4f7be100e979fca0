//! Adam with decoupled weight decay, gradient clipping and a warmup/cosine
//! learning-rate schedule.

use bevfuse_core::numerics::Module;

use crate::config::TrainConfig;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated gradients. Tensors without a gradient
    /// buffer are left alone.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, lr: f64) {
        self.step += 1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        module.visit_params_mut("", &mut |_, t| {
            if ms.len() <= i {
                ms.push(vec![0.0; t.len()]);
                vs.push(vec![0.0; t.len()]);
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                i += 1;
                return;
            };
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let upd = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                t.data[k] -= lr * (upd + wd * t.data[k]);
            }
            i += 1;
        });
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<M: Module + ?Sized>(module: &M) -> f64 {
    let mut s = 0.0;
    module.visit_params("", &mut |_, t| {
        if let Some(g) = t.grad() {
            s += g.iter().map(|x| x * x).sum::<f64>();
        }
    });
    s.sqrt()
}

/// Multiplies every gradient by `k`.
pub fn scale_grads<M: Module + ?Sized>(module: &mut M, k: f64) {
    module.visit_params_mut("", &mut |_, t| {
        if t.grad().is_some() {
            t.grad_mut().iter_mut().for_each(|g| *g *= k);
        }
    });
}

/// Rescales gradients so their global norm is at most `max`; returns the
/// norm before clipping.
pub fn clip_grad_norm<M: Module + ?Sized>(module: &mut M, max: f64) -> f64 {
    let n = grad_norm(module);
    if max > 0.0 && n > max {
        scale_grads(module, max / n);
    }
    n
}

/// Linear warmup to `lr`, then cosine decay to `lr · min_lr_ratio`.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup {
        return cfg.lr * (step + 1) as f64 / cfg.warmup as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup).max(1) as f64;
    let p = ((step - cfg.warmup) as f64 / span).min(1.0);
    let floor = cfg.lr * cfg.min_lr_ratio;
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}
