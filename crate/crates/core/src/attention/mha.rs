use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::module::{join, Module};
use crate::numerics::ops::Linear;
use crate::numerics::tensor::Tensor;

/// Dense scaled dot-product multi-head attention with group masking: token
/// `i` attends token `j` only when `groups[i] == groups[j]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    q_in: Vec<f64>,
    k_in: Vec<f64>,
    v_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per (head, query): allowed key indices and their weights.
    attn: Vec<Vec<(usize, f64)>>,
    mixed: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn new(c: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {c} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            wq: Linear::new(c, c, rng),
            wk: Linear::new(c, c, rng),
            wv: Linear::new(c, c, rng),
            wo: Linear::new(c, c, rng),
        })
    }

    fn dim(&self) -> usize {
        self.wq.din()
    }

    pub fn forward(
        &self,
        q_in: &[f64],
        k_in: &[f64],
        v_in: &[f64],
        groups: &[usize],
    ) -> (Vec<f64>, MhaCache) {
        let c = self.dim();
        let n = q_in.len() / c;
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(q_in);
        let k = self.wk.forward(k_in);
        let v = self.wv.forward(v_in);
        let mut mixed = vec![0.0; n * c];
        let mut attn = Vec::with_capacity(self.heads * n);
        for h in 0..self.heads {
            for i in 0..n {
                let qi = &q[i * c + h * dh..i * c + (h + 1) * dh];
                let mut row: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| groups[j] == groups[i])
                    .map(|j| {
                        let kj = &k[j * c + h * dh..j * c + (h + 1) * dh];
                        (
                            j,
                            scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>(),
                        )
                    })
                    .collect();
                let m = row.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    r.1 = (r.1 - m).exp();
                    z += r.1;
                }
                for r in row.iter_mut() {
                    r.1 /= z;
                }
                let out = &mut mixed[i * c + h * dh..i * c + (h + 1) * dh];
                for &(j, a) in &row {
                    for (o, vv) in out.iter_mut().zip(&v[j * c + h * dh..j * c + (h + 1) * dh]) {
                        *o += a * vv;
                    }
                }
                attn.push(row);
            }
        }
        let y = self.wo.forward(&mixed);
        let cache = MhaCache {
            q_in: q_in.to_vec(),
            k_in: k_in.to_vec(),
            v_in: v_in.to_vec(),
            q,
            k,
            v,
            attn,
            mixed,
        };
        (y, cache)
    }

    /// Returns gradients for `(q_in, k_in, v_in)`.
    pub fn backward(&mut self, cache: &MhaCache, gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.dim();
        let n = gy.len() / c;
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let gmixed = self.wo.backward(&cache.mixed, gy);
        let mut gq = vec![0.0; n * c];
        let mut gk = vec![0.0; n * c];
        let mut gv = vec![0.0; n * c];
        for h in 0..self.heads {
            for i in 0..n {
                let row = &cache.attn[h * n + i];
                let go = &gmixed[i * c + h * dh..i * c + (h + 1) * dh];
                // dL/dA_ij and dL/dV_j
                let mut ga: Vec<f64> = Vec::with_capacity(row.len());
                for &(j, a) in row {
                    let vj = &cache.v[j * c + h * dh..j * c + (h + 1) * dh];
                    ga.push(go.iter().zip(vj).map(|(x, y)| x * y).sum());
                    for (g, o) in gv[j * c + h * dh..j * c + (h + 1) * dh].iter_mut().zip(go) {
                        *g += a * o;
                    }
                }
                let dot: f64 = row.iter().zip(&ga).map(|(r, g)| r.1 * g).sum();
                for (&(j, a), g) in row.iter().zip(&ga) {
                    let gs = a * (g - dot) * scale;
                    for d in 0..dh {
                        gq[i * c + h * dh + d] += gs * cache.k[j * c + h * dh + d];
                        gk[j * c + h * dh + d] += gs * cache.q[i * c + h * dh + d];
                    }
                }
            }
        }
        let gq_in = self.wq.backward(&cache.q_in, &gq);
        let gk_in = self.wk.backward(&cache.k_in, &gk);
        let gv_in = self.wv.backward(&cache.v_in, &gv);
        (gq_in, gk_in, gv_in)
    }
}

impl Module for MultiHeadAttention {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.wq.visit_params(&join(prefix, "wq"), f);
        self.wk.visit_params(&join(prefix, "wk"), f);
        self.wv.visit_params(&join(prefix, "wv"), f);
        self.wo.visit_params(&join(prefix, "wo"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.wq.visit_params_mut(&join(prefix, "wq"), f);
        self.wk.visit_params_mut(&join(prefix, "wk"), f);
        self.wv.visit_params_mut(&join(prefix, "wv"), f);
        self.wo.visit_params_mut(&join(prefix, "wo"), f);
    }
}
