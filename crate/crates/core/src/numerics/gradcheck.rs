//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::module::Module;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Check at most this many coordinates per tensor (chosen at random).
    pub max_coords_per_tensor: Option<usize>,
    /// Denominator floor of the relative error. Gradients below it are
    /// judged by absolute error `rel_floor · tol`: at `h = 1e-5` the
    /// round-off in a central difference of an O(10) objective is ~1e-8.
    pub rel_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_tensor: None,
            rel_floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat index over all parameters in visiting order.
    pub worst_index: usize,
    pub worst_param: String,
    pub step: f64,
    pub checked: usize,
    pub total: usize,
}

impl GradCheckReport {
    pub fn subsampled(&self) -> bool {
        self.checked < self.total
    }
}

/// Compares the gradients currently stored in `module` with central
/// differences `(f(θ+h) − f(θ−h)) / 2h` of `f`.
///
/// The caller must have run the analytic backward for `f` at the current
/// parameters (with zeroed gradients beforehand).
pub fn finite_difference_check<M: Module>(
    module: &mut M,
    mut f: impl FnMut(&M) -> f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if opts.step <= 0.0 {
        return Err(Error::Numeric(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut tensors: Vec<(String, usize, Vec<f64>)> = Vec::new();
    module.visit_params("", &mut |name, t| {
        let grad = t
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.len()]);
        tensors.push((name.to_string(), t.len(), grad));
    });
    let base = f(module);
    if !base.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite: {base}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let total: usize = tensors.iter().map(|t| t.1).sum();
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_index: 0,
        worst_param: String::new(),
        step: opts.step,
        checked: 0,
        total,
    };
    let mut offset = 0;
    for (ti, (name, len, grad)) in tensors.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(m) if m < *len => {
                let mut v = sample(&mut rng, *len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..*len).collect(),
        };
        for &ci in &coords {
            let orig = param_value(module, ti, ci);
            set_param_value(module, ti, ci, orig + opts.step);
            let fp = f(module);
            set_param_value(module, ti, ci, orig - opts.step);
            let fm = f(module);
            set_param_value(module, ti, ci, orig);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite while perturbing {name}[{ci}]"
                )));
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let analytic = grad[ci];
            let abs = (numeric - analytic).abs();
            let rel = abs / numeric.abs().max(analytic.abs()).max(opts.rel_floor);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst_index = offset + ci;
                report.worst_param = format!("{name}[{ci}]");
            }
        }
        offset += len;
    }
    Ok(report)
}

fn param_value<M: Module>(m: &M, tensor: usize, coord: usize) -> f64 {
    let mut k = 0;
    let mut v = 0.0;
    m.visit_params("", &mut |_, t| {
        if k == tensor {
            v = t.data[coord];
        }
        k += 1;
    });
    v
}

fn set_param_value<M: Module>(m: &mut M, tensor: usize, coord: usize, value: f64) {
    let mut k = 0;
    m.visit_params_mut("", &mut |_, t| {
        if k == tensor {
            t.data[coord] = value;
        }
        k += 1;
    });
}
