#![allow(dead_code)]

use bevfuse_core::numerics::gradcheck::{
    finite_difference_check, GradCheckOptions, GradCheckReport,
};
use bevfuse_core::numerics::module::{Module, TensorSet};
use bevfuse_core::numerics::tensor::Tensor;
use rand::Rng;

/// A module under test bundled with its differentiable inputs, so one
/// finite-difference sweep covers parameters and inputs together.
pub struct Probe<M> {
    pub module: M,
    pub inputs: TensorSet,
}

impl<M: Module> Module for Probe<M> {
    fn visit_params(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.module.visit_params(&format!("{p}module"), f);
        self.inputs.visit_params(&format!("{p}input"), f);
    }
    fn visit_params_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.module.visit_params_mut(&format!("{p}module"), f);
        self.inputs.visit_params_mut(&format!("{p}input"), f);
    }
}

impl<M> Probe<M> {
    pub fn new(module: M) -> Self {
        Self {
            module,
            inputs: TensorSet(Vec::new()),
        }
    }

    pub fn with_input(mut self, name: &str, data: Vec<f64>) -> Self {
        let n = data.len();
        self.inputs
            .0
            .push((name.to_string(), Tensor::param(&[n], data).unwrap()));
        self
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs.0[i].1.data
    }

    pub fn add_input_grad(&mut self, i: usize, g: &[f64]) {
        self.inputs.0[i].1.accumulate_grad(g);
    }
}

pub fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Randomises every parameter uniformly in `±scale`.
pub fn randomize(m: &mut impl Module, rng: &mut impl Rng, scale: f64) {
    m.visit_params_mut("", &mut |_, t| {
        t.data
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-scale..scale))
    });
}

pub fn gradcheck<M: Module>(m: &mut M, f: impl FnMut(&M) -> f64) -> GradCheckReport {
    let r = finite_difference_check(m, f, &GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_err <= 1e-4, "gradient check failed: {r:?}");
    r
}
