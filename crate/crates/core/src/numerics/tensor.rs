use rand::Rng;

use crate::error::{dim_err, Result};

/// Dense row-major f64 tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            grad: None,
        }
    }

    /// A learnable tensor: gradient buffer allocated and zeroed.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.grad = Some(vec![0.0; t.data.len()]);
        Ok(t)
    }

    pub fn param_zeros(shape: &[usize]) -> Self {
        let mut t = Self::zeros(shape);
        t.grad = Some(vec![0.0; t.data.len()]);
        t
    }

    /// Uniform(-limit, limit) initialisation, gradient buffer attached.
    pub fn param_uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::from_fn(shape, |_| rng.gen_range(-limit..=limit));
        t.grad = Some(vec![0.0; t.data.len()]);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return dim_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `grad += delta`
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Channel-major `[C, H, W]` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap2D {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap2D {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return dim_err(format!(
                "map [{channels},{height},{width}] needs {} values, got {}",
                channels * height * width,
                data.len()
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn at_mut(&mut self, c: usize, i: usize, j: usize) -> &mut f64 {
        &mut self.data[(c * self.height + i) * self.width + j]
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Position-major `[H*W, C]` copy.
    pub fn to_rows(&self) -> Vec<f64> {
        channel_major_to_rows(&self.data, self.channels, self.positions())
    }

    pub fn from_rows(rows: &[f64], channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: rows_to_channel_major(rows, channels, height * width),
        }
    }

    pub fn as_grid(&self) -> FeatureGrid3D {
        FeatureGrid3D {
            channels: self.channels,
            depth: 1,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

/// Channel-major `[C, Z, H, W]` feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid3D {
    pub channels: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid3D {
    pub fn zeros(channels: usize, depth: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            depth,
            height,
            width,
            data: vec![0.0; channels * depth * height * width],
        }
    }

    pub fn new(
        channels: usize,
        depth: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != channels * depth * height * width {
            return dim_err(format!(
                "grid [{channels},{depth},{height},{width}] needs {} values, got {}",
                channels * depth * height * width,
                data.len()
            ));
        }
        Ok(Self {
            channels,
            depth,
            height,
            width,
            data,
        })
    }

    pub fn index(&self, c: usize, z: usize, i: usize, j: usize) -> usize {
        ((c * self.depth + z) * self.height + i) * self.width + j
    }

    pub fn at(&self, c: usize, z: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, z, i, j)]
    }

    pub fn at_mut(&mut self, c: usize, z: usize, i: usize, j: usize) -> &mut f64 {
        let k = self.index(c, z, i, j);
        &mut self.data[k]
    }

    pub fn positions(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn to_rows(&self) -> Vec<f64> {
        channel_major_to_rows(&self.data, self.channels, self.positions())
    }

    pub fn from_rows(
        rows: &[f64],
        channels: usize,
        depth: usize,
        height: usize,
        width: usize,
    ) -> Self {
        Self {
            channels,
            depth,
            height,
            width,
            data: rows_to_channel_major(rows, channels, depth * height * width),
        }
    }
}

pub fn channel_major_to_rows(data: &[f64], channels: usize, positions: usize) -> Vec<f64> {
    let mut rows = vec![0.0; data.len()];
    for c in 0..channels {
        let src = &data[c * positions..(c + 1) * positions];
        for (p, v) in src.iter().enumerate() {
            rows[p * channels + c] = *v;
        }
    }
    rows
}

pub fn rows_to_channel_major(rows: &[f64], channels: usize, positions: usize) -> Vec<f64> {
    let mut data = vec![0.0; rows.len()];
    for p in 0..positions {
        for c in 0..channels {
            data[c * positions + p] = rows[p * channels + c];
        }
    }
    data
}
