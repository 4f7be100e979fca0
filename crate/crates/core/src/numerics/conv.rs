//! Dense 3D convolution (2D convolution is the depth-1 special case).

use rand::Rng;

use super::module::{join, Module};
use super::tensor::{FeatureGrid3D, FeatureMap2D, Tensor};
use crate::error::{dim_err, Result};

/// Weight layout `[cout, cin, kd, kh, kw]`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

fn out_len(n: usize, k: usize, s: usize, p: usize) -> usize {
    if n + 2 * p < k {
        0
    } else {
        (n + 2 * p - k) / s + 1
    }
}

impl Conv3d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (cin * kernel.iter().product::<usize>()) as f64;
        // He-uniform: the convs feed ReLUs.
        let limit = (6.0 / fan_in).sqrt();
        Self {
            weight: Tensor::param_uniform(
                &[cout, cin, kernel[0], kernel[1], kernel[2]],
                limit,
                rng,
            ),
            bias: Tensor::param_zeros(&[cout]),
            stride,
            padding,
        }
    }

    /// 2D convolution over `[C, H, W]` maps: square kernel `k`, stride `s`, padding `k/2`.
    pub fn new_2d(cin: usize, cout: usize, k: usize, s: usize, rng: &mut impl Rng) -> Self {
        Self::new(cin, cout, [1, k, k], [1, s, s], [0, k / 2, k / 2], rng)
    }

    /// Identity 1x1 2D conv (`cin == cout`).
    pub fn identity_2d(c: usize) -> Self {
        let mut conv = Self {
            weight: Tensor::param_zeros(&[c, c, 1, 1, 1]),
            bias: Tensor::param_zeros(&[c]),
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        };
        for i in 0..c {
            conv.weight.data[i * c + i] = 1.0;
        }
        conv
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let k = self.kernel();
        [
            out_len(dims[0], k[0], self.stride[0], self.padding[0]),
            out_len(dims[1], k[1], self.stride[1], self.padding[1]),
            out_len(dims[2], k[2], self.stride[2], self.padding[2]),
        ]
    }

    pub fn check_input(&self, x: &FeatureGrid3D) -> Result<()> {
        if x.channels != self.cin() {
            return dim_err(format!(
                "conv expects {} input channels, got {}",
                self.cin(),
                x.channels
            ));
        }
        Ok(())
    }

    /// Calls `f(out_index, in_index, weight_index)` for every valid tap.
    #[inline]
    fn for_each_tap(
        &self,
        in_dims: [usize; 3],
        out_dims: [usize; 3],
        mut f: impl FnMut(usize, usize, usize),
    ) {
        let [cout, cin] = [self.cout(), self.cin()];
        let k = self.kernel();
        let [id, ih, iw] = in_dims;
        let [od, oh, ow] = out_dims;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        for co in 0..cout {
            for ci in 0..cin {
                for kz in 0..k[0] {
                    for ky in 0..k[1] {
                        for kx in 0..k[2] {
                            let widx = (((co * cin + ci) * k[0] + kz) * k[1] + ky) * k[2] + kx;
                            for oz in 0..od {
                                let iz = (oz * sd + kz) as isize - pd as isize;
                                if iz < 0 || iz >= id as isize {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    if iy < 0 || iy >= ih as isize {
                                        continue;
                                    }
                                    let in_row = ((ci * id + iz as usize) * ih + iy as usize) * iw;
                                    let out_row = ((co * od + oz) * oh + oy) * ow;
                                    for ox in 0..ow {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        if ix < 0 || ix >= iw as isize {
                                            continue;
                                        }
                                        f(out_row + ox, in_row + ix as usize, widx);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &FeatureGrid3D) -> FeatureGrid3D {
        debug_assert_eq!(x.channels, self.cin());
        let od = self.output_dims(x.dims());
        let mut y = FeatureGrid3D::zeros(self.cout(), od[0], od[1], od[2]);
        let per = y.positions();
        for co in 0..self.cout() {
            y.data[co * per..(co + 1) * per]
                .iter_mut()
                .for_each(|v| *v = self.bias.data[co]);
        }
        let w = &self.weight.data;
        let xd = &x.data;
        let yd = &mut y.data;
        self.for_each_tap(x.dims(), od, |o, i, k| yd[o] += w[k] * xd[i]);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &FeatureGrid3D, gy: &FeatureGrid3D) -> FeatureGrid3D {
        let od = [gy.depth, gy.height, gy.width];
        let mut gx = FeatureGrid3D::zeros(x.channels, x.depth, x.height, x.width);
        let mut gw = vec![0.0; self.weight.len()];
        {
            let w = &self.weight.data;
            let xd = &x.data;
            let g = &gy.data;
            let gxd = &mut gx.data;
            self.for_each_tap(x.dims(), od, |o, i, k| {
                gxd[i] += w[k] * g[o];
                gw[k] += xd[i] * g[o];
            });
        }
        self.weight.accumulate_grad(&gw);
        let per = gy.positions();
        let gb: Vec<f64> = (0..self.cout())
            .map(|co| gy.data[co * per..(co + 1) * per].iter().sum())
            .collect();
        self.bias.accumulate_grad(&gb);
        gx
    }

    pub fn forward_2d(&self, x: &FeatureMap2D) -> FeatureMap2D {
        let y = self.forward(&x.as_grid());
        FeatureMap2D {
            channels: y.channels,
            height: y.height,
            width: y.width,
            data: y.data,
        }
    }

    pub fn backward_2d(&mut self, x: &FeatureMap2D, gy: &FeatureMap2D) -> FeatureMap2D {
        let g = self.backward(&x.as_grid(), &gy.as_grid());
        FeatureMap2D {
            channels: g.channels,
            height: g.height,
            width: g.width,
            data: g.data,
        }
    }
}

impl Module for Conv3d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
