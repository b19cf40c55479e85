//! Convolution stack with explicit backpropagation.
//!
//! Activations of a batch are stored as `(channels, batch * h * w)` matrices
//! so each layer is one im2col plus one GEMM.

use ndarray::{Array1, Array2, Axis, LinalgScalar};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub trait Scalar: Float + LinalgScalar + Send + Sync + std::fmt::Debug + 'static {
    fn of(v: f64) -> Self;
}

impl Scalar for f32 {
    fn of(v: f64) -> f32 {
        v as f32
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> f64 {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub out_channels: usize,
    /// Odd; padding is `kernel / 2`.
    pub kernel: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            out_channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// `(out, in * k * k)`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub relu: bool,
}

impl<T: Scalar> Conv<T> {
    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * (self.kernel / 2) - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

/// A chain of convolutions; every layer but the last is followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    pub layers: Vec<Conv<T>>,
}

struct LayerCache<T> {
    cols: Array2<T>,
    /// Post-activation output.
    out: Array2<T>,
    in_hw: (usize, usize),
}

pub struct ForwardPass<T> {
    /// `(head channels, batch * h * w)`, before any output squashing.
    pub output: Array2<T>,
    pub batch: usize,
    pub out_hw: (usize, usize),
    caches: Vec<LayerCache<T>>,
}

pub type Grads<T> = Vec<(Array2<T>, Array1<T>)>;

impl<T: Scalar> Net<T> {
    /// He-normal hidden weights, zero biases; the head uses a narrower
    /// normal and per-channel biases from `head_bias`.
    pub fn init<R: Rng>(hidden: &[LayerSpec], head_channels: usize, head_bias: &[f64], rng: &mut R) -> Net<T> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut cin = 1;
        for spec in hidden {
            let fan_in = cin * spec.kernel * spec.kernel;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            layers.push(Conv {
                weight: Array2::from_shape_simple_fn((spec.out_channels, fan_in), || T::of(normal.sample(rng))),
                bias: Array1::zeros(spec.out_channels),
                in_channels: cin,
                kernel: spec.kernel,
                stride: spec.stride,
                relu: true,
            });
            cin = spec.out_channels;
        }
        let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt() * 0.1).expect("finite std");
        layers.push(Conv {
            weight: Array2::from_shape_simple_fn((head_channels, cin), || T::of(normal.sample(rng))),
            bias: Array1::from_shape_fn(head_channels, |c| T::of(head_bias.get(c).copied().unwrap_or(0.0))),
            in_channels: cin,
            kernel: 1,
            stride: 1,
            relu: false,
        });
        Net { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in layer order: each layer's weights row-major, then biases.
    pub fn params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend(l.weight.iter().copied());
            v.extend(l.bias.iter().copied());
        }
        v
    }

    pub fn set_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count");
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[i];
                i += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[i];
                i += 1;
            }
        }
    }

    /// Output channels of the last layer.
    pub fn head_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    /// Spatial size after every stride.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.layers.iter().fold((h, w), |(h, w), l| (l.out_dim(h), l.out_dim(w)))
    }

    /// `input` is `(1, batch * h * w)`.
    pub fn forward(&self, input: Array2<T>, batch: usize, hw: (usize, usize)) -> ForwardPass<T> {
        let mut x = input;
        let mut hw = hw;
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (cols, ohw) = if l.is_pointwise() {
                (x, hw)
            } else {
                im2col(&x, batch, hw, l.kernel, l.stride)
            };
            let mut y = l.weight.dot(&cols);
            for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(l.bias.iter()) {
                row.mapv_inplace(|v| v + b);
            }
            if l.relu {
                y.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            }
            caches.push(LayerCache {
                cols,
                out: y.clone(),
                in_hw: hw,
            });
            x = y;
            hw = ohw;
        }
        ForwardPass {
            output: x,
            batch,
            out_hw: hw,
            caches,
        }
    }

    /// Gradients of a scalar loss given its derivative w.r.t. the raw output.
    pub fn backward(&self, pass: &ForwardPass<T>, d_output: Array2<T>) -> Grads<T> {
        let mut grads: Grads<T> = Vec::with_capacity(self.layers.len());
        let mut dy = d_output;
        for (idx, (l, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            if l.relu {
                ndarray::Zip::from(&mut dy).and(&cache.out).for_each(|d, &o| {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            let dw = dy.dot(&cache.cols.t());
            let db = dy.sum_axis(Axis(1));
            grads.push((dw, db));
            if idx > 0 {
                let dcols = l.weight.t().dot(&dy);
                dy = if l.is_pointwise() {
                    dcols
                } else {
                    col2im(&dcols, l.in_channels, pass.batch, cache.in_hw, l.kernel, l.stride)
                };
            }
        }
        grads.reverse();
        grads
    }
}

fn im2col<T: Scalar>(x: &Array2<T>, batch: usize, (h, w): (usize, usize), k: usize, s: usize) -> (Array2<T>, (usize, usize)) {
    let cin = x.nrows();
    let p = k / 2;
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let n = batch * ho * wo;
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let mut col = vec![T::zero(); cin * k * k * n];
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for b in 0..batch {
                    let src = &xs[(c * batch + b) * h * w..(c * batch + b + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (Array2::from_shape_vec((cin * k * k, n), col).expect("im2col shape"), (ho, wo))
}

fn col2im<T: Scalar>(cols: &Array2<T>, cin: usize, batch: usize, (h, w): (usize, usize), k: usize, s: usize) -> Array2<T> {
    let p = k / 2;
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let n = batch * ho * wo;
    let cs = cols.as_standard_layout();
    let cs = cs.as_slice().expect("standard layout");
    let mut x = vec![T::zero(); cin * batch * h * w];
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cs[row * n..(row + 1) * n];
                for b in 0..batch {
                    let dst = &mut x[(c * batch + b) * h * w..(c * batch + b + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] = dst[iy as usize * w + ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((cin, batch * h * w), x).expect("col2im shape")
}
