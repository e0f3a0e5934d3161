//! Convolution, instance normalization, activations and resampling with
//! hand-written backward passes.
//!
//! Every forward call returns the output together with the cache its
//! backward pass needs, so one set of parameters can be applied several
//! times per training step (e.g. `F(x)`, `F(G(y))`, `F(y)`) and each
//! application back-propagated independently. Parameter gradients
//! accumulate into [`Param::grad`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

const NORM_EPS: f64 = 1e-5;

/// Named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            value: vec![T::ZERO; n],
            grad: vec![T::ZERO; n],
        }
    }

    pub fn gaussian<R: Rng>(name: impl Into<String>, shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut p.value {
            *v = T::of(normal.sample(rng));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::ZERO);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu,
    Tanh,
}

const LEAKY_SLOPE: f64 = 0.2;

/// 2-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    col: Vec<T>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = Param::gaussian(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            init_std,
            rng,
        );
        let bias = with_bias.then(|| Param::zeros(format!("{name}.bias"), vec![out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_size(h, self.kernel, self.stride, self.padding)?,
            conv_output_size(w, self.kernel, self.stride, self.padding)?,
        ))
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (h, w) = (x.height as isize, x.width as isize);
        let n = oh * ow;
        let mut col = vec![T::ZERO; self.in_channels * k * k * n];
        for ci in 0..self.in_channels {
            let plane = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * n;
                    let dst = &mut col[row..row + n];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize - p + ky as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * s) as isize - p + kx as isize;
                            if ix >= 0 && ix < w {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], shape: (usize, usize, usize), oh: usize, ow: usize) -> Tensor<T> {
        let (c, h, w) = shape;
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let n = oh * ow;
        let mut out = Tensor::zeros(c, h, w);
        let plane_len = h * w;
        for ci in 0..c {
            let plane = &mut out.data[ci * plane_len..(ci + 1) * plane_len];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * n;
                    let src = &col[row..row + n];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize - p + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * s) as isize - p + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.in_channels, "{}: channel mismatch", self.weight.name);
        let (oh, ow) = self
            .output_hw(x.height, x.width)
            .expect("convolution input smaller than kernel");
        let n = oh * ow;
        let kk = self.in_channels * self.kernel * self.kernel;
        let col = self.im2col(x, oh, ow);
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        if let Some(b) = &self.bias {
            for (co, chunk) in out.data.chunks_mut(n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.value[co]);
            }
        }
        let beta = if self.bias.is_some() { T::ONE } else { T::ZERO };
        // out (cout x n) = W (cout x kk) * col (kk x n)
        unsafe {
            T::gemm(
                self.out_channels,
                kk,
                n,
                T::ONE,
                self.weight.value.as_ptr(),
                kk as isize,
                1,
                col.as_ptr(),
                n as isize,
                1,
                beta,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        (
            out,
            ConvCache {
                col,
                in_shape: x.shape(),
                out_hw: (oh, ow),
            },
        )
    }

    /// Back-propagates `dy`. Parameter gradients are accumulated only when
    /// `accumulate` is set; the input gradient is produced only when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        accumulate: bool,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ow) = cache.out_hw;
        let n = oh * ow;
        let kk = self.in_channels * self.kernel * self.kernel;
        debug_assert_eq!(dy.shape(), (self.out_channels, oh, ow));
        if accumulate {
            // dW (cout x kk) += dy (cout x n) * col^T (n x kk)
            unsafe {
                T::gemm(
                    self.out_channels,
                    n,
                    kk,
                    T::ONE,
                    dy.data.as_ptr(),
                    n as isize,
                    1,
                    cache.col.as_ptr(),
                    1,
                    n as isize,
                    T::ONE,
                    self.weight.grad.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
            if let Some(b) = &mut self.bias {
                for (co, chunk) in dy.data.chunks(n).enumerate() {
                    let mut s = T::ZERO;
                    for &v in chunk {
                        s += v;
                    }
                    b.grad[co] += s;
                }
            }
        }
        if !need_input_grad {
            return None;
        }
        // dcol (kk x n) = W^T (kk x cout) * dy (cout x n)
        let mut dcol = vec![T::ZERO; kk * n];
        unsafe {
            T::gemm(
                kk,
                self.out_channels,
                n,
                T::ONE,
                self.weight.value.as_ptr(),
                1,
                kk as isize,
                dy.data.as_ptr(),
                n as isize,
                1,
                T::ZERO,
                dcol.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Some(self.col2im(&dcol, cache.in_shape, oh, ow))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

/// Per-channel normalization over the spatial plane, without affine terms.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

pub fn instance_norm_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let p = x.plane();
    let inv_n = 1.0 / p as f64;
    let mut out = Tensor::zeros(x.channels, x.height, x.width);
    let mut inv_std = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let src = x.channel(c);
        let mean = src.iter().map(|v| v.to_f64()).sum::<f64>() * inv_n;
        let var = src
            .iter()
            .map(|v| {
                let d = v.to_f64() - mean;
                d * d
            })
            .sum::<f64>()
            * inv_n;
        let istd = 1.0 / (var + NORM_EPS).sqrt();
        let (m, s) = (T::of(mean), T::of(istd));
        for (o, &v) in out.data[c * p..(c + 1) * p].iter_mut().zip(src) {
            *o = (v - m) * s;
        }
        inv_std.push(s);
    }
    let xhat = out.data.clone();
    (out, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<T: Real>(cache: &NormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
    let p = dy.plane();
    let inv_n = 1.0 / p as f64;
    let mut dx = Tensor::zeros(dy.channels, dy.height, dy.width);
    for c in 0..dy.channels {
        let g = &dy.data[c * p..(c + 1) * p];
        let xh = &cache.xhat[c * p..(c + 1) * p];
        let mean_g = g.iter().map(|v| v.to_f64()).sum::<f64>() * inv_n;
        let mean_gx = g.iter().zip(xh).map(|(a, b)| a.to_f64() * b.to_f64()).sum::<f64>() * inv_n;
        let (mg, mgx, s) = (T::of(mean_g), T::of(mean_gx), cache.inv_std[c]);
        for ((o, &gv), &xv) in dx.data[c * p..(c + 1) * p].iter_mut().zip(g).zip(xh) {
            *o = s * (gv - mg - xv * mgx);
        }
    }
    dx
}

/// Applies `act` in place and returns what the backward pass needs.
pub fn activation_forward<T: Real>(act: Activation, x: &mut Tensor<T>) -> Vec<T> {
    match act {
        Activation::None => Vec::new(),
        Activation::Relu => {
            let saved = x.data.clone();
            x.data.iter_mut().for_each(|v| {
                if *v < T::ZERO {
                    *v = T::ZERO
                }
            });
            saved
        }
        Activation::LeakyRelu => {
            let saved = x.data.clone();
            let slope = T::of(LEAKY_SLOPE);
            x.data.iter_mut().for_each(|v| {
                if *v < T::ZERO {
                    *v *= slope
                }
            });
            saved
        }
        Activation::Tanh => {
            x.data.iter_mut().for_each(|v| *v = v.tanh());
            x.data.clone()
        }
    }
}

pub fn activation_backward<T: Real>(act: Activation, saved: &[T], dy: &mut Tensor<T>) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for (g, &x) in dy.data.iter_mut().zip(saved) {
                if x <= T::ZERO {
                    *g = T::ZERO;
                }
            }
        }
        Activation::LeakyRelu => {
            let slope = T::of(LEAKY_SLOPE);
            for (g, &x) in dy.data.iter_mut().zip(saved) {
                if x <= T::ZERO {
                    *g *= slope;
                }
            }
        }
        Activation::Tanh => {
            for (g, &y) in dy.data.iter_mut().zip(saved) {
                *g *= T::ONE - y * y;
            }
        }
    }
}

pub fn upsample2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, 2 * h, 2 * w);
    let ow = 2 * w;
    for ci in 0..c {
        let src = x.channel(ci);
        let dst = &mut out.data[ci * 4 * h * w..(ci + 1) * 4 * h * w];
        for y in 0..2 * h {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            let drow = &mut dst[y * ow..(y + 1) * ow];
            for (xx, d) in drow.iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (c, h2, w2) = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let src = dy.channel(ci);
        let dst = &mut dx.data[ci * h * w..(ci + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    dx
}

/// Convolution followed by optional instance normalization and an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub norm: bool,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    conv: ConvCache<T>,
    norm: Option<NormCache<T>>,
    act: Vec<T>,
}

impl<T: Real> ConvBlock<T> {
    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        let (mut y, conv) = self.conv.forward(x);
        let norm = if self.norm {
            let (n, c) = instance_norm_forward(&y);
            y = n;
            Some(c)
        } else {
            None
        };
        let act = activation_forward(self.act, &mut y);
        (y, BlockCache { conv, norm, act })
    }

    pub fn backward(
        &mut self,
        cache: &BlockCache<T>,
        mut dy: Tensor<T>,
        accumulate: bool,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        activation_backward(self.act, &cache.act, &mut dy);
        if let Some(nc) = &cache.norm {
            dy = instance_norm_backward(nc, &dy);
        }
        self.conv.backward(&cache.conv, &dy, accumulate, need_input_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_hw(x.height, x.width).unwrap();
        let mut out = Tensor::zeros(conv.out_channels, oh, ow);
        let k = conv.kernel;
        for co in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value[co]);
                    for ci in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                let wv = conv.weight.value[((co * conv.in_channels + ci) * k + ky) * k + kx];
                                s += wv * x.data[(ci * x.height + iy as usize) * x.width + ix as usize];
                            }
                        }
                    }
                    out.data[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0), (4, 1, 1)] {
            let mut conv = Conv2d::<f64>::new("c", 2, 3, k, s, p, true, 0.5, &mut rng);
            conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3];
            let x = random_tensor(2, 6, 6, &mut rng);
            let (y, _) = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), dy> = <x, conv^T(dy)> for the bias-free linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::<f64>::new("c", 3, 2, 4, 2, 1, false, 0.5, &mut rng);
        let x = random_tensor(3, 8, 8, &mut rng);
        let (y, cache) = conv.forward(&x);
        let dy = random_tensor(2, y.height, y.width, &mut rng);
        let dx = conv.backward(&cache, &dy, false, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(2, 3, 3, &mut rng);
        let y = upsample2_forward(&x);
        let dy = random_tensor(2, 6, 6, &mut rng);
        let dx = upsample2_backward(&dy);
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(3, 5, 5, &mut rng).map(|v| v * 4.0 + 2.0);
        let (y, _) = instance_norm_forward(&x);
        for c in 0..3 {
            let ch = y.channel(c);
            let mean: f64 = ch.iter().sum::<f64>() / 25.0;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn output_size_arithmetic() {
        assert_eq!(conv_output_size(64, 4, 2, 1), Some(32));
        assert_eq!(conv_output_size(8, 4, 1, 1), Some(7));
        assert_eq!(conv_output_size(1, 4, 1, 1), None);
    }
}
