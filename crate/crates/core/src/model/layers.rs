//! Network layers with explicit forward and reverse-mode passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Gradients, Tensor, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};

/// Callback receiving `(full name, tensor, trainable)`.
pub type Visitor<'a, T> = dyn FnMut(String, &Tensor<T>, bool) + 'a;
pub type VisitorMut<'a, T> = dyn FnMut(String, &mut Tensor<T>, bool) + 'a;

pub trait Params<T> {
    fn visit(&self, f: &mut Visitor<'_, T>);
    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>);
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// `U(-bound, bound)` draw seeded by `(seed, name)`, so every tensor's
/// initialization is independent of construction order.
pub fn uniform_init<T: Scalar>(name: &str, shape: &[usize], bound: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    let n: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect(),
    }
}

/// Default fan-in uniform initialization (Kaiming uniform with `a = sqrt(5)`):
/// weights and biases both drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

pub struct Conv2d<T> {
    pub name: String,
    /// `[out, in, kh, kw]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
    /// Negative padding crops the input symmetrically.
    pub padding: (isize, isize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (isize, isize),
        seed: u64,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let bound = fan_in_bound(fan_in);
        Self {
            name: name.to_string(),
            weight: uniform_init(&format!("{name}.weight"), &[out_ch, in_ch, kernel.0, kernel.1], bound, seed),
            bias: uniform_init(&format!("{name}.bias"), &[out_ch], bound, seed),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    fn kernel(&self) -> (usize, usize) {
        (self.weight.shape[2], self.weight.shape[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        conv_out_len(h, kh, self.stride.0, self.padding.0)
            .zip(conv_out_len(w, kw, self.stride.1, self.padding.1))
            .ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "{}: input {h}×{w} too small for kernel {kh}×{kw}",
                    self.name
                ))
            })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T]) {
        let (kh, kw) = self.kernel();
        let (sh, sw) = (self.stride.0 as isize, self.stride.1 as isize);
        let (ph, pw) = self.padding;
        let p = oh * ow;
        let mut row = 0;
        for ci in 0..self.in_channels() {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh as isize {
                for kj in 0..kw as isize {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for r in 0..oh {
                        let ih = r as isize * sh + ki - ph;
                        let out = &mut dst[r * ow..(r + 1) * ow];
                        if ih < 0 || ih >= h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for (c, o) in out.iter_mut().enumerate() {
                            let iw = c as isize * sw + kj - pw;
                            *o = if iw >= 0 && iw < w as isize {
                                src[iw as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
        let (kh, kw) = self.kernel();
        let (sh, sw) = (self.stride.0 as isize, self.stride.1 as isize);
        let (ph, pw) = self.padding;
        let p = oh * ow;
        let mut row = 0;
        for ci in 0..self.in_channels() {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh as isize {
                for kj in 0..kw as isize {
                    let src = &col[row * p..(row + 1) * p];
                    for r in 0..oh {
                        let ih = r as isize * sh + ki - ph;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        for (c, &g) in src[r * ow..(r + 1) * ow].iter().enumerate() {
                            let iw = c as isize * sw + kj - pw;
                            if iw >= 0 && iw < w as isize {
                                dst[iw as usize] = dst[iw as usize] + g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected {} input channels, got {}",
                self.name,
                self.in_channels(),
                x.c
            )));
        }
        let (oh, ow) = self.output_hw(x.h, x.w)?;
        let (co, k, p) = (self.out_channels(), self.weight.len() / self.out_channels(), oh * ow);
        let mut y = Tensor4::zeros(x.n, co, oh, ow);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for n in 0..x.n {
            let out = y.item_mut(n);
            for (c, chunk) in out.chunks_exact_mut(p).enumerate() {
                chunk.fill(self.bias.data[c]);
            }
            let cols: &[T] = if self.is_pointwise() {
                x.item(n)
            } else {
                self.im2col(x.item(n), x.h, x.w, oh, ow, &mut col);
                &col
            };
            matmul(co, k, p, &self.weight.data, false, cols, false, T::one(), out);
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when requested.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
        need_dx: bool,
        grads: &mut Gradients<T>,
    ) -> Option<Tensor4<T>> {
        let (oh, ow) = (dy.h, dy.w);
        let (co, k, p) = (self.out_channels(), self.weight.len() / self.out_channels(), oh * ow);
        let mut dw = vec![T::zero(); co * k];
        let mut db = vec![T::zero(); co];
        let mut dx = need_dx.then(|| Tensor4::zeros(x.n, x.c, x.h, x.w));
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        let mut dcol = vec![T::zero(); if need_dx { k * p } else { 0 }];
        for n in 0..x.n {
            let g = dy.item(n);
            for (c, chunk) in g.chunks_exact(p).enumerate() {
                db[c] = db[c] + chunk.iter().copied().sum();
            }
            let cols: &[T] = if self.is_pointwise() {
                x.item(n)
            } else {
                self.im2col(x.item(n), x.h, x.w, oh, ow, &mut col);
                &col
            };
            matmul(co, p, k, g, false, cols, true, T::one(), &mut dw);
            if let Some(dx) = dx.as_mut() {
                if self.is_pointwise() {
                    matmul(k, co, p, &self.weight.data, true, g, false, T::zero(), dx.item_mut(n));
                } else {
                    matmul(k, co, p, &self.weight.data, true, g, false, T::zero(), &mut dcol);
                    self.col2im(&dcol, x.h, x.w, oh, ow, dx.item_mut(n));
                }
            }
        }
        grads.accumulate(format!("{}.weight", self.name), Tensor { shape: self.weight.shape.clone(), data: dw });
        grads.accumulate(format!("{}.bias", self.name), Tensor { shape: vec![co], data: db });
        dx
    }
}

impl<T: Scalar> Params<T> for Conv2d<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        f(format!("{}.weight", self.name), &self.weight, true);
        f(format!("{}.bias", self.name), &self.bias, true);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        f(format!("{}.weight", self.name), &mut self.weight, true);
        f(format!("{}.bias", self.name), &mut self.bias, true);
    }
}

/// `floor((len + 2·pad − kernel) / stride) + 1`, or `None` when the window does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: isize) -> Option<usize> {
    let span = len as isize + 2 * pad - kernel as isize;
    (span >= 0).then(|| span as usize / stride + 1)
}

pub struct BatchNorm2d<T> {
    pub name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
}

pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }

    pub fn forward_eval(&self, x: &mut Tensor4<T>) {
        let plane = x.plane_len();
        for n in 0..x.n {
            for (c, chunk) in x.item_mut(n).chunks_exact_mut(plane).enumerate() {
                let scale = self.gamma.data[c] / (self.running_var.data[c] + self.eps).sqrt();
                let shift = self.beta.data[c] - self.running_mean.data[c] * scale;
                for v in chunk {
                    *v = *v * scale + shift;
                }
            }
        }
    }

    /// Normalizes with batch statistics in place and updates the running estimates.
    pub fn forward_train(&mut self, x: &mut Tensor4<T>) -> BnCache<T> {
        let plane = x.plane_len();
        let count = x.n * plane;
        let m = T::lit(count as f64);
        let mut inv_std = vec![T::zero(); x.c];
        let mut xhat = vec![T::zero(); x.data.len()];
        for c in 0..x.c {
            let chunks = || (0..x.n).map(|n| &x.item(n)[c * plane..(c + 1) * plane]);
            let mean = chunks().flatten().copied().sum::<T>() / m;
            let var = chunks().flatten().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let is = T::one() / (var + self.eps).sqrt();
            inv_std[c] = is;
            let unbiased = if count > 1 { var * m / (m - T::one()) } else { var };
            let mo = self.momentum;
            self.running_mean.data[c] = (T::one() - mo) * self.running_mean.data[c] + mo * mean;
            self.running_var.data[c] = (T::one() - mo) * self.running_var.data[c] + mo * unbiased;
            let (g, b) = (self.gamma.data[c], self.beta.data[c]);
            for n in 0..x.n {
                let off = n * x.item_len() + c * plane;
                for i in off..off + plane {
                    let h = (x.data[i] - mean) * is;
                    xhat[i] = h;
                    x.data[i] = g * h + b;
                }
            }
        }
        BnCache { xhat, inv_std }
    }

    /// Turns `dy` into the input gradient in place.
    pub fn backward(&self, cache: &BnCache<T>, dy: &mut Tensor4<T>, grads: &mut Gradients<T>) {
        let plane = dy.plane_len();
        let m = T::lit((dy.n * plane) as f64);
        let mut dgamma = vec![T::zero(); dy.c];
        let mut dbeta = vec![T::zero(); dy.c];
        let item = dy.item_len();
        for c in 0..dy.c {
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for n in 0..dy.n {
                let off = n * item + c * plane;
                for i in off..off + plane {
                    sg = sg + dy.data[i] * cache.xhat[i];
                    sb = sb + dy.data[i];
                }
            }
            dgamma[c] = sg;
            dbeta[c] = sb;
            let k = self.gamma.data[c] * cache.inv_std[c] / m;
            for n in 0..dy.n {
                let off = n * item + c * plane;
                for i in off..off + plane {
                    dy.data[i] = k * (m * dy.data[i] - sb - cache.xhat[i] * sg);
                }
            }
        }
        let c = dy.c;
        grads.accumulate(format!("{}.gamma", self.name), Tensor { shape: vec![c], data: dgamma });
        grads.accumulate(format!("{}.beta", self.name), Tensor { shape: vec![c], data: dbeta });
    }
}

impl<T: Scalar> Params<T> for BatchNorm2d<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        f(format!("{}.gamma", self.name), &self.gamma, true);
        f(format!("{}.beta", self.name), &self.beta, true);
        f(format!("{}.running_mean", self.name), &self.running_mean, false);
        f(format!("{}.running_var", self.name), &self.running_var, false);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        f(format!("{}.gamma", self.name), &mut self.gamma, true);
        f(format!("{}.beta", self.name), &mut self.beta, true);
        f(format!("{}.running_mean", self.name), &mut self.running_mean, false);
        f(format!("{}.running_var", self.name), &mut self.running_var, false);
    }
}

pub fn relu_inplace<T: Scalar>(data: &mut [T]) {
    for v in data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the forward output was not positive.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Average pooling that divides by the number of in-bounds elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvgPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl AvgPool2d {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        conv_out_len(h, self.kernel.0, self.stride.0, self.padding.0 as isize)
            .zip(conv_out_len(w, self.kernel.1, self.stride.1, self.padding.1 as isize))
            .ok_or_else(|| Error::ShapeMismatch(format!("pool {:?} too large for {h}×{w}", self.kernel)))
    }

    fn window(&self, o: usize, dim: usize, axis: usize) -> (usize, usize) {
        let (k, s, p) = match axis {
            0 => (self.kernel.0, self.stride.0, self.padding.0),
            _ => (self.kernel.1, self.stride.1, self.padding.1),
        };
        let start = (o * s) as isize - p as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + k as isize).max(0) as usize).min(dim);
        (lo, hi)
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (oh, ow) = self.output_hw(x.h, x.w)?;
        let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
        let planes = x.n * x.c;
        for p in 0..planes {
            let src = &x.data[p * x.h * x.w..(p + 1) * x.h * x.w];
            let dst = &mut y.data[p * oh * ow..(p + 1) * oh * ow];
            for r in 0..oh {
                let (r0, r1) = self.window(r, x.h, 0);
                for c in 0..ow {
                    let (c0, c1) = self.window(c, x.w, 1);
                    let mut acc = T::zero();
                    for i in r0..r1 {
                        for v in &src[i * x.w + c0..i * x.w + c1] {
                            acc = acc + *v;
                        }
                    }
                    let count = (r1 - r0) * (c1 - c0);
                    dst[r * ow + c] = if count > 0 { acc / T::lit(count as f64) } else { T::zero() };
                }
            }
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(&self, input_dims: [usize; 4], dy: &Tensor4<T>) -> Tensor4<T> {
        let [n, ch, h, w] = input_dims;
        let mut dx = Tensor4::zeros(n, ch, h, w);
        let (oh, ow) = (dy.h, dy.w);
        for p in 0..n * ch {
            let src = &dy.data[p * oh * ow..(p + 1) * oh * ow];
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for r in 0..oh {
                let (r0, r1) = self.window(r, h, 0);
                for c in 0..ow {
                    let (c0, c1) = self.window(c, w, 1);
                    let count = (r1 - r0) * (c1 - c0);
                    if count == 0 {
                        continue;
                    }
                    let g = src[r * ow + c] / T::lit(count as f64);
                    for i in r0..r1 {
                        for v in &mut dst[i * w + c0..i * w + c1] {
                            *v = *v + g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Averages over `floor(i·in/out) .. ceil((i+1)·in/out)` bins per output cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveAvgPool2d {
    pub output: (usize, usize),
}

fn adaptive_bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = i * input / output;
    let hi = ((i + 1) * input).div_ceil(output);
    (lo, hi)
}

impl AdaptiveAvgPool2d {
    pub fn forward<T: Scalar>(&self, x: &Tensor4<T>) -> Tensor4<T> {
        let (oh, ow) = self.output;
        let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
        for p in 0..x.n * x.c {
            let src = &x.data[p * x.h * x.w..(p + 1) * x.h * x.w];
            for r in 0..oh {
                let (r0, r1) = adaptive_bin(r, x.h, oh);
                for c in 0..ow {
                    let (c0, c1) = adaptive_bin(c, x.w, ow);
                    let mut acc = T::zero();
                    for i in r0..r1 {
                        for v in &src[i * x.w + c0..i * x.w + c1] {
                            acc = acc + *v;
                        }
                    }
                    y.data[p * oh * ow + r * ow + c] = acc / T::lit(((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(&self, input_dims: [usize; 4], dy: &Tensor4<T>) -> Tensor4<T> {
        let [n, ch, h, w] = input_dims;
        let (oh, ow) = self.output;
        let mut dx = Tensor4::zeros(n, ch, h, w);
        for p in 0..n * ch {
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for r in 0..oh {
                let (r0, r1) = adaptive_bin(r, h, oh);
                for c in 0..ow {
                    let (c0, c1) = adaptive_bin(c, w, ow);
                    let g = dy.data[p * oh * ow + r * ow + c] / T::lit(((r1 - r0) * (c1 - c0)) as f64);
                    for i in r0..r1 {
                        for v in &mut dst[i * w + c0..i * w + c1] {
                            *v = *v + g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer; inputs are `n × in` row-major.
pub struct Linear<T> {
    pub name: String,
    /// `[out, in]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, seed: u64) -> Self {
        let bound = fan_in_bound(inputs);
        Self {
            name: name.to_string(),
            weight: uniform_init(&format!("{name}.weight"), &[outputs, inputs], bound, seed),
            bias: uniform_init(&format!("{name}.bias"), &[outputs], bound, seed),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        if x.len() != n * self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected {} features per row, got {}",
                self.name,
                self.inputs(),
                x.len() / n.max(1)
            )));
        }
        let out = self.outputs();
        let mut y: Vec<T> = (0..n).flat_map(|_| self.bias.data.iter().copied()).collect();
        matmul(n, self.inputs(), out, x, false, &self.weight.data, true, T::one(), &mut y);
        Ok(y)
    }

    pub fn backward(&self, x: &[T], dy: &[T], n: usize, grads: &mut Gradients<T>) -> Vec<T> {
        let (inp, out) = (self.inputs(), self.outputs());
        let mut dw = vec![T::zero(); out * inp];
        matmul(out, n, inp, dy, true, x, false, T::zero(), &mut dw);
        let mut db = vec![T::zero(); out];
        for row in dy.chunks_exact(out) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d = *d + g;
            }
        }
        let mut dx = vec![T::zero(); n * inp];
        matmul(n, out, inp, dy, false, &self.weight.data, false, T::zero(), &mut dx);
        grads.accumulate(format!("{}.weight", self.name), Tensor { shape: vec![out, inp], data: dw });
        grads.accumulate(format!("{}.bias", self.name), Tensor { shape: vec![out], data: db });
        dx
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        f(format!("{}.weight", self.name), &self.weight, true);
        f(format!("{}.bias", self.name), &self.bias, true);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        f(format!("{}.weight", self.name), &mut self.weight, true);
        f(format!("{}.bias", self.name), &mut self.bias, true);
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Channel gating from a bottlenecked transform of globally averaged channels.
pub struct SqueezeExcite<T> {
    pub name: String,
    pub reduce: Linear<T>,
    pub expand: Linear<T>,
}

pub struct SeCache<T> {
    squeezed: Vec<T>,
    hidden: Vec<T>,
    gate: Vec<T>,
}

impl<T: Scalar> SqueezeExcite<T> {
    pub fn new(name: &str, channels: usize, reduction: usize, seed: u64) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        Self {
            name: name.to_string(),
            reduce: Linear::new(&format!("{name}.reduce"), channels, hidden, seed),
            expand: Linear::new(&format!("{name}.expand"), hidden, channels, seed),
        }
    }

    fn gates(&self, x: &Tensor4<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let plane = x.plane_len();
        let inv = T::one() / T::lit(plane as f64);
        let squeezed: Vec<T> = x
            .data
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let mut hidden = self.reduce.forward(&squeezed, x.n)?;
        relu_inplace(&mut hidden);
        let gate = self.expand.forward(&hidden, x.n)?.into_iter().map(sigmoid).collect();
        Ok((squeezed, hidden, gate))
    }

    fn apply(x: &mut Tensor4<T>, gate: &[T]) {
        let plane = x.plane_len();
        for (p, &g) in x.data.chunks_exact_mut(plane).zip(gate) {
            for v in p {
                *v = *v * g;
            }
        }
    }

    pub fn forward_eval(&self, mut x: Tensor4<T>) -> Result<Tensor4<T>> {
        let (_, _, gate) = self.gates(&x)?;
        Self::apply(&mut x, &gate);
        Ok(x)
    }

    /// Returns the gated output, the cache, and leaves `x` (the block input) to the caller.
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, SeCache<T>)> {
        let (squeezed, hidden, gate) = self.gates(x)?;
        let mut y = x.clone();
        Self::apply(&mut y, &gate);
        Ok((y, SeCache { squeezed, hidden, gate }))
    }

    pub fn backward(
        &self,
        x: &Tensor4<T>,
        cache: &SeCache<T>,
        dy: &Tensor4<T>,
        grads: &mut Gradients<T>,
    ) -> Tensor4<T> {
        let plane = x.plane_len();
        let mut dx = dy.clone();
        SqueezeExcite::apply(&mut dx, &cache.gate);
        let dpre: Vec<T> = x
            .data
            .chunks_exact(plane)
            .zip(dy.data.chunks_exact(plane))
            .zip(&cache.gate)
            .map(|((xp, gp), &g)| {
                let dg: T = xp.iter().zip(gp).map(|(&a, &b)| a * b).sum();
                dg * g * (T::one() - g)
            })
            .collect();
        let mut dhidden = self.expand.backward(&cache.hidden, &dpre, x.n, grads);
        relu_backward(&cache.hidden, &mut dhidden);
        let dsq = self.reduce.backward(&cache.squeezed, &dhidden, x.n, grads);
        let inv = T::one() / T::lit(plane as f64);
        for (p, &d) in dx.data.chunks_exact_mut(plane).zip(&dsq) {
            let add = d * inv;
            for v in p {
                *v = *v + add;
            }
        }
        dx
    }
}

impl<T: Scalar> Params<T> for SqueezeExcite<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        self.reduce.visit_mut(f);
        self.expand.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 % 13) as f64) * 0.1 - 0.5).collect()
    }

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let (co, ci, kh, kw) = (
            conv.weight.shape[0],
            conv.weight.shape[1],
            conv.weight.shape[2],
            conv.weight.shape[3],
        );
        let (oh, ow) = conv.output_hw(x.h, x.w).unwrap();
        let mut y = Tensor4::zeros(x.n, co, oh, ow);
        for n in 0..x.n {
            for o in 0..co {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = conv.bias.data[o];
                        for i in 0..ci {
                            for a in 0..kh {
                                for b in 0..kw {
                                    let ih = (r * conv.stride.0 + a) as isize - conv.padding.0;
                                    let iw = (c * conv.stride.1 + b) as isize - conv.padding.1;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < x.h && (iw as usize) < x.w {
                                        acc += conv.weight.data[((o * ci + i) * kh + a) * kw + b]
                                            * x.data[((n * ci + i) * x.h + ih as usize) * x.w + iw as usize];
                                    }
                                }
                            }
                        }
                        y.data[((n * co + o) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = Tensor4::from_vec(2, 3, 7, 11, seq(2 * 3 * 7 * 11)).unwrap();
        for (kernel, stride, pad) in [
            ((3, 5), (2, 3), (1, 2)),
            ((1, 1), (1, 1), (0, 0)),
            ((1, 1), (1, 2), (-1, -1)),
            ((5, 5), (1, 2), (1, 1)),
        ] {
            let conv = Conv2d::<f64>::new("c", 3, 4, kernel, stride, pad, 9);
            let got = conv.forward(&x).unwrap();
            let want = naive_conv(&conv, &x);
            assert_eq!(got.dims(), want.dims());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let conv = Conv2d::<f32>::new("c", 3, 4, (3, 3), (1, 1), (1, 1), 0);
        let x = Tensor4::zeros(1, 2, 5, 5);
        assert!(matches!(conv.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn avgpool_excludes_padding() {
        let pool = AvgPool2d { kernel: (3, 3), stride: (1, 1), padding: (1, 1) };
        let x = Tensor4::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data, vec![2.5; 4]);
    }

    #[test]
    fn adaptive_pool_bins() {
        let p = AdaptiveAvgPool2d { output: (2, 2) };
        let x = Tensor4::from_vec(1, 1, 1, 3, vec![1.0, 2.0, 4.0]).unwrap();
        // rows: single input row repeated; cols: [0,2) and [1,3)
        assert_eq!(p.forward(&x).data, vec![1.5, 3.0, 1.5, 3.0]);
        assert_eq!(adaptive_bin(0, 14, 4), (0, 4));
        assert_eq!(adaptive_bin(3, 14, 4), (10, 14));
    }

    #[test]
    fn linear_param_count() {
        let l = Linear::<f32>::new("fc3", 512, 1, 0);
        assert_eq!(l.weight.len() + l.bias.len(), 513);
    }

    #[test]
    fn se_with_saturated_gate_is_identity() {
        let mut se = SqueezeExcite::<f64>::new("se", 16, 4, 3);
        se.expand.weight.data.fill(0.0);
        se.expand.bias.data.fill(1000.0);
        let x = Tensor4::from_vec(2, 16, 3, 5, seq(2 * 16 * 15)).unwrap();
        assert_eq!(se.forward_eval(x.clone()).unwrap(), x);
    }

    #[test]
    fn init_is_seeded_per_name() {
        let a = uniform_init::<f32>("x.weight", &[10], 0.5, 1);
        let b = uniform_init::<f32>("x.weight", &[10], 0.5, 1);
        let c = uniform_init::<f32>("y.weight", &[10], 0.5, 1);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data.iter().all(|v| v.abs() <= 0.5));
    }
}
