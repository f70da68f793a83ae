//! Layer primitives with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during a `Mode::Train`
//! forward call; `backward` consumes that cache and accumulates parameter
//! gradients into [`Param::grad`]. Gradients are summed over the batch in
//! item order, so results do not depend on scheduling.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter or persistent buffer (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl Param {
    pub fn filled(shape: &[usize], v: f32, trainable: bool) -> Self {
        let len = shape.iter().product();
        Param {
            value: vec![v; len],
            grad: vec![0.0; len],
            shape: shape.to_vec(),
            trainable,
        }
    }

    /// Zero-mean normal init with `std = sqrt(2 / fan_in)`.
    pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        let mut p = Param::filled(shape, 0.0, true);
        for v in &mut p.value {
            *v = dist.sample(rng) as f32;
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
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Visits every parameter and buffer under a dotted path prefix.
pub trait Visit {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn take_cache<T>(cache: &mut Option<T>, layer: &str) -> T {
    cache
        .take()
        .unwrap_or_else(|| panic!("{layer}: backward called without a training forward pass"))
}

/// Square convolution, stride 1, "same" zero padding. Kernel size 1 or 3.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    /// Layout `[out_c][in_c][k][k]`.
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, bias: bool, rng: &mut R) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels are supported");
        let fan_in = in_c * k * k;
        Conv2d {
            in_c,
            out_c,
            k,
            weight: Param::he_normal(&[out_c, in_c, k, k], fan_in, rng),
            bias: bias.then(|| Param::filled(&[out_c], 0.0, true)),
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, col: &mut [f32]) {
        let pad = (self.k / 2) as isize;
        let plane = h * w;
        for ci in 0..self.in_c {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        let out_row = &mut dst[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize) as usize;
                        out_row[..x0].iter_mut().for_each(|v| *v = 0.0);
                        out_row[x1..].iter_mut().for_each(|v| *v = 0.0);
                        let s0 = (x0 as isize + dx) as usize;
                        out_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, dx_out: &mut [f32]) {
        let pad = (self.k / 2) as isize;
        let plane = h * w;
        for ci in 0..self.in_c {
            let dst = &mut dx_out[ci * plane..(ci + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &col[row * plane..(row + 1) * plane];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize) as usize;
                        let s0 = (x0 as isize + dx) as usize;
                        let dst_row = &mut dst[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                        let src_row = &src[y * w + x0..y * w + x1];
                        for (d, s) in dst_row.iter_mut().zip(src_row) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv input channel mismatch");
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let kk = self.in_c * self.k * self.k;
        let mut out = Tensor::zeros(x.n, self.out_c, h, w);
        let mut col = if self.k == 1 { Vec::new() } else { vec![0.0; kk * plane] };
        for i in 0..x.n {
            let src = x.item(i);
            let b: &[f32] = if self.k == 1 {
                src
            } else {
                self.im2col(src, h, w, &mut col);
                &col
            };
            let dst = out.item_mut(i);
            gemm(self.out_c, kk, plane, &self.weight.value, false, b, false, dst, false);
            if let Some(bias) = &self.bias {
                for (co, bv) in bias.value.iter().enumerate() {
                    dst[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += *bv);
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = take_cache(&mut self.cache, "conv2d");
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let kk = self.in_c * self.k * self.k;
        let mut dx = Tensor::zeros(x.n, x.c, h, w);
        let mut col = if self.k == 1 { Vec::new() } else { vec![0.0; kk * plane] };
        let mut dcol = vec![0.0; kk * plane];
        for i in 0..x.n {
            let g = dy.item(i);
            if let Some(bias) = &mut self.bias {
                for (co, gb) in bias.grad.iter_mut().enumerate() {
                    *gb += g[co * plane..(co + 1) * plane].iter().sum::<f32>();
                }
            }
            let b: &[f32] = if self.k == 1 {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, &mut col);
                &col
            };
            // dW += dY · colᵀ
            gemm(self.out_c, plane, kk, g, false, b, true, &mut self.weight.grad, true);
            if self.k == 1 {
                gemm(kk, self.out_c, plane, &self.weight.value, true, g, false, dx.item_mut(i), false);
            } else {
                gemm(kk, self.out_c, plane, &self.weight.value, true, g, false, &mut dcol, false);
                self.col2im(&dcol, h, w, dx.item_mut(i));
            }
        }
        dx
    }
}

impl Visit for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

/// Per-channel batch normalization over `(n, h, w)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(&[channels], 1.0, true),
            beta: Param::filled(&[channels], 0.0, true),
            running_mean: Param::filled(&[channels], 0.0, false),
            running_var: Param::filled(&[channels], 1.0, false),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.c, self.channels, "batch-norm channel mismatch");
        let plane = x.plane();
        let m = (x.n * plane) as f64;
        let mut out = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut inv_stds = vec![0.0f32; x.c];
        for c in 0..x.c {
            let (mean, inv_std) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for i in 0..x.n {
                        sum += x.channel(i, c).iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut sq = 0.0f64;
                    for i in 0..x.n {
                        sq += x
                            .channel(i, c)
                            .iter()
                            .map(|&v| {
                                let d = v as f64 - mean;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    let var = sq / m;
                    let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                    let mom = self.momentum as f64;
                    let rm = &mut self.running_mean.value[c];
                    *rm = ((1.0 - mom) * *rm as f64 + mom * mean) as f32;
                    let rv = &mut self.running_var.value[c];
                    *rv = ((1.0 - mom) * *rv as f64 + mom * unbiased) as f32;
                    (mean as f32, (1.0 / (var + self.eps as f64).sqrt()) as f32)
                }
                Mode::Eval => (
                    self.running_mean.value[c],
                    1.0 / (self.running_var.value[c] + self.eps).sqrt(),
                ),
            };
            inv_stds[c] = inv_std;
            for i in 0..x.n {
                let start = (i * x.c + c) * plane;
                let src = &x.data[start..start + plane];
                let dst = &mut out.data[start..start + plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = (*s - mean) * inv_std;
                }
            }
        }
        if mode == Mode::Train {
            let xhat = out.clone();
            self.cache = Some(BnCache {
                xhat,
                inv_std: inv_stds,
            });
        }
        for c in 0..x.c {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..x.n {
                let start = (i * x.c + c) * plane;
                out.data[start..start + plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * g + b);
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = take_cache(&mut self.cache, "batch-norm");
        let xhat = &cache.xhat;
        let plane = dy.plane();
        let m = (dy.n * plane) as f64;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..dy.c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for i in 0..dy.n {
                let start = (i * dy.c + c) * plane;
                for (g, xh) in dy.data[start..start + plane]
                    .iter()
                    .zip(&xhat.data[start..start + plane])
                {
                    sum_dy += *g as f64;
                    sum_dy_xhat += (*g * *xh) as f64;
                }
            }
            self.gamma.grad[c] += sum_dy_xhat as f32;
            self.beta.grad[c] += sum_dy as f32;
            let scale = self.gamma.value[c] * cache.inv_std[c];
            let mean_dy = (sum_dy / m) as f32;
            let mean_dy_xhat = (sum_dy_xhat / m) as f32;
            for i in 0..dy.n {
                let start = (i * dy.c + c) * plane;
                for ((d, g), xh) in dx.data[start..start + plane]
                    .iter_mut()
                    .zip(&dy.data[start..start + plane])
                    .zip(&xhat.data[start..start + plane])
                {
                    *d = scale * (*g - mean_dy - *xh * mean_dy_xhat);
                }
            }
        }
        dx
    }
}

impl Visit for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Train {
            self.mask = Some(x.data.iter().map(|&v| v > 0.0).collect());
        }
        x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Tensor {
        let mask = take_cache(&mut self.mask, "relu");
        for (g, keep) in dy.data.iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
        dy
    }
}

/// 2×2 max-pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<u32>, [usize; 4])>,
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert!(x.h % 2 == 0 && x.w % 2 == 0, "max-pool needs even spatial dims");
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let mut arg = Vec::with_capacity(out.data.len());
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * x.h * x.w..(nc + 1) * x.h * x.w];
            let dst = &mut out.data[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let base = 2 * y * x.w + 2 * xx;
                    let mut best = base;
                    for off in [base + 1, base + x.w, base + x.w + 1] {
                        if src[off] > src[best] {
                            best = off;
                        }
                    }
                    dst[y * ow + xx] = src[best];
                    arg.push(best as u32);
                }
            }
        }
        if mode == Mode::Train {
            self.argmax = Some((arg, x.shape()));
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (arg, [n, c, h, w]) = take_cache(&mut self.argmax, "max-pool");
        let mut dx = Tensor::zeros(n, c, h, w);
        let op = dy.plane();
        for nc in 0..n * c {
            let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
            for j in 0..op {
                dst[arg[nc * op + j] as usize] += dy.data[nc * op + j];
            }
        }
        dx
    }
}

/// Transposed 2×2 convolution with stride 2 (exact 2× upsampling).
#[derive(Debug, Clone)]
pub struct UpConv2 {
    pub in_c: usize,
    pub out_c: usize,
    /// Layout `[out_c][2][2][in_c]`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl UpConv2 {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, rng: &mut R) -> Self {
        UpConv2 {
            in_c,
            out_c,
            weight: Param::he_normal(&[out_c, 2, 2, in_c], in_c, rng),
            bias: Param::filled(&[out_c], 0.0, true),
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.c, self.in_c, "up-conv input channel mismatch");
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let rows = self.out_c * 4;
        let mut out = Tensor::zeros(x.n, self.out_c, 2 * h, 2 * w);
        let mut tmp = vec![0.0; rows * plane];
        for i in 0..x.n {
            gemm(rows, self.in_c, plane, &self.weight.value, false, x.item(i), false, &mut tmp, false);
            let dst = out.item_mut(i);
            for co in 0..self.out_c {
                let b = self.bias.value[co];
                for a in 0..2 {
                    for bb in 0..2 {
                        let src = &tmp[((co * 2 + a) * 2 + bb) * plane..][..plane];
                        for y in 0..h {
                            let drow = &mut dst[co * 4 * plane + (2 * y + a) * 2 * w..][..2 * w];
                            for xx in 0..w {
                                drow[2 * xx + bb] = src[y * w + xx] + b;
                            }
                        }
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = take_cache(&mut self.cache, "up-conv");
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let rows = self.out_c * 4;
        let mut dx = Tensor::zeros(x.n, x.c, h, w);
        let mut tmp = vec![0.0; rows * plane];
        for i in 0..x.n {
            let g = dy.item(i);
            for co in 0..self.out_c {
                let gplane = &g[co * 4 * plane..(co + 1) * 4 * plane];
                self.bias.grad[co] += gplane.iter().sum::<f32>();
                for a in 0..2 {
                    for bb in 0..2 {
                        let dst = &mut tmp[((co * 2 + a) * 2 + bb) * plane..][..plane];
                        for y in 0..h {
                            let grow = &gplane[(2 * y + a) * 2 * w..][..2 * w];
                            for xx in 0..w {
                                dst[y * w + xx] = grow[2 * xx + bb];
                            }
                        }
                    }
                }
            }
            gemm(rows, plane, self.in_c, &tmp, false, x.item(i), true, &mut self.weight.grad, true);
            gemm(self.in_c, rows, plane, &self.weight.value, true, &tmp, false, dx.item_mut(i), false);
        }
        dx
    }
}

impl Visit for UpConv2 {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Source taps for 2× bilinear upsampling with half-pixel centers.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * in_len as f32 / out_len as f32 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

/// Parameter-free 2× bilinear upsampling.
#[derive(Debug, Clone, Default)]
pub struct BilinearUp2 {
    shape: Option<[usize; 4]>,
}

impl BilinearUp2 {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let (oh, ow) = (2 * x.h, 2 * x.w);
        let ty = bilinear_taps(oh, x.h);
        let tx = bilinear_taps(ow, x.w);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * x.h * x.w..(nc + 1) * x.h * x.w];
            let dst = &mut out.data[nc * oh * ow..(nc + 1) * oh * ow];
            for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (xx, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * x.w + x0] * (1.0 - lx) + src[y0 * x.w + x1] * lx;
                    let bot = src[y1 * x.w + x0] * (1.0 - lx) + src[y1 * x.w + x1] * lx;
                    dst[y * ow + xx] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        if mode == Mode::Train {
            self.shape = Some(x.shape());
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = take_cache(&mut self.shape, "bilinear-up");
        let (oh, ow) = (dy.h, dy.w);
        let ty = bilinear_taps(oh, h);
        let tx = bilinear_taps(ow, w);
        let mut dx = Tensor::zeros(n, c, h, w);
        for nc in 0..n * c {
            let g = &dy.data[nc * oh * ow..(nc + 1) * oh * ow];
            let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
            for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (xx, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let v = g[y * ow + xx];
                    dst[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                    dst[y0 * w + x1] += v * (1.0 - ly) * lx;
                    dst[y1 * w + x0] += v * ly * (1.0 - lx);
                    dst[y1 * w + x1] += v * ly * lx;
                }
            }
        }
        dx
    }
}
