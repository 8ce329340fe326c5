//! Network layers with hand-written backward passes.
//!
//! Activations are batch-major `Vec<f64>`; convolutional layers see each
//! sample as `channels × length`, row-major. Training-mode `forward` caches
//! what `backward` needs; `infer` leaves the layer untouched.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use super::linalg::{gemm, Op};
use crate::rng::Rng;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.99;
/// Rates at or above 1 would drop every unit; they are clamped here.
pub(crate) const MAX_DROPOUT_RATE: f64 = 0.99;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Which parameter family a tensor belongs to, for gradient reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum ParamClass {
    ConvKernel,
    BatchNormScale,
    BatchNormShift,
    DenseWeight,
    DenseBias,
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
    cache_x: Vec<f64>,
}

impl Dense {
    /// LeCun-normal init, the self-normalizing recipe for SELU.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).unwrap();
        let w = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self {
            inputs,
            outputs,
            w,
            b: vec![0.0; outputs],
            gw: vec![0.0; inputs * outputs],
            gb: vec![0.0; outputs],
            cache_x: Vec::new(),
        }
    }

    pub fn infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.b);
        }
        gemm(batch, self.inputs, self.outputs, x, Op::N, &self.w, Op::T, 1.0, &mut y);
        y
    }

    pub fn forward(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        self.cache_x.clear();
        self.cache_x.extend_from_slice(x);
        self.infer(x, batch)
    }

    pub fn backward(&mut self, g: &[f64], batch: usize) -> Vec<f64> {
        gemm(self.outputs, batch, self.inputs, g, Op::T, &self.cache_x, Op::N, 1.0, &mut self.gw);
        for row in g.chunks_exact(self.outputs) {
            for (acc, v) in self.gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut dx = vec![0.0; batch * self.inputs];
        gemm(batch, self.outputs, self.inputs, g, Op::N, &self.w, Op::N, 0.0, &mut dx);
        dx
    }
}

/// 1-D convolution, stride 1, "same" zero padding, no bias (a batch norm
/// always follows).
#[derive(Debug, Clone)]
pub(crate) struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub len: usize,
    pub w: Vec<f64>,
    pub gw: Vec<f64>,
    cache_cols: Vec<f64>,
}

impl Conv1d {
    /// Glorot-uniform init over `fan_in = cin·k`, `fan_out = cout·k`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, len: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / ((in_channels + out_channels) * kernel) as f64).sqrt();
        let uniform = Uniform::new_inclusive(-limit, limit).unwrap();
        let n = out_channels * in_channels * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            len,
            w: (0..n).map(|_| uniform.sample(rng)).collect(),
            gw: vec![0.0; n],
            cache_cols: Vec::new(),
        }
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn col_len(&self) -> usize {
        self.in_channels * self.kernel * self.len
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (l, k, pl) = (self.len, self.kernel, self.pad_left() as isize);
        for ci in 0..self.in_channels {
            let xs = &x[ci * l..(ci + 1) * l];
            for j in 0..k {
                let row = &mut col[(ci * k + j) * l..(ci * k + j + 1) * l];
                let shift = j as isize - pl;
                for (t, out) in row.iter_mut().enumerate() {
                    let src = t as isize + shift;
                    *out = if src >= 0 && (src as usize) < l { xs[src as usize] } else { 0.0 };
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (l, k, pl) = (self.len, self.kernel, self.pad_left() as isize);
        for ci in 0..self.in_channels {
            for j in 0..k {
                let row = &col[(ci * k + j) * l..(ci * k + j + 1) * l];
                let shift = j as isize - pl;
                for (t, v) in row.iter().enumerate() {
                    let src = t as isize + shift;
                    if src >= 0 && (src as usize) < l {
                        dx[ci * l + src as usize] += v;
                    }
                }
            }
        }
    }

    fn run(&self, x: &[f64], batch: usize, cols: &mut [f64]) -> Vec<f64> {
        let (cin, cout, l) = (self.in_channels, self.out_channels, self.len);
        let ck = cin * self.kernel;
        let cl = self.col_len();
        let mut y = vec![0.0; batch * cout * l];
        for s in 0..batch {
            let col = &mut cols[s * cl..(s + 1) * cl];
            self.im2col(&x[s * cin * l..(s + 1) * cin * l], col);
            gemm(cout, ck, l, &self.w, Op::N, col, Op::N, 0.0, &mut y[s * cout * l..(s + 1) * cout * l]);
        }
        y
    }

    pub fn infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut cols = vec![0.0; batch * self.col_len()];
        self.run(x, batch, &mut cols)
    }

    pub fn forward(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut cols = std::mem::take(&mut self.cache_cols);
        cols.resize(batch * self.col_len(), 0.0);
        let y = self.run(x, batch, &mut cols);
        self.cache_cols = cols;
        y
    }

    pub fn backward(&mut self, g: &[f64], batch: usize) -> Vec<f64> {
        let (cin, cout, l) = (self.in_channels, self.out_channels, self.len);
        let ck = cin * self.kernel;
        let cl = self.col_len();
        let mut dx = vec![0.0; batch * cin * l];
        let mut dcol = vec![0.0; cl];
        for s in 0..batch {
            let gs = &g[s * cout * l..(s + 1) * cout * l];
            let col = &self.cache_cols[s * cl..(s + 1) * cl];
            gemm(cout, l, ck, gs, Op::N, col, Op::T, 1.0, &mut self.gw);
            gemm(ck, cout, l, &self.w, Op::T, gs, Op::N, 0.0, &mut dcol);
            self.col2im(&dcol, &mut dx[s * cin * l..(s + 1) * cin * l]);
        }
        dx
    }
}

/// Per-channel batch normalization over (batch, position).
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    pub channels: usize,
    pub len: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub ggamma: Vec<f64>,
    pub gbeta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache_xhat: Vec<f64>,
    cache_inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            ggamma: vec![0.0; channels],
            gbeta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache_xhat: Vec::new(),
            cache_inv_std: Vec::new(),
        }
    }

    fn channel_slices(&self, batch: usize, ch: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let (c, l) = (self.channels, self.len);
        (0..batch).map(move |s| (s * c + ch) * l..(s * c + ch + 1) * l)
    }

    pub fn infer(&self, x: &[f64], _batch: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        for (i, v) in y.iter_mut().enumerate() {
            let ch = (i / self.len) % self.channels;
            let inv = 1.0 / (self.running_var[ch] + BN_EPS).sqrt();
            *v = (*v - self.running_mean[ch]) * inv * self.gamma[ch] + self.beta[ch];
        }
        y
    }

    /// Normalized activations before scale/shift, using batch statistics.
    pub fn normalize_batch(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        let n = (batch * self.len) as f64;
        let mut xhat = vec![0.0; x.len()];
        self.cache_inv_std = vec![0.0; self.channels];
        for ch in 0..self.channels {
            let mut sum = 0.0;
            for r in self.channel_slices(batch, ch) {
                sum += x[r].iter().sum::<f64>();
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for r in self.channel_slices(batch, ch) {
                ss += x[r].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            let var = ss / n;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            self.cache_inv_std[ch] = inv;
            let ranges: Vec<_> = self.channel_slices(batch, ch).collect();
            for r in ranges {
                for i in r {
                    xhat[i] = (x[i] - mean) * inv;
                }
            }
            self.running_mean[ch] = BN_MOMENTUM * self.running_mean[ch] + (1.0 - BN_MOMENTUM) * mean;
            self.running_var[ch] = BN_MOMENTUM * self.running_var[ch] + (1.0 - BN_MOMENTUM) * var;
        }
        xhat
    }

    pub fn forward(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        let xhat = self.normalize_batch(x, batch);
        let mut y = xhat.clone();
        for (i, v) in y.iter_mut().enumerate() {
            let ch = (i / self.len) % self.channels;
            *v = *v * self.gamma[ch] + self.beta[ch];
        }
        self.cache_xhat = xhat;
        y
    }

    pub fn backward(&mut self, g: &[f64], batch: usize) -> Vec<f64> {
        let n = (batch * self.len) as f64;
        let mut dx = vec![0.0; g.len()];
        for ch in 0..self.channels {
            let ranges: Vec<_> = self.channel_slices(batch, ch).collect();
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for r in &ranges {
                for i in r.clone() {
                    sum_g += g[i];
                    sum_gx += g[i] * self.cache_xhat[i];
                }
            }
            self.gbeta[ch] += sum_g;
            self.ggamma[ch] += sum_gx;
            let scale = self.gamma[ch] * self.cache_inv_std[ch] / n;
            for r in ranges {
                for i in r {
                    dx[i] = scale * (n * g[i] - sum_g - self.cache_xhat[i] * sum_gx);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Selu {
    cache_x: Vec<f64>,
}

impl Selu {
    pub fn infer(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| selu(v)).collect()
    }

    pub fn forward(&mut self, x: &[f64]) -> Vec<f64> {
        self.cache_x = x.to_vec();
        Self::infer(x)
    }

    pub fn backward(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.cache_x).map(|(g, &x)| g * selu_grad(x)).collect()
    }
}

/// Width-2, stride-2 max pooling; an odd trailing position is dropped.
#[derive(Debug, Clone)]
pub(crate) struct MaxPool {
    pub channels: usize,
    pub len: usize,
    cache_arg: Vec<usize>,
}

impl MaxPool {
    pub fn new(channels: usize, len: usize) -> Self {
        Self { channels, len, cache_arg: Vec::new() }
    }

    pub fn out_len(&self) -> usize {
        self.len / 2
    }

    fn run(&self, x: &[f64], batch: usize, mut arg: Option<&mut Vec<usize>>) -> Vec<f64> {
        let (l, ol) = (self.len, self.out_len());
        let mut y = Vec::with_capacity(batch * self.channels * ol);
        for plane in 0..batch * self.channels {
            let base = plane * l;
            for t in 0..ol {
                let (i0, i1) = (base + 2 * t, base + 2 * t + 1);
                let pick = if x[i1] > x[i0] { i1 } else { i0 };
                y.push(x[pick]);
                if let Some(a) = arg.as_deref_mut() {
                    a.push(pick);
                }
            }
        }
        y
    }

    pub fn infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.run(x, batch, None)
    }

    pub fn forward(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut arg = std::mem::take(&mut self.cache_arg);
        arg.clear();
        let y = self.run(x, batch, Some(&mut arg));
        self.cache_arg = arg;
        y
    }

    pub fn backward(&self, g: &[f64], batch: usize) -> Vec<f64> {
        let mut dx = vec![0.0; batch * self.channels * self.len];
        for (gv, &i) in g.iter().zip(&self.cache_arg) {
            dx[i] += gv;
        }
        dx
    }
}

/// Dropout that keeps SELU activations at zero mean and unit variance:
/// dropped units are set to the SELU saturation value, then an affine
/// correction restores the moments.
#[derive(Debug, Clone)]
pub(crate) struct AlphaDropout {
    pub rate: f64,
    cache_keep: Vec<bool>,
    cache_on: bool,
}

impl AlphaDropout {
    pub fn new(rate: f64) -> Self {
        Self { rate: rate.clamp(0.0, MAX_DROPOUT_RATE), cache_keep: Vec::new(), cache_on: false }
    }

    pub fn is_active(&self) -> bool {
        self.rate > 0.0
    }

    /// `(a, b, alpha')` such that `y = a·x + b` for kept units and
    /// `y = a·alpha' + b` for dropped ones.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        let q = 1.0 - self.rate;
        let alpha_p = -SELU_LAMBDA * SELU_ALPHA;
        let a = (q + alpha_p * alpha_p * q * (1.0 - q)).powf(-0.5);
        let b = -a * alpha_p * (1.0 - q);
        (a, b, alpha_p)
    }

    /// Applies a freshly sampled mask.
    pub fn sample(&self, x: &[f64], rng: &mut Rng) -> (Vec<f64>, Vec<bool>) {
        if !self.is_active() {
            return (x.to_vec(), vec![true; x.len()]);
        }
        let (a, b, alpha_p) = self.coefficients();
        let q = 1.0 - self.rate;
        let keep: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() < q).collect();
        let y = x.iter().zip(&keep).map(|(&v, &k)| if k { a * v + b } else { a * alpha_p + b }).collect();
        (y, keep)
    }

    /// Training-mode pass; `None` disables dropout for this pass.
    pub fn forward(&mut self, x: &[f64], rng: Option<&mut Rng>) -> Vec<f64> {
        match rng {
            Some(rng) if self.is_active() => {
                let (y, keep) = self.sample(x, rng);
                self.cache_keep = keep;
                self.cache_on = true;
                y
            }
            _ => {
                self.cache_on = false;
                x.to_vec()
            }
        }
    }

    pub fn backward(&self, g: &[f64]) -> Vec<f64> {
        if !self.cache_on {
            return g.to_vec();
        }
        let (a, _, _) = self.coefficients();
        g.iter().zip(&self.cache_keep).map(|(g, &k)| if k { a * g } else { 0.0 }).collect()
    }
}
