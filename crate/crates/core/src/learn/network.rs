//! Sequential FFNN / 1-D CNN built from a [`ModelSpec`].

use super::layers::{AlphaDropout, BatchNorm, Conv1d, Dense, MaxPool, ParamClass, Selu};
use super::{LearnError, ModelSpec, Result};
use crate::rng::Rng;

/// Output channels of the three convolution blocks.
pub const CONV_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv(Conv1d),
    Norm(BatchNorm),
    Act(Selu),
    Pool(MaxPool),
    Dense(Dense),
    Dropout(AlphaDropout),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) layers: Vec<Layer>,
    input_len: usize,
}

impl Network {
    pub fn build(spec: &ModelSpec, input_len: usize, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let (features, h, dropout) = match *spec {
            ModelSpec::Ffnn { h1, h2, h3, dropout3 } => (input_len, [h1, h2, h3], dropout3),
            ModelSpec::Cnn { k1, k2, k3, h1, h2, h3, dropout3 } => {
                if input_len < 8 {
                    return Err(LearnError::DimensionMismatch { expected: 8, got: input_len });
                }
                let mut len = input_len;
                let mut cin = 1;
                for (&cout, k) in CONV_CHANNELS.iter().zip([k1, k2, k3]) {
                    layers.push(Layer::Conv(Conv1d::new(cin, cout, k, len, rng)));
                    layers.push(Layer::Norm(BatchNorm::new(cout, len)));
                    layers.push(Layer::Act(Selu::default()));
                    let pool = MaxPool::new(cout, len);
                    len = pool.out_len();
                    layers.push(Layer::Pool(pool));
                    cin = cout;
                }
                (cin * len, [h1, h2, h3], dropout3)
            }
            _ => return Err(LearnError::NotANetwork),
        };
        let mut width = features;
        for hidden in h {
            layers.push(Layer::Dense(Dense::new(width, hidden, rng)));
            layers.push(Layer::Act(Selu::default()));
            width = hidden;
        }
        layers.push(Layer::Dropout(AlphaDropout::new(dropout)));
        layers.push(Layer::Dense(Dense::new(width, 1, rng)));
        Ok(Self { layers, input_len })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    fn dropout_index(&self) -> usize {
        self.layers.iter().position(|l| matches!(l, Layer::Dropout(_))).expect("network has a dropout layer")
    }

    /// Training-mode forward pass returning one logit per sample.
    pub(crate) fn forward_train(&mut self, x: &[f64], batch: usize, dropout: Option<&mut Rng>) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut dropout = dropout;
        for layer in &mut self.layers {
            a = match layer {
                Layer::Conv(l) => l.forward(&a, batch),
                Layer::Norm(l) => l.forward(&a, batch),
                Layer::Act(l) => l.forward(&a),
                Layer::Pool(l) => l.forward(&a, batch),
                Layer::Dense(l) => l.forward(&a, batch),
                Layer::Dropout(l) => l.forward(&a, dropout.as_deref_mut()),
            };
        }
        a
    }

    pub(crate) fn backward(&mut self, grad_logits: &[f64], batch: usize) {
        let mut g = grad_logits.to_vec();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Conv(l) => l.backward(&g, batch),
                Layer::Norm(l) => l.backward(&g, batch),
                Layer::Act(l) => l.backward(&g),
                Layer::Pool(l) => l.backward(&g, batch),
                Layer::Dense(l) => l.backward(&g, batch),
                Layer::Dropout(l) => l.backward(&g),
            };
        }
    }

    fn infer_range(&self, x: &[f64], batch: usize, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in &self.layers[range] {
            a = match layer {
                Layer::Conv(l) => l.infer(&a, batch),
                Layer::Norm(l) => l.infer(&a, batch),
                Layer::Act(_) => Selu::infer(&a),
                Layer::Pool(l) => l.infer(&a, batch),
                Layer::Dense(l) => l.infer(&a, batch),
                Layer::Dropout(_) => a,
            };
        }
        a
    }

    /// Deterministic logits: dropout off, batch norm on running statistics.
    pub fn logits(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.infer_range(x, batch, 0..self.layers.len())
    }

    /// Activations entering the dropout layer. Everything before dropout is
    /// deterministic at inference, so Monte-Carlo passes only need to redo
    /// the tail.
    pub(crate) fn features(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.infer_range(x, batch, 0..self.dropout_index())
    }

    /// Logits from pre-dropout features with a freshly sampled mask.
    pub(crate) fn stochastic_tail(&self, features: &[f64], batch: usize, rng: &mut Rng) -> Vec<f64> {
        let d = self.dropout_index();
        let Layer::Dropout(drop) = &self.layers[d] else { unreachable!() };
        let (masked, _) = drop.sample(features, rng);
        self.infer_range(&masked, batch, d + 1..self.layers.len())
    }

    pub fn dropout_rate(&self) -> f64 {
        match &self.layers[self.dropout_index()] {
            Layer::Dropout(d) => d.rate,
            _ => 0.0,
        }
    }

    pub(crate) fn zero_grads(&mut self) {
        self.visit_params(|_, _, g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    /// Visits every trainable tensor with its gradient, in a fixed order.
    pub(crate) fn visit_params(&mut self, mut f: impl FnMut(ParamClass, &mut [f64], &mut [f64])) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => f(ParamClass::ConvKernel, &mut l.w, &mut l.gw),
                Layer::Norm(l) => {
                    f(ParamClass::BatchNormScale, &mut l.gamma, &mut l.ggamma);
                    f(ParamClass::BatchNormShift, &mut l.beta, &mut l.gbeta);
                }
                Layer::Dense(l) => {
                    f(ParamClass::DenseWeight, &mut l.w, &mut l.gw);
                    f(ParamClass::DenseBias, &mut l.b, &mut l.gb);
                }
                _ => {}
            }
        }
    }

    /// Every stored number (trainable tensors, then batch-norm running
    /// statistics) in a fixed order, for persistence.
    pub(crate) fn state_tensors(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        let mut running: Vec<&mut Vec<f64>> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => out.push(&mut l.w),
                Layer::Norm(l) => {
                    out.push(&mut l.gamma);
                    out.push(&mut l.beta);
                    running.push(&mut l.running_mean);
                    running.push(&mut l.running_var);
                }
                Layer::Dense(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                _ => {}
            }
        }
        out.extend(running);
        out
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(|_, p, _| n += p.len());
        n
    }

    /// Zeroes the output layer, so every logit is 0.
    pub fn zero_output_layer(&mut self) {
        if let Some(Layer::Dense(out)) = self.layers.last_mut() {
            out.w.iter_mut().for_each(|v| *v = 0.0);
            out.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits and its gradient w.r.t. the logits.
pub(crate) fn bce_with_logits(logits: &[f64], y: &[u8]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let t = f64::from(t);
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - t) / n
        })
        .collect();
    (loss / n, grad)
}

/// Adam with bias correction folded into the step size.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, moments: Vec::new() }
    }

    pub fn step(&mut self, net: &mut Network) {
        self.t += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        let mut idx = 0;
        net.visit_params(|_, p, g| {
            if moments.len() <= idx {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[idx];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn ffnn() -> ModelSpec {
        ModelSpec::Ffnn { h1: 8, h2: 6, h3: 4, dropout3: 0.5 }
    }

    #[test]
    fn zero_output_gives_ln2() {
        let mut net = Network::build(&ffnn(), 10, &mut stream(1, &[])).unwrap();
        net.zero_output_layer();
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let logits = net.forward_train(&x, 4, None);
        let (loss, _) = bce_with_logits(&logits, &[0, 1, 0, 1]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut net = Network::build(&ffnn(), 10, &mut stream(2, &[])).unwrap();
        let mut before = Vec::new();
        net.visit_params(|_, p, _| before.extend_from_slice(p));
        net.zero_grads();
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-7);
        adam.step(&mut net);
        let mut after = Vec::new();
        net.visit_params(|_, p, _| after.extend_from_slice(p));
        assert_eq!(before, after);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let (loss, g) = bce_with_logits(&[800.0, -800.0], &[1, 0]);
        assert!(loss.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        let (loss, _) = bce_with_logits(&[-800.0], &[1]);
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn cnn_shapes() {
        let spec = ModelSpec::Cnn { k1: 5, k2: 59, k3: 19, h1: 260, h2: 319, h3: 101, dropout3: 0.9 };
        let net = Network::build(&spec, 64, &mut stream(3, &[])).unwrap();
        let x = vec![0.1; 2 * 64];
        assert_eq!(net.logits(&x, 2).len(), 2);
        assert_eq!(net.features(&x, 2).len(), 2 * 101);
        assert!(Network::build(&spec, 7, &mut stream(3, &[])).is_err());
    }
}
