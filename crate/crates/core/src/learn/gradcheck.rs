//! Central finite-difference check of the hand-written backward pass.

use std::collections::BTreeMap;

use super::layers::ParamClass;
use super::network::{bce_with_logits, Network};
use super::{LearnError, ModelSpec, Result};
use crate::rng;

/// Small enough that a nudge rarely crosses the SELU kink at 0 or flips a
/// max-pool winner; round-off at this step stays near 1e-10.
pub const GRAD_CHECK_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error seen per parameter class.
    pub per_class: BTreeMap<ParamClass, f64>,
    pub parameters: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_class.values().copied().fold(0.0, f64::max)
    }
}

fn loss(net: &mut Network, x: &[f64], y: &[u8]) -> f64 {
    bce_with_logits(&net.forward_train(x, y.len(), None), y).0
}

fn nudge(net: &mut Network, tensor: usize, index: usize, delta: f64) {
    let mut k = 0;
    net.visit_params(|_, p, _| {
        if k == tensor {
            p[index] += delta;
        }
        k += 1;
    });
}

/// Compares analytic and numeric gradients of the batch loss for every
/// parameter of a freshly initialized network. Dropout is off; batch norm
/// uses batch statistics. Relative error is `|a − n| / max(|a| + |n|, 1e-8)`.
pub fn grad_check(spec: &ModelSpec, x: &[f64], y: &[u8], seed: u64) -> Result<GradCheckReport> {
    let batch = y.len();
    if batch == 0 || x.len() % batch != 0 {
        return Err(LearnError::DimensionMismatch { expected: batch, got: x.len() });
    }
    let mut net = Network::build(spec, x.len() / batch, &mut rng::stream(seed, &[rng::tag("init")]))?;
    net.zero_grads();
    let logits = net.forward_train(x, batch, None);
    let (_, g) = bce_with_logits(&logits, y);
    net.backward(&g, batch);

    let mut analytic: Vec<(ParamClass, Vec<f64>)> = Vec::new();
    net.visit_params(|c, _, g| analytic.push((c, g.to_vec())));

    let mut per_class = BTreeMap::new();
    let mut parameters = 0;
    for (t, (class, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            nudge(&mut net, t, i, GRAD_CHECK_STEP);
            let up = loss(&mut net, x, y);
            nudge(&mut net, t, i, -2.0 * GRAD_CHECK_STEP);
            let down = loss(&mut net, x, y);
            nudge(&mut net, t, i, GRAD_CHECK_STEP);
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            let e = per_class.entry(*class).or_insert(0.0f64);
            *e = e.max(err);
            parameters += 1;
        }
    }
    Ok(GradCheckReport { per_class, parameters })
}
