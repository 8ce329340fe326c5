//! Linear SVM: hinge loss with L2 penalty, plain SGD with inverse-scaling
//! step size, and a one-parameter logistic link on the margin.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::sigmoid;
use super::Dataset;
use crate::rng;

pub const SVM_EPOCHS: usize = 100;
pub const SVM_ETA0: f64 = 0.01;
pub const SVM_POWER_T: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    /// Logistic slope: `p = sigmoid(slope * margin)`.
    pub slope: f64,
}

impl LinearSvm {
    pub fn fit(data: &Dataset, alpha: f64, seed: u64) -> Self {
        let d = data.dim();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle = rng::stream(seed, &[rng::tag("svm")]);
        let mut t = 1.0f64;
        for _ in 0..SVM_EPOCHS {
            order.shuffle(&mut shuffle);
            for &i in &order {
                let x = data.row(i);
                let y = if data.label(i) == 1 { 1.0 } else { -1.0 };
                let eta = SVM_ETA0 / t.powf(SVM_POWER_T);
                let m = y * (dot(&w, x) + b);
                let shrink = 1.0 - eta * alpha;
                w.iter_mut().for_each(|v| *v *= shrink);
                if m < 1.0 {
                    w.iter_mut().zip(x).for_each(|(v, &xi)| *v += eta * y * xi);
                    b += eta * y;
                }
                t += 1.0;
            }
        }
        let mut svm = Self { w, b, slope: 1.0 };
        let margins: Vec<f64> = (0..data.len()).map(|i| svm.margin(data.row(i))).collect();
        svm.slope = fit_slope(&margins, data.labels());
        svm
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.slope * self.margin(x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum-likelihood slope `a ≥ 0` of `p = sigmoid(a·m)`; the derivative of
/// the log-likelihood is decreasing in `a`, so bisection finds the root.
fn fit_slope(margins: &[f64], y: &[u8]) -> f64 {
    let score = |a: f64| -> f64 {
        margins.iter().zip(y).map(|(&m, &t)| (f64::from(t) - sigmoid(a * m)) * m).sum()
    };
    let (mut lo, mut hi) = (0.0, 1e4);
    if score(lo) <= 0.0 {
        return 1e-6;
    }
    if score(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
