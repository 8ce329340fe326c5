//! Bayesian optimization over model hyperparameters.
//!
//! The surrogate is a Gaussian process with a Matérn 5/2 ARD kernel whose
//! hyperparameters maximize the log marginal likelihood. Candidates are picked
//! by expected improvement (maximization form) over the unit cube. Integer
//! dimensions are relaxed to continuous ones and rounded before evaluation.
//!
//! Targets are standardized before fitting, so the exploration margin `xi`
//! is in units of the observed spread.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::learn::{ranges, Algorithm, ModelSpec};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    DegenerateKernelMatrix { jitter: f64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("objective value {0} is not finite")]
    NonFiniteValue(f64),
    #[error("point has {got} coordinates, space has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("every objective evaluation failed")]
    NoSuccessfulEvaluation,
}

pub type Result<T> = std::result::Result<T, BoError>;

pub const DEFAULT_XI: f64 = 0.1;
/// Largest diagonal jitter tried before giving up on a kernel matrix.
pub const MAX_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Integer,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub lo: f64,
    pub hi: f64,
}

impl Dimension {
    pub fn integer(name: &str, lo: usize, hi: usize) -> Self {
        Dimension { name: name.to_string(), kind: DimKind::Integer, lo: lo as f64, hi: hi as f64 }
    }

    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Dimension { name: name.to_string(), kind: DimKind::Continuous, lo, hi }
    }

    /// Maps a unit coordinate to a value, rounding integer dimensions.
    pub fn decode(&self, u: f64) -> f64 {
        let v = self.lo + u.clamp(0.0, 1.0) * (self.hi - self.lo);
        match self.kind {
            DimKind::Integer => v.round().clamp(self.lo, self.hi),
            DimKind::Continuous => v,
        }
    }

    pub fn encode(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(BoError::InvalidSpace("no dimensions".into()));
        }
        for d in &dims {
            if !(d.lo.is_finite() && d.hi.is_finite() && d.lo < d.hi) {
                return Err(BoError::InvalidSpace(format!("{}: need lo < hi, got [{}, {}]", d.name, d.lo, d.hi)));
            }
            if d.kind == DimKind::Integer && (d.lo.fract() != 0.0 || d.hi.fract() != 0.0) {
                return Err(BoError::InvalidSpace(format!("{}: integer bounds must be integral", d.name)));
            }
        }
        Ok(SearchSpace { dims })
    }

    /// The hyperparameter ranges searched for each algorithm.
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        use Dimension as D;
        let int = |name, (lo, hi): (usize, usize)| D::integer(name, lo, hi);
        let dims = match algorithm {
            Algorithm::Rf => vec![int("n_trees", ranges::N_TREES), int("min_samples_leaf", ranges::MIN_SAMPLES_LEAF)],
            Algorithm::Svm => vec![D::continuous("alpha", ranges::ALPHA.0, ranges::ALPHA.1)],
            Algorithm::Ffnn => vec![
                int("h1", ranges::H1),
                int("h2", ranges::H2),
                int("h3", ranges::H3),
                D::continuous("dropout3", ranges::DROPOUT.0, ranges::DROPOUT.1),
            ],
            Algorithm::Cnn => vec![
                int("k1", ranges::KERNEL),
                int("k2", ranges::KERNEL),
                int("k3", ranges::KERNEL),
                int("h1", ranges::H1),
                int("h2", ranges::H2),
                int("h3", ranges::H3),
                D::continuous("dropout3", ranges::DROPOUT.0, ranges::DROPOUT.1),
            ],
        };
        SearchSpace { dims }
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn decode(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &u)| d.decode(u)).collect()
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(v).map(|(d, &v)| d.encode(v)).collect()
    }

    /// Snaps a unit point onto what will actually be evaluated.
    pub fn snap(&self, u: &[f64]) -> Vec<f64> {
        self.encode(&self.decode(u))
    }

    /// Builds a spec from decoded values laid out as in [`Self::for_algorithm`].
    pub fn to_spec(algorithm: Algorithm, v: &[f64]) -> Result<ModelSpec> {
        let want = SearchSpace::for_algorithm(algorithm).len();
        if v.len() != want {
            return Err(BoError::DimensionMismatch { expected: want, got: v.len() });
        }
        let n = |i: usize| v[i].round() as usize;
        Ok(match algorithm {
            Algorithm::Rf => ModelSpec::Rf { n_trees: n(0), min_samples_leaf: n(1) },
            Algorithm::Svm => ModelSpec::Svm { alpha: v[0] },
            Algorithm::Ffnn => ModelSpec::Ffnn { h1: n(0), h2: n(1), h3: n(2), dropout3: v[3] },
            Algorithm::Cnn => ModelSpec::Cnn { k1: n(0), k2: n(1), k3: n(2), h1: n(3), h2: n(4), h3: n(5), dropout3: v[6] },
        })
    }
}

/// Kernel and noise parameters of the surrogate, in standardized target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn default_for(dim: usize) -> Self {
        GpHyper { length_scales: vec![0.3; dim], signal_var: 1.0, noise_var: 1e-4 }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        t.push(self.signal_var.ln());
        t.push(self.noise_var.ln());
        t
    }

    fn from_log(t: &[f64]) -> Self {
        let d = t.len() - 2;
        GpHyper {
            length_scales: t[..d].iter().map(|v| v.exp()).collect(),
            signal_var: t[d].exp(),
            noise_var: t[d + 1].exp(),
        }
    }
}

// Box constraints on the log hyperparameters.
const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL: (f64, f64) = (-4.6, 4.6);
const LOG_NOISE: (f64, f64) = (-18.4, 0.0);

fn log_bounds(dim: usize, k: usize) -> (f64, f64) {
    if k < dim {
        LOG_LENGTH
    } else if k == dim {
        LOG_SIGNAL
    } else {
        LOG_NOISE
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;

fn matern52(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
}

fn scaled_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>().sqrt()
}

/// Cholesky of `k + noise·I`, escalating diagonal jitter up to [`MAX_JITTER`].
fn robust_cholesky(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= MAX_JITTER * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(BoError::DegenerateKernelMatrix { jitter: MAX_JITTER })
}

/// A Gaussian process conditioned on observations.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    hyper: GpHyper,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    alpha: DVector<f64>,
    l: DMatrix<f64>,
    jitter: f64,
}

impl GaussianProcess {
    /// Conditions on `points` with fixed hyperparameters. An empty set yields the prior.
    pub fn condition(hyper: GpHyper, points: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        if points.len() != values.len() {
            return Err(BoError::DimensionMismatch { expected: points.len(), got: values.len() });
        }
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(BoError::NonFiniteValue(v));
        }
        let dim = hyper.length_scales.len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(BoError::DimensionMismatch { expected: dim, got: p.len() });
        }
        let (y_mean, y_scale) = standardization(values);
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - y_mean) / y_scale));
        let k = kernel_matrix(&hyper, points);
        let (chol, jitter) = robust_cholesky(&k)?;
        let alpha = chol.solve(&y);
        Ok(GaussianProcess { l: chol.l(), hyper, x: points.to_vec(), y_mean, y_scale, alpha, jitter })
    }

    /// Fits hyperparameters by multi-start gradient ascent on the log marginal
    /// likelihood, then conditions on the data.
    pub fn fit(points: &[Vec<f64>], values: &[f64], seed: u64) -> Result<Self> {
        if points.len() < 2 {
            return Err(BoError::TooFewPoints { needed: 2, got: points.len() });
        }
        let dim = points[0].len();
        let (y_mean, y_scale) = standardization(values);
        let y: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();
        let mut rng = rng::stream(seed, &[rng::tag("gp")]);
        let mut starts = vec![GpHyper::default_for(dim).to_log()];
        for _ in 0..LML_STARTS - 1 {
            starts.push((0..dim + 2).map(|k| rng.random_range(log_bounds(dim, k).0..log_bounds(dim, k).1)).collect());
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for s in starts {
            if let Some((lml, theta)) = ascend(points, &y, s) {
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, theta));
                }
            }
        }
        let theta = best.map(|(_, t)| t).unwrap_or_else(|| GpHyper::default_for(dim).to_log());
        Self::condition(GpHyper::from_log(&theta), points, values)
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    /// Diagonal jitter that was needed to factor the kernel matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance of the latent function, in target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        if self.x.is_empty() {
            return (0.0, self.hyper.signal_var);
        }
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|p| self.hyper.signal_var * matern52(scaled_dist(p, x, &self.hyper.length_scales))),
        );
        let mean = ks.dot(&self.alpha);
        let v = self.l.solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        (mean, (self.hyper.signal_var - v.norm_squared()).max(0.0))
    }

    /// Expected improvement of `x` over the best observation, in standardized units.
    pub fn expected_improvement(&self, x: &[f64], f_best: f64, xi: f64) -> f64 {
        let (m, v) = self.predict_standardized(x);
        let best = (f_best - self.y_mean) / self.y_scale;
        expected_improvement(m, v.sqrt(), best, xi)
    }

    /// Logarithm of [`Self::expected_improvement`], finite deep into the tail.
    pub fn log_expected_improvement(&self, x: &[f64], f_best: f64, xi: f64) -> f64 {
        let (m, v) = self.predict_standardized(x);
        let best = (f_best - self.y_mean) / self.y_scale;
        log_expected_improvement(m, v.sqrt(), best, xi)
    }
}

const LML_STARTS: usize = 5;
const LML_STEPS: usize = 60;

fn standardization(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, if var > 1e-24 { var.sqrt() } else { 1.0 })
}

fn kernel_matrix(hyper: &GpHyper, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = hyper.signal_var * matern52(scaled_dist(&points[i], &points[j], &hyper.length_scales));
        if i == j {
            k + hyper.noise_var
        } else {
            k
        }
    })
}

/// Log marginal likelihood and its gradient with respect to the log hyperparameters.
fn lml_and_grad(points: &[Vec<f64>], y: &[f64], theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let hyper = GpHyper::from_log(theta);
    let n = points.len();
    let dim = hyper.length_scales.len();
    let k = kernel_matrix(&hyper, points);
    let (chol, _) = robust_cholesky(&k).ok()?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let l = chol.l();
    let logdet: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // dL/dθ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = vec![0.0; dim + 2];
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            let r = scaled_dist(&points[i], &points[j], &hyper.length_scales);
            let e = (-SQRT5 * r).exp();
            let kij = hyper.signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e;
            let common = hyper.signal_var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
            for d in 0..dim {
                let delta = (points[i][d] - points[j][d]) / hyper.length_scales[d];
                grad[d] += 0.5 * wij * common * delta * delta;
            }
            grad[dim] += 0.5 * wij * kij;
        }
        grad[dim + 1] += 0.5 * w[(i, i)] * hyper.noise_var;
    }
    Some((lml, grad))
}

/// Projected gradient ascent with a backtracking step.
fn ascend(points: &[Vec<f64>], y: &[f64], start: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let dim = start.len() - 2;
    let project = |t: &mut Vec<f64>| {
        for (k, v) in t.iter_mut().enumerate() {
            let (lo, hi) = log_bounds(dim, k);
            *v = v.clamp(lo, hi);
        }
    };
    let mut theta = start;
    project(&mut theta);
    let (mut lml, mut grad) = lml_and_grad(points, y, &theta)?;
    let mut step = 0.5;
    for _ in 0..LML_STEPS {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-8 {
            break;
        }
        let mut improved = false;
        while step > 1e-6 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + step * g / norm).collect();
            project(&mut cand);
            if let Some((l2, g2)) = lml_and_grad(points, y, &cand) {
                if l2 > lml {
                    theta = cand;
                    lml = l2;
                    grad = g2;
                    improved = true;
                    step *= 1.5;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((lml, theta))
}

/// Closed-form expected improvement for maximization.
pub fn expected_improvement(mu: f64, sigma: f64, f_best: f64, xi: f64) -> f64 {
    let gain = mu - f_best - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::standard();
    (gain * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

/// `ln EI`, using the asymptotic Mills-ratio series where EI underflows.
pub fn log_expected_improvement(mu: f64, sigma: f64, f_best: f64, xi: f64) -> f64 {
    let gain = mu - f_best - xi;
    if sigma <= 0.0 {
        return if gain > 0.0 { gain.ln() } else { f64::NEG_INFINITY };
    }
    let z = gain / sigma;
    if z > -5.0 {
        return expected_improvement(mu, sigma, f_best, xi).ln();
    }
    // φ(z) + zΦ(z) = φ(z)·(1/t² − 3/t⁴ + 15/t⁶ − 105/t⁸ + …), t = −z
    let t2 = z * z;
    let series = (1.0 - 3.0 / t2 + 15.0 / (t2 * t2) - 105.0 / (t2 * t2 * t2)) / t2;
    sigma.ln() - 0.5 * t2 - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub max_iter: usize,
    pub n_init: usize,
    pub xi: f64,
    pub seed: u64,
    /// Unit-cube L∞ distance under which a proposal counts as a repeat.
    pub converge_tol: f64,
    /// Consecutive repeats that stop the search.
    pub converge_patience: usize,
    pub ei_starts: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig { max_iter: 50, n_init: 5, xi: DEFAULT_XI, seed: 0, converge_tol: 1e-3, converge_patience: 3, ei_starts: 10 }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.n_init == 0 {
            return Err(BoError::InvalidConfig("max_iter and n_init must be positive".into()));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) || !(self.converge_tol >= 0.0) {
            return Err(BoError::InvalidConfig("xi and converge_tol must be non-negative".into()));
        }
        if self.ei_starts == 0 || self.converge_patience == 0 {
            return Err(BoError::InvalidConfig("ei_starts and converge_patience must be positive".into()));
        }
        Ok(())
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub iter: usize,
    /// Evaluated point in the unit cube, integer dimensions snapped.
    pub point: Vec<f64>,
    /// `None` when the objective failed.
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoState {
    pub observations: Vec<Observation>,
    pub hyper: Option<GpHyper>,
    pub iteration: usize,
    pub best_so_far: Option<f64>,
}

impl BoState {
    fn new() -> Self {
        BoState { observations: Vec::new(), hyper: None, iteration: 0, best_so_far: None }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.point.clone()).collect()
    }

    /// Values with failures replaced by the worst successful value.
    pub fn effective_values(&self) -> Vec<f64> {
        let worst = self.observations.iter().filter_map(|o| o.value).fold(f64::INFINITY, f64::min);
        let worst = if worst.is_finite() { worst } else { 0.0 };
        self.observations.iter().map(|o| o.value.unwrap_or(worst)).collect()
    }

    fn push(&mut self, point: Vec<f64>, outcome: std::result::Result<f64, String>) {
        let (value, error) = match outcome {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite objective {v}"))),
            Err(e) => (None, Some(e)),
        };
        if let Some(v) = value {
            self.best_so_far = Some(self.best_so_far.map_or(v, |b| b.max(v)));
        }
        self.observations.push(Observation { iter: self.observations.len(), point, value, error });
        self.iteration = self.observations.len();
    }
}

#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub space: SearchSpace,
    pub state: BoState,
    /// Decoded coordinates of the best observation.
    pub best: Vec<f64>,
    pub best_value: f64,
    pub stopped_early: bool,
}

impl BoOutcome {
    /// `iter,<dimension names>...,value,best_so_far`, points in unit-cube coordinates.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iter");
        for d in self.space.dims() {
            s.push(',');
            s.push_str(&d.name);
        }
        s.push_str(",value,best_so_far\n");
        let values = self.state.effective_values();
        let mut best = f64::NEG_INFINITY;
        for (o, v) in self.state.observations.iter().zip(values) {
            if let Some(x) = o.value {
                best = best.max(x);
            }
            s.push_str(&o.iter.to_string());
            for u in &o.point {
                s.push_str(&format!(",{u:.6}"));
            }
            s.push_str(&format!(",{v:.6},{best:.6}\n"));
        }
        s
    }
}

fn latin_hypercube(n: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Compass search inside the unit cube.
fn pattern_search(f: impl Fn(&[f64]) -> f64, start: Vec<f64>) -> (f64, Vec<f64>) {
    let mut x = start;
    let mut fx = f(&x);
    let mut step = 0.1;
    while step > 1e-4 {
        let mut moved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut c = x.clone();
                c[d] = (c[d] + dir * step).clamp(0.0, 1.0);
                let fc = f(&c);
                if fc > fx {
                    x = c;
                    fx = fc;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (fx, x)
}

fn multi_start(f: impl Fn(&[f64]) -> f64, starts: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let mut best = (f64::NEG_INFINITY, starts[0].clone());
    for s in starts {
        let cand = pattern_search(&f, s.clone());
        if cand.0 > best.0 {
            best = cand;
        }
    }
    best
}

const EI_CANDIDATES: usize = 512;
/// Below this EI (standardized units) the surrogate expects no gain anywhere
/// and the proposal falls back to the maximizer of the posterior mean.
pub const EI_FLOOR: f64 = 1e-12;

fn propose(gp: &GaussianProcess, state: &BoState, dim: usize, cfg: &BoConfig, rng: &mut Rng) -> Vec<f64> {
    let values = state.effective_values();
    let f_best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_ei = |p: &[f64]| gp.log_expected_improvement(p, f_best, cfg.xi);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..EI_CANDIDATES)
        .map(|_| {
            let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            (log_ei(&p), p)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let incumbent = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let mut starts: Vec<Vec<f64>> = vec![state.observations[incumbent].point.clone()];
    starts.extend(scored.into_iter().take(cfg.ei_starts - 1).map(|(_, p)| p));
    let (best_log_ei, x) = multi_start(log_ei, &starts);
    if best_log_ei >= EI_FLOOR.ln() {
        return x;
    }
    multi_start(|p| gp.predict(p).0, &starts).1
}

/// Maximizes `objective` over `space`.
///
/// The objective receives decoded coordinates. Failed evaluations are kept in
/// the history and enter the surrogate as the worst observed value.
pub fn optimize<F, E>(mut objective: F, space: &SearchSpace, cfg: &BoConfig) -> Result<BoOutcome>
where
    F: FnMut(&[f64]) -> std::result::Result<f64, E>,
    E: fmt::Display,
{
    cfg.validate()?;
    let dim = space.len();
    let mut rng = rng::stream(cfg.seed, &[rng::tag("bo")]);
    let mut state = BoState::new();
    let mut eval = |state: &mut BoState, u: Vec<f64>| {
        let outcome = objective(&space.decode(&u)).map_err(|e| e.to_string());
        state.push(u, outcome);
    };
    for p in latin_hypercube(cfg.n_init.min(cfg.max_iter), dim, &mut rng) {
        eval(&mut state, space.snap(&p));
    }
    let mut repeats = 0;
    let mut stopped_early = false;
    while state.observations.len() < cfg.max_iter {
        let gp_seed = rng::derive_seed(cfg.seed, &[rng::tag("gp"), state.iteration as u64]);
        let gp = GaussianProcess::fit(&state.points(), &state.effective_values(), gp_seed)?;
        state.hyper = Some(gp.hyper().clone());
        let next = space.snap(&propose(&gp, &state, dim, cfg, &mut rng));
        let repeat = state
            .observations
            .iter()
            .any(|o| o.point.iter().zip(&next).all(|(a, b)| (a - b).abs() <= cfg.converge_tol));
        repeats = if repeat { repeats + 1 } else { 0 };
        eval(&mut state, next);
        if repeats >= cfg.converge_patience {
            stopped_early = true;
            break;
        }
    }
    let (best_i, best_value) = state
        .observations
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.value.map(|v| (i, v)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(BoError::NoSuccessfulEvaluation)?;
    let best = space.decode(&state.observations[best_i].point);
    Ok(BoOutcome { space: space.clone(), state, best, best_value, stopped_early })
}
