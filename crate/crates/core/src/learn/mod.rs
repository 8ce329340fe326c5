//! The four classifiers behind one interface.
//!
//! [`train`] turns a [`ModelSpec`] and a [`Dataset`] into a [`TrainedModel`].
//! Networks are trained with Adam on binary cross-entropy and scored with
//! Monte-Carlo dropout; the forest and the SVM are deterministic.

mod forest;
mod gradcheck;
mod layers;
mod linalg;
mod network;
mod persist;
mod svm;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::echogram::StandardizationStats;
use crate::rng::{self, Rng};

pub use forest::{Forest, Tree};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{selu, ParamClass, SELU_ALPHA, SELU_LAMBDA};
pub use network::{Network, CONV_CHANNELS};
pub use persist::{history_to_csv, MODEL_MAGIC};
pub use svm::{LinearSvm, SVM_EPOCHS};

use network::{bce_with_logits, sigmoid, Adam};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training set has a single class")]
    SingleClassDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("label {0} is not binary")]
    InvalidLabel(u8),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("spec does not describe a neural network")]
    NotANetwork,
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LearnError>;

/// Standardized pings with binary labels (strong = 1, weak = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    dim: usize,
    y: Vec<u8>,
    ids: Vec<usize>,
}

impl Dataset {
    /// `x` is row-major, one ping of length `dim` per row.
    pub fn new(x: Vec<f64>, dim: usize, y: Vec<u8>, ids: Vec<usize>) -> Result<Self> {
        if y.len() != ids.len() {
            return Err(LearnError::DimensionMismatch { expected: y.len(), got: ids.len() });
        }
        if x.len() != y.len() * dim {
            return Err(LearnError::DimensionMismatch { expected: y.len() * dim, got: x.len() });
        }
        if let Some(&bad) = y.iter().find(|&&v| v > 1) {
            return Err(LearnError::InvalidLabel(bad));
        }
        Ok(Self { x, dim, y, ids })
    }

    /// Builds from separate rows; ids are `0..n`.
    pub fn from_rows(rows: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(LearnError::DimensionMismatch { expected: dim, got: r.len() });
        }
        let ids = (0..rows.len()).collect();
        Self::new(rows.concat(), dim, y, ids)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.y[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Flat row-major features.
    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn positives(&self) -> usize {
        self.y.iter().map(|&v| usize::from(v)).sum()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Self {
            x,
            dim: self.dim,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if !self.is_empty() && !other.is_empty() && self.dim != other.dim {
            return Err(LearnError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let dim = if self.is_empty() { other.dim } else { self.dim };
        let mut out = self.clone();
        out.dim = dim;
        out.x.extend_from_slice(&other.x);
        out.y.extend_from_slice(&other.y);
        out.ids.extend_from_slice(&other.ids);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rf,
    Svm,
    Ffnn,
    Cnn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Rf, Algorithm::Svm, Algorithm::Ffnn, Algorithm::Cnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rf => "rf",
            Algorithm::Svm => "svm",
            Algorithm::Ffnn => "ffnn",
            Algorithm::Cnn => "cnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s.to_ascii_lowercase())
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameter search ranges, `(lo, hi)` inclusive.
pub mod ranges {
    pub const N_TREES: (usize, usize) = (10, 10_000);
    pub const MIN_SAMPLES_LEAF: (usize, usize) = (20, 50);
    pub const ALPHA: (f64, f64) = (1e-4, 0.1);
    pub const H1: (usize, usize) = (5, 600);
    pub const H2: (usize, usize) = (5, 320);
    pub const H3: (usize, usize) = (5, 120);
    pub const KERNEL: (usize, usize) = (5, 60);
    pub const DROPOUT: (f64, f64) = (0.0, 1.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum ModelSpec {
    Rf { n_trees: usize, min_samples_leaf: usize },
    Svm { alpha: f64 },
    Ffnn { h1: usize, h2: usize, h3: usize, dropout3: f64 },
    Cnn { k1: usize, k2: usize, k3: usize, h1: usize, h2: usize, h3: usize, dropout3: f64 },
}

impl ModelSpec {
    /// Values found by the original hyperparameter search.
    pub fn tuned(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::Rf => ModelSpec::Rf { n_trees: 187, min_samples_leaf: 24 },
            Algorithm::Svm => ModelSpec::Svm { alpha: 0.077 },
            Algorithm::Ffnn => ModelSpec::Ffnn { h1: 75, h2: 105, h3: 95, dropout3: 0.6 },
            Algorithm::Cnn => ModelSpec::Cnn { k1: 5, k2: 59, k3: 19, h1: 260, h2: 319, h3: 101, dropout3: 0.9 },
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelSpec::Rf { .. } => Algorithm::Rf,
            ModelSpec::Svm { .. } => Algorithm::Svm,
            ModelSpec::Ffnn { .. } => Algorithm::Ffnn,
            ModelSpec::Cnn { .. } => Algorithm::Cnn,
        }
    }

    pub fn is_network(&self) -> bool {
        matches!(self, ModelSpec::Ffnn { .. } | ModelSpec::Cnn { .. })
    }

    /// Checks that every field lies in its search range.
    pub fn validate(&self) -> Result<()> {
        fn within<T: PartialOrd + fmt::Display>(name: &str, v: T, (lo, hi): (T, T)) -> Result<()> {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(LearnError::InvalidSpec(format!("{name}={v} outside [{lo}, {hi}]")))
            }
        }
        match *self {
            ModelSpec::Rf { n_trees, min_samples_leaf } => {
                within("n_trees", n_trees, ranges::N_TREES)?;
                within("min_samples_leaf", min_samples_leaf, ranges::MIN_SAMPLES_LEAF)
            }
            ModelSpec::Svm { alpha } => within("alpha", alpha, ranges::ALPHA),
            ModelSpec::Ffnn { h1, h2, h3, dropout3 } => {
                within("h1", h1, ranges::H1)?;
                within("h2", h2, ranges::H2)?;
                within("h3", h3, ranges::H3)?;
                within("dropout3", dropout3, ranges::DROPOUT)
            }
            ModelSpec::Cnn { k1, k2, k3, h1, h2, h3, dropout3 } => {
                within("k1", k1, ranges::KERNEL)?;
                within("k2", k2, ranges::KERNEL)?;
                within("k3", k3, ranges::KERNEL)?;
                within("h1", h1, ranges::H1)?;
                within("h2", h2, ranges::H2)?;
                within("h3", h3, ranges::H3)?;
                within("dropout3", dropout3, ranges::DROPOUT)
            }
        }
    }

    /// Weaker check used by [`train`]: sizes positive, rates in `[0, 1]`.
    /// Shrunken networks below the search ranges stay trainable.
    fn check_structure(&self) -> Result<()> {
        let bad = |m: &str| Err(LearnError::InvalidSpec(m.to_string()));
        match *self {
            ModelSpec::Rf { n_trees, min_samples_leaf } if n_trees == 0 || min_samples_leaf == 0 => {
                bad("forest needs at least one tree and one sample per leaf")
            }
            ModelSpec::Svm { alpha } if !(alpha.is_finite() && alpha >= 0.0) => bad("alpha must be finite and >= 0"),
            ModelSpec::Ffnn { h1, h2, h3, dropout3 } | ModelSpec::Cnn { h1, h2, h3, dropout3, .. }
                if h1 == 0 || h2 == 0 || h3 == 0 || !(0.0..=1.0).contains(&dropout3) =>
            {
                bad("hidden sizes must be positive and dropout in [0, 1]")
            }
            ModelSpec::Cnn { k1, k2, k3, .. } if k1 == 0 || k2 == 0 || k3 == 0 => bad("kernel sizes must be positive"),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModelSpec::Rf { n_trees, min_samples_leaf } => write!(f, "rf(n_trees={n_trees},min_samples_leaf={min_samples_leaf})"),
            ModelSpec::Svm { alpha } => write!(f, "svm(alpha={alpha})"),
            ModelSpec::Ffnn { h1, h2, h3, dropout3 } => write!(f, "ffnn(h={h1}/{h2}/{h3},dropout3={dropout3})"),
            ModelSpec::Cnn { k1, k2, k3, h1, h2, h3, dropout3 } => {
                write!(f, "cnn(k={k1}/{k2}/{k3},h={h1}/{h2}/{h3},dropout3={dropout3})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// One Adam step per epoch over the whole training set.
    pub full_batch: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mc_passes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            full_batch: false,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
            mc_passes: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(LearnError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.mc_passes == 0 {
            return Err(LearnError::InvalidConfig("mc_passes must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch training curve. Train metrics are running means over the
/// epoch's mini-batches (dropout on); validation metrics are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum Params {
    Forest(Forest),
    Svm(LinearSvm),
    Net(Network),
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub seed: u64,
    pub input_len: usize,
    pub history: Vec<EpochRecord>,
    /// Statistics the training pings were standardized with.
    pub stats: Option<StandardizationStats>,
    pub(crate) params: Params,
}

/// Inference chunk size; bounds activation memory.
const INFER_CHUNK: usize = 256;

/// Trains `spec` on `train`, deterministic in `cfg.seed`.
pub fn train(spec: &ModelSpec, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainedModel> {
    spec.check_structure()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if let Some(v) = val {
        if !v.is_empty() && v.dim() != train.dim() {
            return Err(LearnError::DimensionMismatch { expected: train.dim(), got: v.dim() });
        }
    }
    let input_len = train.dim();
    let (params, history) = match *spec {
        ModelSpec::Rf { n_trees, min_samples_leaf } => {
            if !train.has_both_classes() {
                return Err(LearnError::SingleClassDataset);
            }
            (Params::Forest(Forest::fit(train, n_trees, min_samples_leaf, cfg.seed)), Vec::new())
        }
        ModelSpec::Svm { alpha } => {
            if !train.has_both_classes() {
                return Err(LearnError::SingleClassDataset);
            }
            (Params::Svm(LinearSvm::fit(train, alpha, cfg.seed)), Vec::new())
        }
        ModelSpec::Ffnn { .. } | ModelSpec::Cnn { .. } => {
            let mut init = rng::stream(cfg.seed, &[rng::tag("init")]);
            let mut net = Network::build(spec, input_len, &mut init)?;
            let history = fit_network(&mut net, train, val, cfg);
            (Params::Net(net), history)
        }
    };
    Ok(TrainedModel { spec: *spec, seed: cfg.seed, input_len, history, stats: None, params })
}

fn fit_network(net: &mut Network, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Vec<EpochRecord> {
    let n = train.len();
    let dim = train.dim();
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut shuffle = rng::stream(cfg.seed, &[rng::tag("shuffle")]);
    let mut dropout = rng::stream(cfg.seed, &[rng::tag("dropout")]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut xb = Vec::new();
    let mut yb = Vec::new();
    for epoch in 1..=cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        if cfg.full_batch {
            net.zero_grads();
        }
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(train.row(i));
                yb.push(train.label(i));
            }
            if !cfg.full_batch {
                net.zero_grads();
            }
            let logits = net.forward_train(&xb, chunk.len(), Some(&mut dropout));
            let (loss, mut grad) = bce_with_logits(&logits, &yb);
            if cfg.full_batch {
                // accumulate the whole-epoch mean gradient
                let w = chunk.len() as f64 / n as f64;
                grad.iter_mut().for_each(|g| *g *= w);
            }
            net.backward(&grad, chunk.len());
            if !cfg.full_batch {
                adam.step(net);
            }
            loss_sum += loss * chunk.len() as f64;
            correct += logits.iter().zip(&yb).filter(|(&z, &t)| u8::from(z >= 0.0) == t).count();
        }
        if cfg.full_batch {
            adam.step(net);
        }
        let (val_loss, val_acc) = match val {
            Some(v) if !v.is_empty() => {
                let logits = chunked_logits(net, v.features(), dim);
                let (l, _) = bce_with_logits(&logits, v.labels());
                let acc = logits.iter().zip(v.labels()).filter(|(&z, &t)| u8::from(z >= 0.0) == t).count();
                (Some(l), Some(acc as f64 / v.len() as f64))
            }
            _ => (None, None),
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
        });
    }
    history
}

fn chunked_logits(net: &Network, x: &[f64], dim: usize) -> Vec<f64> {
    x.chunks(INFER_CHUNK * dim).flat_map(|c| net.logits(c, c.len() / dim)).collect()
}

impl TrainedModel {
    pub fn network(&self) -> Option<&Network> {
        match &self.params {
            Params::Net(n) => Some(n),
            _ => None,
        }
    }

    pub fn forest(&self) -> Option<&Forest> {
        match &self.params {
            Params::Forest(f) => Some(f),
            _ => None,
        }
    }

    pub fn svm(&self) -> Option<&LinearSvm> {
        match &self.params {
            Params::Svm(s) => Some(s),
            _ => None,
        }
    }

    /// True when predictions vary between stochastic passes.
    pub fn is_stochastic(&self) -> bool {
        self.network().is_some_and(|n| n.dropout_rate() > 0.0)
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        if self.input_len == 0 || x.len() % self.input_len != 0 {
            return Err(LearnError::DimensionMismatch { expected: self.input_len, got: x.len() });
        }
        Ok(x.len() / self.input_len)
    }

    /// Probability of a strong correction for every ping in the flat,
    /// row-major `x`. With `stochastic` set, networks draw fresh dropout
    /// masks from `rng`; everything else ignores it.
    pub fn predict_proba(&self, x: &[f64], stochastic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let n = self.check_input(x)?;
        let dim = self.input_len;
        Ok(match &self.params {
            Params::Forest(f) => x.chunks(dim).map(|r| f.vote_fraction(r)).collect(),
            Params::Svm(s) => x.chunks(dim).map(|r| s.proba(r)).collect(),
            Params::Net(net) if stochastic => {
                let mut out = Vec::with_capacity(n);
                for c in x.chunks(INFER_CHUNK * dim) {
                    let b = c.len() / dim;
                    let feats = net.features(c, b);
                    out.extend(net.stochastic_tail(&feats, b, rng).into_iter().map(sigmoid));
                }
                out
            }
            Params::Net(net) => chunked_logits(net, x, dim).into_iter().map(sigmoid).collect(),
        })
    }

    /// Mean probability over `passes` stochastic passes. The layers before
    /// dropout are deterministic at inference, so they run once per chunk.
    pub fn mc_predict(&self, x: &[f64], passes: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        if passes == 0 {
            return Err(LearnError::InvalidConfig("passes must be >= 1".into()));
        }
        let n = self.check_input(x)?;
        let Some(net) = self.network().filter(|n| n.dropout_rate() > 0.0) else {
            return self.predict_proba(x, false, rng);
        };
        let dim = self.input_len;
        let mut out = Vec::with_capacity(n);
        for c in x.chunks(INFER_CHUNK * dim) {
            let b = c.len() / dim;
            let feats = net.features(c, b);
            let mut sum = vec![0.0; b];
            for _ in 0..passes {
                for (s, z) in sum.iter_mut().zip(net.stochastic_tail(&feats, b, rng)) {
                    *s += sigmoid(z);
                }
            }
            out.extend(sum.into_iter().map(|s| s / passes as f64));
        }
        Ok(out)
    }

    /// Deterministic accuracy at the 0.5 threshold.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(LearnError::EmptyTestSet);
        }
        let mut unused = rng::stream(self.seed, &[]);
        let p = self.predict_proba(data.features(), false, &mut unused)?;
        Ok(accuracy_of(&p, data.labels()))
    }

    /// Accuracy of the mean of `passes` stochastic passes, thresholded at
    /// 0.5. Equals [`TrainedModel::accuracy`] for models without dropout.
    pub fn mc_dropout_accuracy(&self, data: &Dataset, passes: usize, seed: u64) -> Result<f64> {
        if data.is_empty() {
            return Err(LearnError::EmptyTestSet);
        }
        let mut rng = rng::stream(seed, &[rng::tag("mc")]);
        let p = self.mc_predict(data.features(), passes, &mut rng)?;
        Ok(accuracy_of(&p, data.labels()))
    }
}

pub fn accuracy_of(p: &[f64], y: &[u8]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().zip(y).filter(|(&p, &t)| u8::from(p >= 0.5) == t).count() as f64 / p.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn blobs(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = rng::stream(seed, &[]);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u8;
            let shift = if c == 1 { 0.8 } else { -0.8 };
            rows.push((0..dim).map(|j| rng.random_range(-1.0..1.0) + if j % 3 == 0 { shift } else { 0.0 }).collect());
            y.push(c);
        }
        Dataset::from_rows(rows, y).unwrap()
    }

    #[test]
    fn dataset_bookkeeping() {
        let d = blobs(10, 3, 1);
        let s = d.subset(&[4, 1]);
        assert_eq!(s.ids(), &[4, 1]);
        assert_eq!(s.row(1), d.row(1));
        let c = s.concat(&d).unwrap();
        assert_eq!(c.len(), 12);
        assert!(Dataset::new(vec![0.0; 5], 2, vec![0, 1], vec![0, 1]).is_err());
        assert!(Dataset::new(vec![0.0; 2], 1, vec![0, 2], vec![0, 1]).is_err());
    }

    #[test]
    fn tuned_specs_are_in_range() {
        for a in Algorithm::ALL {
            ModelSpec::tuned(a).validate().unwrap();
            assert_eq!(ModelSpec::tuned(a).algorithm(), a);
        }
        assert!(ModelSpec::Rf { n_trees: 5, min_samples_leaf: 24 }.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = ModelSpec::tuned(Algorithm::Cnn);
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"algorithm\":\"cnn\""));
        assert_eq!(serde_json::from_str::<ModelSpec>(&j).unwrap(), s);
    }

    #[test]
    fn single_class_is_rejected() {
        let d = Dataset::from_rows(vec![vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        let cfg = TrainConfig::default();
        for a in [Algorithm::Rf, Algorithm::Svm] {
            assert!(matches!(train(&ModelSpec::tuned(a), &d, None, &cfg), Err(LearnError::SingleClassDataset)));
        }
    }

    #[test]
    fn ffnn_learns_and_records_history() {
        let d = blobs(200, 12, 2);
        let spec = ModelSpec::Ffnn { h1: 16, h2: 8, h3: 8, dropout3: 0.2 };
        let cfg = TrainConfig { epochs: 20, batch_size: 32, seed: 1, ..Default::default() };
        let m = train(&spec, &d, Some(&d), &cfg).unwrap();
        assert_eq!(m.history.len(), 20);
        assert!(m.accuracy(&d).unwrap() > 0.95);
        assert!(m.history[19].val_acc.unwrap() > 0.95);
    }

    #[test]
    fn full_batch_mode_trains() {
        let d = blobs(100, 6, 3);
        let spec = ModelSpec::Ffnn { h1: 8, h2: 8, h3: 8, dropout3: 0.0 };
        let cfg = TrainConfig { epochs: 200, batch_size: 16, full_batch: true, learning_rate: 1e-2, seed: 2, ..Default::default() };
        let m = train(&spec, &d, None, &cfg).unwrap();
        assert!(m.accuracy(&d).unwrap() > 0.9);
    }

    #[test]
    fn no_dropout_makes_stochastic_equal_deterministic() {
        let d = blobs(40, 6, 4);
        let spec = ModelSpec::Ffnn { h1: 8, h2: 8, h3: 8, dropout3: 0.0 };
        let m = train(&spec, &d, None, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        let mut r = rng::stream(9, &[]);
        let a = m.predict_proba(d.features(), true, &mut r).unwrap();
        let b = m.predict_proba(d.features(), false, &mut r).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.mc_dropout_accuracy(&d, 1, 3).unwrap(), m.accuracy(&d).unwrap());
    }

    #[test]
    fn predict_checks_dimension() {
        let d = blobs(20, 4, 5);
        let m = train(&ModelSpec::Svm { alpha: 0.01 }, &d, None, &TrainConfig::default()).unwrap();
        let mut r = rng::stream(0, &[]);
        assert!(matches!(m.predict_proba(&[0.0; 5], false, &mut r), Err(LearnError::DimensionMismatch { .. })));
    }
}
