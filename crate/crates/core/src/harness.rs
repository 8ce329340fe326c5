//! Experiment orchestration at desk scale.
//!
//! A survey goes through [`prepare`] (detect, filter, label, trim, NaN fill)
//! to become a [`LabeledPool`] of formatted pings. [`build_datasets`] draws
//! the index lists for the simple- and cross-domain training sets, and the
//! `run_*` functions train, evaluate and collect an [`ExperimentReport`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{self, BoConfig, BoError, BoOutcome, SearchSpace};
use crate::bottomline::{self, detect_bottom, label_pings, BottomlineError, LabelingConfig, PingLabel};
use crate::echogram::{BottomRecord, Echogram, EchogramError, StandardizationStats, NAN_FILL_DB, NO_BOTTOM_THRESHOLD_DB};
use crate::learn::{self, Algorithm, Dataset, EpochRecord, LearnError, ModelSpec, TrainConfig, TrainedModel};
use crate::rng;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("pool exhausted: need {needed} pings from {pool}, have {available}")]
    PoolExhausted { pool: String, needed: usize, available: usize },
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),
    #[error("train/test overlap on ping {0}")]
    Leak(usize),
    #[error(transparent)]
    Echogram(#[from] EchogramError),
    #[error(transparent)]
    Bottomline(#[from] BottomlineError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Bayesopt(#[from] BoError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Rows trimmed from the top of desk-scale surveys (256 → 250).
pub const DESK_TRIM_ROWS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct FormatConfig {
    pub n_top: usize,
    pub threshold_db: f32,
    pub fill_db: f32,
    pub labeling: LabelingConfig,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            n_top: DESK_TRIM_ROWS,
            threshold_db: NO_BOTTOM_THRESHOLD_DB,
            fill_db: NAN_FILL_DB,
            labeling: LabelingConfig::default(),
        }
    }
}

/// Formatted, labeled pings of one survey, without the no-bottom ones.
/// Features are raw dB after trim and NaN fill; standardization happens
/// per experiment with training-set statistics.
#[derive(Debug, Clone)]
pub struct LabeledPool {
    pub survey_id: String,
    dim: usize,
    x: Vec<f32>,
    y: Vec<u8>,
    ids: Vec<usize>,
}

impl LabeledPool {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ping(&self, i: usize) -> &[f32] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    /// Original ping index of pool entry `i`.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn strong_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.y.iter().map(|&v| f64::from(v)).sum::<f64>() / self.len() as f64
    }

    pub fn fit_stats(&self, idx: &[usize]) -> Result<StandardizationStats> {
        Ok(StandardizationStats::fit(idx.iter().map(|&i| self.ping(i)))?)
    }

    /// Standardized dataset of the entries `idx`.
    pub fn dataset(&self, idx: &[usize], stats: &StandardizationStats) -> Result<Dataset> {
        let mut x = vec![0.0; idx.len() * self.dim];
        for (k, &i) in idx.iter().enumerate() {
            stats.apply_into(self.ping(i), &mut x[k * self.dim..(k + 1) * self.dim])?;
        }
        Ok(Dataset::new(x, self.dim, idx.iter().map(|&i| self.y[i]).collect(), idx.iter().map(|&i| self.ids[i]).collect())?)
    }
}

/// Everything the formatting pipeline produces for one survey.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Detector output alongside the expert bottom.
    pub record: BottomRecord,
    /// One label per ping, no-bottom included.
    pub labels: Vec<PingLabel>,
    /// Trimmed, NaN-filled echogram with every ping.
    pub formatted: Echogram,
    pub pool: LabeledPool,
}

/// Trims the top rows, optionally drops no-bottom pings and fills NaN: the
/// echogram the classifiers and the review service see.
pub fn format_echogram(raw: &Echogram, cfg: &FormatConfig, drop_no_bottom: bool) -> Result<Echogram> {
    let mut out = raw.trim_rows(cfg.n_top)?;
    if drop_no_bottom {
        out = out.select_pings(&raw.filter_no_bottom(cfg.threshold_db).kept);
    }
    out.replace_nan_in_place(cfg.fill_db);
    Ok(out)
}

/// Detect, filter, label, trim and NaN-fill one survey.
pub fn prepare(raw: &Echogram, clean_bottom_m: &[f64], cfg: &FormatConfig) -> Result<Prepared> {
    let record = BottomRecord::new(detect_bottom(raw), clean_bottom_m.to_vec())?;
    let presence = raw.filter_no_bottom(cfg.threshold_db);
    let labels = label_pings(&record, &cfg.labeling, &presence.dropped)?;
    let formatted = format_echogram(raw, cfg, false)?;
    let dim = formatted.rows();
    let mut x = Vec::with_capacity(presence.kept.len() * dim);
    let mut y = Vec::with_capacity(presence.kept.len());
    for &c in &presence.kept {
        let Some(t) = labels[c].target() else { continue };
        x.extend(formatted.ping(c));
        y.push(t);
    }
    let ids = presence.kept.clone();
    let pool = LabeledPool { survey_id: raw.survey_id().to_string(), dim, x, y, ids };
    Ok(Prepared { record, labels, formatted, pool })
}

/// Pool sizes and mixing for the simple- and cross-domain training sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Simple-training set sizes drawn from domain A, nested.
    pub st_sizes: Vec<usize>,
    /// Cross-domain set: `cdt_base` pings of A plus `cdt_foreign` of B.
    pub cdt_base: usize,
    pub cdt_foreign: usize,
    /// Contiguous B chunk split into validation and the foreign half of the
    /// cross-domain set.
    pub foreign_chunk: usize,
    /// Train fraction for the scaling experiment.
    pub train_fraction: f64,
    /// Upper bound on each test set, `None` for the whole remainder.
    pub test_cap: Option<usize>,
    pub seed: u64,
}

impl SamplingPlan {
    /// Original sizes: ST-100K/300K/550K, CDT = 500K + 50K, chunk 100K.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            st_sizes: vec![100_000, 300_000, 550_000],
            cdt_base: 500_000,
            cdt_foreign: 50_000,
            foreign_chunk: 100_000,
            train_fraction: 0.9,
            test_cap: None,
            seed,
        }
    }

    /// Every size divided by `1 / factor`, rounded.
    pub fn scaled(seed: u64, factor: f64) -> Self {
        let s = |n: usize| (n as f64 * factor).round() as usize;
        let f = Self::full_scale(seed);
        Self {
            st_sizes: f.st_sizes.iter().map(|&n| s(n)).collect(),
            cdt_base: s(f.cdt_base),
            cdt_foreign: s(f.cdt_foreign),
            foreign_chunk: s(f.foreign_chunk),
            ..f
        }
    }

    /// Desk scale, 1/100.
    pub fn desk(seed: u64) -> Self {
        Self::scaled(seed, 0.01)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::InvalidPlan(m.to_string()));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.st_sizes.is_empty() || self.st_sizes.contains(&0) {
            return bad("simple-training sizes must be nonempty and positive");
        }
        if self.cdt_foreign * 2 > self.foreign_chunk {
            return bad("foreign chunk must hold two disjoint halves");
        }
        Ok(())
    }

    pub fn largest_st(&self) -> usize {
        self.st_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// Index lists into the A and B pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    /// `(size, indices into A)` per simple-training set, nested.
    pub st: Vec<(usize, Vec<usize>)>,
    pub cdt_base: Vec<usize>,
    pub cdt_foreign: Vec<usize>,
    pub val_foreign: Vec<usize>,
    pub test_a: Vec<usize>,
    pub test_b: Vec<usize>,
}

impl DatasetPlan {
    /// Fails on the first index shared by a training set and a test set of
    /// the same domain, or by validation and training.
    pub fn check_disjoint(&self) -> Result<()> {
        fn clash(a: &[usize], b: &[usize]) -> Option<usize> {
            let set: std::collections::HashSet<_> = a.iter().collect();
            b.iter().find(|i| set.contains(i)).copied()
        }
        let mut pairs: Vec<(&[usize], &[usize])> = vec![
            (&self.cdt_base, &self.test_a),
            (&self.cdt_foreign, &self.test_b),
            (&self.cdt_foreign, &self.val_foreign),
            (&self.val_foreign, &self.test_b),
        ];
        for (_, idx) in &self.st {
            pairs.push((idx, &self.test_a));
        }
        for (a, b) in pairs {
            if let Some(i) = clash(a, b) {
                return Err(HarnessError::Leak(i));
            }
        }
        Ok(())
    }
}

fn exhausted(pool: &str, needed: usize, available: usize) -> HarnessError {
    HarnessError::PoolExhausted { pool: pool.into(), needed, available }
}

/// Draws the training, validation and test index lists.
///
/// Domain A is shuffled once; every simple-training set and the A part of
/// the cross-domain set are prefixes of that order, and test A is what no
/// training set touched. In domain B one contiguous chunk is split at
/// random into two equal disjoint halves, validation and the foreign part
/// of the cross-domain set; test B is everything outside the chunk.
pub fn build_datasets(plan: &SamplingPlan, len_a: usize, len_b: usize) -> Result<DatasetPlan> {
    plan.validate()?;
    let mut rng = rng::stream(plan.seed, &[rng::tag("sampling")]);
    let used_a = plan.largest_st().max(plan.cdt_base);
    if used_a >= len_a {
        return Err(exhausted("A", used_a + 1, len_a));
    }
    if plan.foreign_chunk >= len_b {
        return Err(exhausted("B", plan.foreign_chunk + 1, len_b));
    }
    let mut order_a: Vec<usize> = (0..len_a).collect();
    order_a.shuffle(&mut rng);
    let st = plan.st_sizes.iter().map(|&n| (n, order_a[..n].to_vec())).collect();
    let cdt_base = order_a[..plan.cdt_base].to_vec();
    let mut test_a = order_a[used_a..].to_vec();

    let start = rng.random_range(0..=len_b - plan.foreign_chunk);
    let mut chunk: Vec<usize> = (start..start + plan.foreign_chunk).collect();
    chunk.shuffle(&mut rng);
    let half = plan.foreign_chunk / 2;
    let val_foreign = chunk[..plan.cdt_foreign.min(half)].to_vec();
    let cdt_foreign = chunk[half..half + plan.cdt_foreign].to_vec();
    let mut test_b: Vec<usize> = (0..start).chain(start + plan.foreign_chunk..len_b).collect();
    test_b.shuffle(&mut rng);
    if let Some(cap) = plan.test_cap {
        test_a.truncate(cap);
        test_b.truncate(cap);
    }
    test_a.sort_unstable();
    test_b.sort_unstable();
    let out = DatasetPlan { st, cdt_base, cdt_foreign, val_foreign, test_a, test_b };
    out.check_disjoint()?;
    Ok(out)
}

/// One trained model and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub algorithm: String,
    pub train_set: String,
    pub train_size: usize,
    pub repeat: usize,
    pub seed: u64,
    pub train_acc: Option<f64>,
    /// Accuracy per test set name ("A", "B").
    pub test_acc: BTreeMap<String, f64>,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: values.len(),
        })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
}

/// Summary key: algorithm, training set, metric ("train" or a test name).
pub type SummaryKey = (String, String, String);

impl ExperimentReport {
    /// Mean/min/max over repeats for every (algorithm, train set, metric).
    /// Failed runs are left out.
    pub fn summary(&self) -> BTreeMap<SummaryKey, Summary> {
        let mut groups: BTreeMap<SummaryKey, Vec<f64>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.error.is_none()) {
            let key = |m: &str| (r.algorithm.clone(), r.train_set.clone(), m.to_string());
            if let Some(t) = r.train_acc {
                groups.entry(key("train")).or_default().push(t);
            }
            for (name, &acc) in &r.test_acc {
                groups.entry(key(name)).or_default().push(acc);
            }
        }
        groups.into_iter().filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s))).collect()
    }

    pub fn get(&self, algorithm: &str, train_set: &str, metric: &str) -> Option<Summary> {
        self.summary().remove(&(algorithm.to_string(), train_set.to_string(), metric.to_string()))
    }

    /// Raw records, one line per run.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("experiment,algorithm,train_set,train_size,repeat,seed,train_acc,test_a_acc,test_b_acc,error\n");
        let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.experiment,
                r.algorithm,
                r.train_set,
                r.train_size,
                r.repeat,
                r.seed,
                f(r.train_acc),
                f(r.test_acc.get("A").copied()),
                f(r.test_acc.get("B").copied()),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        s
    }

    /// Summary as JSON: a list of `{algorithm, train_set, metric, mean, min, max, n}`.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            algorithm: &'a str,
            train_set: &'a str,
            metric: &'a str,
            #[serde(flatten)]
            summary: &'a Summary,
        }
        let summary = self.summary();
        let rows: Vec<Row> = summary
            .iter()
            .map(|((a, t, m), s)| Row { algorithm: a, train_set: t, metric: m, summary: s })
            .collect();
        serde_json::to_string_pretty(&rows).expect("summary serializes")
    }

    /// Learning curve per run, keyed `algorithm_trainset_rREPEAT`.
    pub fn learning_curves(&self) -> Vec<(String, String)> {
        self.records
            .iter()
            .filter(|r| !r.history.is_empty())
            .map(|r| (format!("{}_{}_r{}", r.algorithm, r.train_set, r.repeat), learn::history_to_csv(&r.history)))
            .collect()
    }
}

/// CNN used for desk-scale experiments: the tuned architecture takes hours
/// per run on one core, this one about a minute.
pub fn desk_cnn() -> ModelSpec {
    ModelSpec::Cnn { k1: 5, k2: 5, k3: 5, h1: 32, h2: 16, h3: 16, dropout3: 0.5 }
}

/// Training budget for desk-scale experiments.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 10, batch_size: 64, mc_passes: 20, seed, ..TrainConfig::default() }
}

/// Networks are scored with Monte-Carlo dropout, the rest deterministically.
pub fn evaluate(model: &TrainedModel, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    Ok(if model.spec.is_network() {
        model.mc_dropout_accuracy(data, cfg.mc_passes, seed)?
    } else {
        model.accuracy(data)?
    })
}

pub fn run_seed(master: u64, algorithm: &str, size: usize, repeat: usize) -> u64 {
    rng::derive_seed(master, &[rng::tag(algorithm), size as u64, repeat as u64])
}

fn size_label(n: usize) -> String {
    if n >= 1000 && n % 1000 == 0 {
        format!("{}K", n / 1000)
    } else if n >= 1000 && n % 100 == 0 {
        format!("{}.{}K", n / 1000, (n % 1000) / 100)
    } else {
        n.to_string()
    }
}

/// Trains every algorithm at every size `repeats` times on domain A. Each
/// run samples `size` pings, splits them `train_fraction` / rest, fits the
/// standardization on the training part and scores the rest.
pub fn run_scaling(
    pool: &LabeledPool,
    algos: &[ModelSpec],
    sizes: &[usize],
    repeats: usize,
    train_fraction: f64,
    cfg: &TrainConfig,
) -> Result<ExperimentReport> {
    if let Some(&n) = sizes.iter().find(|&&n| n > pool.len()) {
        return Err(exhausted(&pool.survey_id, n, pool.len()));
    }
    let mut report = ExperimentReport::default();
    for spec in algos {
        let algo = spec.algorithm().as_str();
        for &size in sizes {
            for repeat in 0..repeats {
                let seed = run_seed(cfg.seed, algo, size, repeat);
                let mut record = RunRecord {
                    experiment: "scaling".into(),
                    algorithm: algo.into(),
                    train_set: format!("ST-{}", size_label(size)),
                    train_size: size,
                    repeat,
                    seed,
                    train_acc: None,
                    test_acc: BTreeMap::new(),
                    history: Vec::new(),
                    error: None,
                };
                let outcome = (|| -> Result<()> {
                    let mut idx: Vec<usize> = (0..pool.len()).collect();
                    idx.shuffle(&mut rng::stream(seed, &[rng::tag("sample")]));
                    idx.truncate(size);
                    let n_train = ((size as f64) * train_fraction).round() as usize;
                    let (tr, te) = idx.split_at(n_train);
                    let stats = pool.fit_stats(tr)?;
                    let train = pool.dataset(tr, &stats)?;
                    let test = pool.dataset(te, &stats)?;
                    let mut model = learn::train(spec, &train, None, &TrainConfig { seed, ..cfg.clone() })?;
                    model.stats = Some(stats);
                    record.train_acc = Some(evaluate(&model, &train, cfg, seed)?);
                    record.test_acc.insert("A".into(), evaluate(&model, &test, cfg, seed)?);
                    record.history = model.history;
                    Ok(())
                })();
                if let Err(e) = outcome {
                    record.error = Some(e.to_string());
                }
                report.records.push(record);
            }
        }
    }
    Ok(report)
}

/// Output of [`run_cross_domain`]: the report plus every trained model,
/// keyed by training set name and repeat.
#[derive(Debug, Clone)]
pub struct CrossDomainOutcome {
    pub report: ExperimentReport,
    pub models: Vec<(String, usize, TrainedModel)>,
}

impl CrossDomainOutcome {
    pub fn model(&self, train_set: &str, repeat: usize) -> Option<&TrainedModel> {
        self.models.iter().find(|(t, r, _)| t == train_set && *r == repeat).map(|(_, _, m)| m)
    }
}

/// Trains `spec` on each simple-training set and on the cross-domain set,
/// `repeats` times with derived seeds, and scores each model on its own
/// training set, test A and test B. Validation curves use the B validation
/// half.
pub fn run_cross_domain(
    pool_a: &LabeledPool,
    pool_b: &LabeledPool,
    plan: &SamplingPlan,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    repeats: usize,
) -> Result<CrossDomainOutcome> {
    let sets = build_datasets(plan, pool_a.len(), pool_b.len())?;
    let mut jobs: Vec<(String, Vec<usize>, Vec<usize>)> = sets
        .st
        .iter()
        .map(|(n, idx)| (format!("ST-{}", size_label(*n)), idx.clone(), Vec::new()))
        .collect();
    jobs.push((
        format!("CDT-{}", size_label(plan.cdt_base + plan.cdt_foreign)),
        sets.cdt_base.clone(),
        sets.cdt_foreign.clone(),
    ));
    let algo = spec.algorithm().as_str();
    let mut out = CrossDomainOutcome { report: ExperimentReport::default(), models: Vec::new() };
    for (name, idx_a, idx_b) in &jobs {
        // statistics over the whole training set, both domains
        let all: Vec<&[f32]> = idx_a.iter().map(|&i| pool_a.ping(i)).chain(idx_b.iter().map(|&i| pool_b.ping(i))).collect();
        let stats = StandardizationStats::fit(all.iter().copied())?;
        let train = pool_a.dataset(idx_a, &stats)?.concat(&pool_b.dataset(idx_b, &stats)?)?;
        let val = pool_b.dataset(&sets.val_foreign, &stats)?;
        let test_a = pool_a.dataset(&sets.test_a, &stats)?;
        let test_b = pool_b.dataset(&sets.test_b, &stats)?;
        for repeat in 0..repeats {
            let seed = run_seed(cfg.seed, &format!("{algo}/{name}"), train.len(), repeat);
            let mut record = RunRecord {
                experiment: "crossdomain".into(),
                algorithm: algo.into(),
                train_set: name.clone(),
                train_size: train.len(),
                repeat,
                seed,
                train_acc: None,
                test_acc: BTreeMap::new(),
                history: Vec::new(),
                error: None,
            };
            let outcome = (|| -> Result<TrainedModel> {
                let mut model = learn::train(spec, &train, Some(&val), &TrainConfig { seed, ..cfg.clone() })?;
                model.stats = Some(stats.clone());
                record.train_acc = Some(evaluate(&model, &train, cfg, seed)?);
                record.test_acc.insert("A".into(), evaluate(&model, &test_a, cfg, seed)?);
                record.test_acc.insert("B".into(), evaluate(&model, &test_b, cfg, seed)?);
                record.history = model.history.clone();
                Ok(model)
            })();
            match outcome {
                Ok(m) => out.models.push((name.clone(), repeat, m)),
                Err(e) => record.error = Some(e.to_string()),
            }
            out.report.records.push(record);
        }
    }
    Ok(out)
}

/// Shuffles pool entries with `seed` and holds out `val_fraction` of them.
pub fn split_pool(len: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(HarnessError::InvalidPlan(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::tag("split")]));
    let n_val = ((len as f64) * val_fraction).round() as usize;
    if n_val == 0 || n_val == len {
        return Err(exhausted("split", 2, len));
    }
    let val = idx.split_off(len - n_val);
    Ok((idx, val))
}

/// Training and validation datasets of one pool, standardized with
/// training statistics.
pub fn split_datasets(pool: &LabeledPool, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset, StandardizationStats)> {
    let (tr, va) = split_pool(pool.len(), val_fraction, seed)?;
    let stats = pool.fit_stats(&tr)?;
    Ok((pool.dataset(&tr, &stats)?, pool.dataset(&va, &stats)?, stats))
}

/// Trains on a random `1 - val_fraction` of the pool, records validation
/// curves on the rest, and stores the standardization in the model.
pub fn train_on_pool(pool: &LabeledPool, spec: &ModelSpec, cfg: &TrainConfig, val_fraction: f64) -> Result<TrainedModel> {
    let (train, val, stats) = split_datasets(pool, val_fraction, cfg.seed)?;
    let mut model = learn::train(spec, &train, Some(&val), cfg)?;
    model.stats = Some(stats);
    Ok(model)
}

/// Threshold sweep over one survey: every candidate relabels the same
/// train/validation split.
pub fn sweep_on_prepared(
    prepared: &Prepared,
    spec: &ModelSpec,
    sweep: &bottomline::ThresholdSweep,
    cfg: &TrainConfig,
    val_fraction: f64,
) -> Result<bottomline::SweepReport> {
    let (tr, va) = split_pool(prepared.pool.len(), val_fraction, cfg.seed)?;
    let stats = prepared.pool.fit_stats(&tr)?;
    let report = bottomline::select_threshold(
        |t| {
            let pool = prepared.pool.with_targets(pool_targets(prepared, t));
            let to_bl = |e: HarnessError| match e {
                HarnessError::Learn(l) => BottomlineError::Learn(l),
                other => BottomlineError::Learn(LearnError::InvalidConfig(other.to_string())),
            };
            Ok((pool.dataset(&tr, &stats).map_err(to_bl)?, pool.dataset(&va, &stats).map_err(to_bl)?))
        },
        spec,
        sweep,
        cfg,
    )?;
    Ok(report)
}

/// [`tune`] on a random split of one pool.
pub fn tune_on_pool(pool: &LabeledPool, algorithm: Algorithm, cfg: &TrainConfig, bo: &BoConfig, val_fraction: f64) -> Result<TuneOutcome> {
    let (train, val, _) = split_datasets(pool, val_fraction, cfg.seed)?;
    tune(algorithm, &train, &val, cfg, bo)
}

/// Hyperparameter-search objective: best validation accuracy over the
/// epochs for networks, validation accuracy for the forest and the SVM.
pub fn validation_objective(spec: &ModelSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let model = learn::train(spec, train, Some(val), cfg)?;
    if spec.is_network() {
        let best = model.history.iter().filter_map(|h| h.val_acc).fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            return Ok(best);
        }
    }
    Ok(model.accuracy(val)?)
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best_spec: ModelSpec,
    pub search: BoOutcome,
}

/// Bayesian optimization of `algorithm` over its search space.
pub fn tune(algorithm: Algorithm, train: &Dataset, val: &Dataset, cfg: &TrainConfig, bo: &BoConfig) -> Result<TuneOutcome> {
    let space = SearchSpace::for_algorithm(algorithm);
    let objective = |v: &[f64]| -> Result<f64> {
        let spec = SearchSpace::to_spec(algorithm, v)?;
        validation_objective(&spec, train, val, cfg)
    };
    let search = bayesopt::optimize(objective, &space, bo)?;
    let best_spec = SearchSpace::to_spec(algorithm, &search.best)?;
    Ok(TuneOutcome { best_spec, search })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PingFlag {
    pub ping: usize,
    pub probability_strong: f64,
    pub flag: bool,
}

/// Scores every ping of a formatted echogram with the model's stored
/// standardization and the mean of `passes` stochastic passes; flags
/// `probability >= threshold`. Output is in ping order.
pub fn flag_pings(model: &TrainedModel, e: &Echogram, threshold: f64, passes: usize, seed: u64) -> Result<Vec<PingFlag>> {
    if e.rows() != model.input_len {
        return Err(LearnError::DimensionMismatch { expected: model.input_len, got: e.rows() }.into());
    }
    let mut x = vec![0.0; e.rows() * e.cols()];
    for (c, ping) in e.pings().iter().enumerate() {
        let out = &mut x[c * e.rows()..(c + 1) * e.rows()];
        match &model.stats {
            Some(s) => s.apply_into(ping, out)?,
            None => out.iter_mut().zip(ping).for_each(|(o, &v)| *o = f64::from(v)),
        }
    }
    let mut r = rng::stream(seed, &[rng::tag("flag")]);
    let p = model.mc_predict(&x, passes.max(1), &mut r)?;
    Ok(p.into_iter()
        .enumerate()
        .map(|(ping, probability_strong)| PingFlag { ping, probability_strong, flag: probability_strong >= threshold })
        .collect())
}

pub fn flags_to_csv(flags: &[PingFlag]) -> String {
    let mut s = String::from("ping_index,probability_strong,flag\n");
    for f in flags {
        let _ = writeln!(s, "{},{:.6},{}", f.ping, f.probability_strong, u8::from(f.flag));
    }
    s
}

/// Precision and recall of flags against strong labels, over labeled pings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn score_flags(flags: &[PingFlag], labels: &[PingLabel]) -> FlagScore {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for f in flags {
        match (labels[f.ping], f.flag) {
            (PingLabel::StrongCorrection, true) => tp += 1,
            (PingLabel::StrongCorrection, false) => fneg += 1,
            (PingLabel::WeakCorrection, true) => fp += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    FlagScore {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    }
}

/// Relabels a prepared survey for another threshold (for the sweep).
pub fn relabel(prepared: &Prepared, threshold_m: f64, no_bottom: &[usize]) -> Result<Vec<PingLabel>> {
    Ok(label_pings(&prepared.record, &LabelingConfig::with_threshold(threshold_m), no_bottom)?)
}

/// Labels a pool would get at `threshold_m`, in pool order.
pub fn pool_targets(prepared: &Prepared, threshold_m: f64) -> Vec<u8> {
    prepared
        .pool
        .ids()
        .iter()
        .map(|&c| {
            let l = bottomline::classify_distance(prepared.record.bottom_m[c], prepared.record.clean_bottom_m[c], threshold_m);
            l.target().unwrap_or(0)
        })
        .collect()
}

impl LabeledPool {
    /// Same pings, new targets.
    pub fn with_targets(&self, y: Vec<u8>) -> Self {
        assert_eq!(y.len(), self.len(), "one target per pooled ping");
        Self { y, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, SurveyConfig};

    #[test]
    fn desk_plan_sizes() {
        let p = SamplingPlan::desk(1);
        assert_eq!(p.st_sizes, vec![1000, 3000, 5500]);
        assert_eq!((p.cdt_base, p.cdt_foreign, p.foreign_chunk), (5000, 500, 1000));
        let d = build_datasets(&p, 9000, 4000).unwrap();
        assert_eq!(d.st.iter().map(|(_, v)| v.len()).collect::<Vec<_>>(), vec![1000, 3000, 5500]);
        assert_eq!(d.cdt_base.len() + d.cdt_foreign.len(), 5500);
        assert_eq!(d.val_foreign.len(), 500);
        assert_eq!(d.test_a.len(), 9000 - 5500);
        assert_eq!(d.test_b.len(), 3000);
        // the two halves come from one contiguous chunk
        let mut chunk: Vec<usize> = d.val_foreign.iter().chain(&d.cdt_foreign).copied().collect();
        chunk.sort_unstable();
        assert!(chunk.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(build_datasets(&p, 9000, 4000).unwrap(), d);
        assert!(matches!(build_datasets(&p, 5000, 4000), Err(HarnessError::PoolExhausted { .. })));
    }

    #[test]
    fn tune_svm_small_budget() {
        let s = generate(&SurveyConfig { cols: 600, seed: 8, ..Default::default() }).unwrap();
        let p = prepare(&s.echogram, &s.record.clean_bottom_m, &FormatConfig::default()).unwrap();
        let n = p.pool.len();
        let tr: Vec<usize> = (0..n * 2 / 3).collect();
        let va: Vec<usize> = (n * 2 / 3..n).collect();
        let stats = p.pool.fit_stats(&tr).unwrap();
        let (train, val) = (p.pool.dataset(&tr, &stats).unwrap(), p.pool.dataset(&va, &stats).unwrap());
        let bo = BoConfig { max_iter: 6, seed: 1, ..BoConfig::default() };
        let out = tune(Algorithm::Svm, &train, &val, &TrainConfig::default(), &bo).unwrap();
        assert_eq!(out.search.state.observations.len(), 6);
        assert!(matches!(out.best_spec, ModelSpec::Svm { alpha } if (1e-4..=0.1).contains(&alpha)));
        assert!(out.search.best_value > 0.5 && out.search.best_value <= 1.0);
    }

    #[test]
    fn leak_is_detected() {
        let mut d = build_datasets(&SamplingPlan::desk(2), 9000, 4000).unwrap();
        d.test_a.push(d.st[0].1[0]);
        assert!(matches!(d.check_disjoint(), Err(HarnessError::Leak(_))));
    }

    #[test]
    fn prepare_drops_no_bottom_and_labels() {
        let s = generate(&SurveyConfig { cols: 300, no_bottom_rate: 0.1, seed: 4, ..Default::default() }).unwrap();
        let p = prepare(&s.echogram, &s.record.clean_bottom_m, &FormatConfig::default()).unwrap();
        assert_eq!(p.pool.len(), 270);
        assert_eq!(p.pool.dim(), 250);
        assert!(!p.formatted.has_nan());
        let strong = p.labels.iter().filter(|l| **l == PingLabel::StrongCorrection).count();
        assert_eq!(strong, (0.13f64 * 270.0).round() as usize);
        assert_eq!(p.pool.labels().iter().map(|&v| v as usize).sum::<usize>(), strong);
    }

    #[test]
    fn summary_matches_records() {
        let mk = |rep, acc| RunRecord {
            experiment: "x".into(),
            algorithm: "cnn".into(),
            train_set: "ST-1K".into(),
            train_size: 1000,
            repeat: rep,
            seed: 0,
            train_acc: Some(1.0),
            test_acc: [("A".to_string(), acc)].into(),
            history: Vec::new(),
            error: None,
        };
        let r = ExperimentReport { records: vec![mk(0, 0.5), mk(1, 0.7), mk(2, 0.9)] };
        let s = r.get("cnn", "ST-1K", "A").unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert_eq!((s.min, s.max, s.n), (0.5, 0.9, 3));
        assert!(r.summary_json().contains("\"mean\""));
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn flag_threshold_boundaries() {
        let s = generate(&SurveyConfig { cols: 120, seed: 6, ..Default::default() }).unwrap();
        let p = prepare(&s.echogram, &s.record.clean_bottom_m, &FormatConfig::default()).unwrap();
        let all: Vec<usize> = (0..p.pool.len()).collect();
        let stats = p.pool.fit_stats(&all).unwrap();
        let data = p.pool.dataset(&all, &stats).unwrap();
        let mut model = learn::train(&ModelSpec::Svm { alpha: 0.01 }, &data, None, &TrainConfig::default()).unwrap();
        model.stats = Some(stats);
        let flags = flag_pings(&model, &p.formatted, 0.0, 1, 1).unwrap();
        assert_eq!(flags.len(), 120);
        assert!(flags.iter().all(|f| f.flag));
        assert!(flags.iter().all(|f| (0.0..=1.0).contains(&f.probability_strong)));
        let none = flag_pings(&model, &p.formatted, 1.1, 1, 1).unwrap();
        assert!(none.iter().all(|f| !f.flag));
    }
}
