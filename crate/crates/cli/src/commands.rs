//! Subcommands. Each one loads its inputs, calls one library operation and
//! writes the result; all formatting of outputs lives in the library.

use std::fs;
use std::path::{Path, PathBuf};

use bottomflag::bayesopt::BoConfig;
use bottomflag::bottomline::{detect_bottom, label_pings, labels_to_csv, ThresholdSweep, DEFAULT_THRESHOLD_M};
use bottomflag::echogram::{depth_series_from_csv, depth_series_to_csv, StandardizationStats, NAN_FILL_DB, NO_BOTTOM_THRESHOLD_DB};
use bottomflag::harness::{self, FormatConfig, SamplingPlan, DESK_TRIM_ROWS};
use bottomflag::learn::{history_to_csv, Algorithm};
use bottomflag::synthgen::{self, SurveyConfig};
use bottomflag::{BottomRecord, Echogram, LabelingConfig, ModelSpec, TrainConfig, TrainedModel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::service::{self, AppState, ServeConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
        }
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "bottomflag", version, about = "Flag echogram pings whose bottom line needs expert correction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic survey (.echg plus clean-bottom and truth CSVs).
    Gen(GenArgs),
    /// Trim, drop no-bottom pings, fill NaN, optionally fit standardization.
    Format(FormatArgs),
    /// Max-gradient bottom detection.
    Detect(DetectArgs),
    /// Weak/strong correction labels from automatic and clean bottoms.
    Label(LabelArgs),
    /// Pick the label threshold by one-epoch validation accuracy.
    Sweep(SweepArgs),
    /// Train a classifier on one survey.
    Train(TrainArgs),
    /// Bayesian hyperparameter search.
    Tune(TuneArgs),
    /// Scaling and cross-domain experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Score and flag every ping of a formatted echogram.
    Flag(FlagArgs),
    /// Check that an echogram has no NaN and no value below a floor.
    Verify(VerifyArgs),
    /// Run the review service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Survey config (key = value lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FormatArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DESK_TRIM_ROWS)]
    pub trim: usize,
    #[arg(long, default_value_t = NAN_FILL_DB, allow_negative_numbers = true)]
    pub fill: f32,
    /// Drop pings without any cell above the no-bottom threshold.
    #[arg(long)]
    pub drop_no_bottom: bool,
    #[arg(long, default_value_t = NO_BOTTOM_THRESHOLD_DB, allow_negative_numbers = true)]
    pub no_bottom_db: f32,
    /// Fit per-depth standardization on the output and write it as JSON.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Automatic bottom, `ping_index,bottom_m`.
    #[arg(long)]
    pub bottom: PathBuf,
    /// Expert bottom, `ping_index,clean_bottom_m`.
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_M)]
    pub threshold: f64,
    /// Raw echogram used to mark no-bottom pings.
    #[arg(long)]
    pub echogram: Option<PathBuf>,
    #[arg(long, default_value_t = NO_BOTTOM_THRESHOLD_DB, allow_negative_numbers = true)]
    pub no_bottom_db: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Hyperparameters from the original search.
    Tuned,
    /// Small CNN used for desk-scale experiments.
    Desk,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "cnn")]
    pub algorithm: String,
    #[arg(long, value_enum, default_value = "tuned")]
    pub preset: Preset,
    /// JSON model spec; overrides algorithm and preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelSpec> {
        if let Some(p) = &self.spec {
            let text = fs::read_to_string(p).map_err(data("spec"))?;
            return serde_json::from_str(&text).map_err(data("spec"));
        }
        let algorithm = parse_algorithm(&self.algorithm)?;
        Ok(match (self.preset, algorithm) {
            (Preset::Desk, Algorithm::Cnn) => harness::desk_cnn(),
            _ => ModelSpec::tuned(algorithm),
        })
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm> {
    Algorithm::parse(s).ok_or_else(|| CliError::Usage(format!("unknown algorithm {s}; expected rf, svm, ffnn or cnn")))
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// One Adam step per epoch over the whole training set.
    #[arg(long)]
    pub full_batch: bool,
    #[arg(long)]
    pub mc_passes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Desk-scale budget (10 epochs, batch 64, 20 MC passes) before overrides.
    #[arg(long)]
    pub desk: bool,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        let mut cfg = if self.desk { harness::desk_train_config(self.seed) } else { TrainConfig { seed: self.seed, ..TrainConfig::default() } };
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(p) = self.mc_passes {
            cfg.mc_passes = p;
        }
        cfg.full_batch = self.full_batch;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct SurveyInput {
    /// Raw survey echogram.
    #[arg(long)]
    pub input: PathBuf,
    /// Expert bottom CSV.
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_M)]
    pub threshold: f64,
}

impl SurveyInput {
    fn prepare(&self) -> Result<harness::Prepared> {
        prepare_files(&self.input, &self.clean, self.threshold)
    }
}

fn prepare_files(echg: &Path, clean: &Path, threshold: f64) -> Result<harness::Prepared> {
    let raw = load_echogram(echg)?;
    let clean = load_series(clean)?;
    let cfg = FormatConfig { labeling: LabelingConfig::with_threshold(threshold), ..FormatConfig::default() };
    harness::prepare(&raw, &clean, &cfg).map_err(data("prepare"))
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub survey: SurveyInput,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 1.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub survey: SurveyInput,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch learning curve CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub survey: SurveyInput,
    #[arg(long, default_value = "svm")]
    pub algorithm: String,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// History CSV: iter, encoded point, value, best so far.
    #[arg(long)]
    pub out: PathBuf,
    /// Best spec as JSON.
    #[arg(long)]
    pub best_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Accuracy against training-set size per algorithm, on domain A.
    Scaling(ScalingArgs),
    /// Simple versus cross-domain training of one network.
    Crossdomain(CrossDomainArgs),
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub survey: SurveyInput,
    /// Comma-separated algorithms.
    #[arg(long, default_value = "rf,svm,ffnn,cnn", value_delimiter = ',')]
    pub algorithms: Vec<String>,
    #[arg(long, value_enum, default_value = "tuned")]
    pub preset: Preset,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "2000,4000,6000,8000,10000", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossDomainArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub a_clean: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub b_clean: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_M)]
    pub threshold: f64,
    /// Fraction of the full-scale sampling plan.
    #[arg(long, default_value_t = 0.01)]
    pub scale: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also save every trained model here.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Formatted echogram (rows must match the model input).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 50)]
    pub passes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = NAN_FILL_DB, allow_negative_numbers = true)]
    pub min_db: f32,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON config listing served surveys and models.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

fn load_echogram(p: &Path) -> Result<Echogram> {
    Echogram::load(p).map_err(data(&p.display().to_string()))
}

fn load_series(p: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(p).map_err(data(&p.display().to_string()))?;
    Ok(depth_series_from_csv(&text).map_err(data(&p.display().to_string()))?.1)
}

fn write(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(data(&p.display().to_string()))
}

/// `a.echg` → `a.<suffix>`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Format(a) => format(a),
        Command::Detect(a) => {
            let e = load_echogram(&a.input)?;
            write(&a.out, depth_series_to_csv("bottom_m", &detect_bottom(&e)))
        }
        Command::Label(a) => label(a),
        Command::Sweep(a) => sweep(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune(a),
        Command::Experiment(ExperimentCommand::Scaling(a)) => scaling(a),
        Command::Experiment(ExperimentCommand::Crossdomain(a)) => crossdomain(a),
        Command::Flag(a) => flag(a),
        Command::Verify(a) => verify(a),
        Command::Serve(a) => serve(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SurveyConfig::load(p).map_err(data("config"))?,
        None => SurveyConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let survey = synthgen::generate(&cfg).map_err(data("generate"))?;
    survey.echogram.save(&a.out).map_err(data(&a.out.display().to_string()))?;
    write(&sibling(&a.out, "clean.csv"), depth_series_to_csv("clean_bottom_m", &survey.record.clean_bottom_m))?;
    write(&sibling(&a.out, "truth.csv"), survey.truth.to_csv())
}

fn format(a: FormatArgs) -> Result<()> {
    let raw = load_echogram(&a.input)?;
    let cfg = FormatConfig { n_top: a.trim, threshold_db: a.no_bottom_db, fill_db: a.fill, ..FormatConfig::default() };
    let out = harness::format_echogram(&raw, &cfg, a.drop_no_bottom).map_err(data("format"))?;
    out.save(&a.out).map_err(data(&a.out.display().to_string()))?;
    if let Some(p) = &a.stats_out {
        let pings = out.pings();
        let stats = StandardizationStats::fit(pings.iter().map(Vec::as_slice)).map_err(data("standardize"))?;
        write(p, serde_json::to_string_pretty(&stats).map_err(data("standardize"))?)?;
    }
    Ok(())
}

fn label(a: LabelArgs) -> Result<()> {
    let record = BottomRecord::new(load_series(&a.bottom)?, load_series(&a.clean)?).map_err(data("label"))?;
    let no_bottom = match &a.echogram {
        Some(p) => load_echogram(p)?.filter_no_bottom(a.no_bottom_db).dropped,
        None => Vec::new(),
    };
    let labels = label_pings(&record, &LabelingConfig::with_threshold(a.threshold), &no_bottom).map_err(data("label"))?;
    write(&a.out, labels_to_csv(&labels))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let spec = a.model.resolve()?;
    let prepared = a.survey.prepare()?;
    let sweep = ThresholdSweep { lo: a.lo, hi: a.hi, step: a.step };
    let report = harness::sweep_on_prepared(&prepared, &spec, &sweep, &a.training.config(), a.val_fraction).map_err(data("sweep"))?;
    write(&a.out, report.to_csv())?;
    println!("{{\"best_threshold_m\":{}}}", report.best_threshold_m);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let spec = a.model.resolve()?;
    let prepared = a.survey.prepare()?;
    let model = harness::train_on_pool(&prepared.pool, &spec, &a.training.config(), a.val_fraction).map_err(data("train"))?;
    model.save(&a.out).map_err(data(&a.out.display().to_string()))?;
    if let Some(p) = &a.history {
        write(p, history_to_csv(&model.history))?;
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let algorithm = parse_algorithm(&a.algorithm)?;
    let prepared = a.survey.prepare()?;
    let cfg = a.training.config();
    let bo = BoConfig { max_iter: a.max_iter, seed: cfg.seed, ..BoConfig::default() };
    let out = harness::tune_on_pool(&prepared.pool, algorithm, &cfg, &bo, a.val_fraction).map_err(data("tune"))?;
    write(&a.out, out.search.history_csv())?;
    let spec = serde_json::to_string(&out.best_spec).map_err(data("tune"))?;
    if let Some(p) = &a.best_out {
        write(p, &spec)?;
    }
    println!("{spec}");
    Ok(())
}

fn write_report(dir: &Path, report: &harness::ExperimentReport) -> Result<()> {
    let curves = dir.join("curves");
    fs::create_dir_all(&curves).map_err(data(&curves.display().to_string()))?;
    write(&dir.join("records.csv"), report.to_csv())?;
    write(&dir.join("summary.json"), report.summary_json())?;
    for (name, csv) in report.learning_curves() {
        write(&curves.join(format!("{name}.csv")), csv)?;
    }
    Ok(())
}

fn scaling(a: ScalingArgs) -> Result<()> {
    let specs = a
        .algorithms
        .iter()
        .map(|s| ModelArgs { algorithm: s.clone(), preset: a.preset, spec: None }.resolve())
        .collect::<Result<Vec<_>>>()?;
    let prepared = a.survey.prepare()?;
    let report = harness::run_scaling(&prepared.pool, &specs, &a.sizes, a.repeats, a.train_fraction, &a.training.config())
        .map_err(data("scaling"))?;
    write_report(&a.out_dir, &report)?;
    println!("{}", report.summary_json());
    Ok(())
}

fn crossdomain(a: CrossDomainArgs) -> Result<()> {
    let spec = a.model.resolve()?;
    let pa = prepare_files(&a.a, &a.a_clean, a.threshold)?;
    let pb = prepare_files(&a.b, &a.b_clean, a.threshold)?;
    let cfg = a.training.config();
    let plan = SamplingPlan::scaled(cfg.seed, a.scale);
    let out = harness::run_cross_domain(&pa.pool, &pb.pool, &plan, &spec, &cfg, a.repeats).map_err(data("crossdomain"))?;
    write_report(&a.out_dir, &out.report)?;
    if let Some(dir) = &a.models_dir {
        fs::create_dir_all(dir).map_err(data(&dir.display().to_string()))?;
        for (name, repeat, model) in &out.models {
            let p = dir.join(format!("{name}-r{repeat}.bfm"));
            model.save(&p).map_err(data(&p.display().to_string()))?;
        }
    }
    println!("{}", out.report.summary_json());
    Ok(())
}

fn flag(a: FlagArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model).map_err(data(&a.model.display().to_string()))?;
    let e = load_echogram(&a.input)?;
    let flags = harness::flag_pings(&model, &e, a.threshold, a.passes, a.seed).map_err(data("flag"))?;
    write(&a.out, harness::flags_to_csv(&flags))
}

fn verify(a: VerifyArgs) -> Result<()> {
    let e = load_echogram(&a.input)?;
    let has_nan = e.has_nan();
    let min = e.min_value();
    let report = serde_json::json!({ "rows": e.rows(), "cols": e.cols(), "has_nan": has_nan, "min_db": min });
    println!("{report}");
    if has_nan {
        return Err(CliError::Data(format!("{} contains NaN", a.input.display())));
    }
    if min < a.min_db {
        return Err(CliError::Data(format!("{} has values down to {min} dB, below {}", a.input.display(), a.min_db)));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServeConfig::load(&a.config).map_err(data("serve config"))?;
    let state = AppState::from_config(&cfg).map_err(data("serve"))?;
    let port = service::port_from_env().map_err(data("serve"))?;
    let rt = tokio::runtime::Runtime::new().map_err(data("serve"))?;
    eprintln!("{{\"listening\":\"{}:{}\"}}", a.host, port);
    rt.block_on(service::serve(state, &a.host, port)).map_err(data("serve"))
}
