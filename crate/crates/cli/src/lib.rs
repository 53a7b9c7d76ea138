//! `rosebreed`: operator entry point for the rose breed detection pipeline.
//!
//! Exit status: 0 success, 2 usage, 3 data error, 4 training failure,
//! 5 I/O failure.

pub mod pipeline;
pub mod stages;

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Args, Parser, Subcommand};
use rosebreed_core::dataset::{synthetic, AugmentationConfig, DEFAULT_BREEDS};
use rosebreed_core::models::BackboneFamily;
use rosebreed_core::registry::list_models;
use rosebreed_core::training::{OptimizerKind, TrainingConfig};
use rosebreed_core::{Error, ErrorCategory, Result};
use rosebreed_service::config::{BREEDS_FILE_ENV, PORT_ENV, REGISTRY_DIR_ENV};
use rosebreed_service::ServiceConfig;
use serde_json::{json, Value};

use crate::pipeline::{run_pipeline, PipelineConfig, StageCounts};
use crate::stages::BackboneChoice;

/// Executable used for `compare --parallel` workers; defaults to the
/// running binary.
pub const WORKER_EXE_ENV: &str = "ROSE_CLI_EXE";

#[derive(Debug, Parser)]
#[command(name = "rosebreed", version, about = "Rose breed detection pipeline")]
pub struct Cli {
    /// Print a machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic class-per-folder corpus.
    Synth(SynthArgs),
    /// Scan a class-per-folder image tree into a manifest.
    Ingest(IngestArgs),
    /// Stratified train/test split of an ingested manifest.
    Split(SplitArgs),
    /// Generate augmented training images.
    Augment(AugmentArgs),
    /// Train one backbone and register the model.
    Train(TrainArgs),
    /// Confusion matrix, ROC curves and metrics for a registered model.
    Evaluate(EvaluateArgs),
    /// Side-by-side train/test accuracy and loss table.
    Compare(CompareArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
    /// Run every stage from one pipeline config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Class names; the five default breeds when omitted.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Colored shapes, this many per class.
    #[arg(long, conflicts_with = "counts")]
    pub per_class: Option<usize>,
    /// Placeholder images with these per-class counts.
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data_root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Class order; sorted directory names when omitted.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Log and skip files that fail to decode.
    #[arg(long)]
    pub skip_undecodable: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for generated images.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Updated manifest path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON augmentation config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub multiplier: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shear_range: Option<f64>,
    #[arg(long)]
    pub zoom_range: Option<f64>,
    #[arg(long)]
    pub no_horizontal_flip: bool,
    #[arg(long)]
    pub no_vertical_flip: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BackboneArgs {
    /// Input size in pixels (square); the family default when omitted.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Seeded random initialization instead of cached pretrained weights.
    #[arg(long)]
    pub random_init: Option<u64>,
    /// Train the whole network rather than only the head.
    #[arg(long)]
    pub unfreeze: bool,
    /// With a frozen extractor, also train this many top blocks.
    #[arg(long, default_value_t = 0)]
    pub fine_tune_top: usize,
}

impl BackboneArgs {
    fn choice(&self, family: BackboneFamily) -> BackboneChoice {
        BackboneChoice {
            family,
            input_size: self.input_size.map(|s| (s, s)),
            random_init_seed: self.random_init,
            freeze_extractor: !self.unfreeze,
            fine_tune_top: self.fine_tune_top,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    /// JSON training config; flags below override it.
    #[arg(long = "training-config")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// SGD with this momentum instead of Adam.
    #[arg(long)]
    pub sgd_momentum: Option<f64>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

impl TrainingArgs {
    fn config(&self) -> Result<TrainingConfig> {
        let mut c = match &self.config {
            Some(p) => TrainingConfig::read(p)?,
            None => TrainingConfig::default(),
        };
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(momentum) = self.sgd_momentum {
            c.optimizer = OptimizerKind::SgdMomentum { momentum };
        }
        if let Some(v) = self.shuffle_seed {
            c.shuffle_seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub family: BackboneFamily,
    #[command(flatten)]
    pub backbone: BackboneArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, env = REGISTRY_DIR_ENV, default_value = "registry")]
    pub registry: PathBuf,
    /// Also write accuracy/loss curves here.
    #[arg(long)]
    pub plots_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model id, or `latest`.
    #[arg(long, default_value = "latest")]
    pub model_id: String,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, env = REGISTRY_DIR_ENV, default_value = "registry")]
    pub registry: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Models to compare; every registered model when omitted.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Train all four transfer backbones on `--manifest` first.
    #[arg(long, requires = "manifest")]
    pub all_backbones: bool,
    /// Run the backbone trainings as separate worker processes.
    #[arg(long, requires = "all_backbones")]
    pub parallel: bool,
    /// Re-score each model on this manifest's test split.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub backbone: BackboneArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, env = REGISTRY_DIR_ENV, default_value = "registry")]
    pub registry: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = REGISTRY_DIR_ENV, default_value = "registry")]
    pub registry: PathBuf,
    #[arg(long, env = BREEDS_FILE_ENV, default_value = "data/breeds.json")]
    pub breeds: PathBuf,
    /// Serve this model instead of the newest.
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, env = PORT_ENV, default_value_t = rosebreed_service::config::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value_t = 10)]
    pub max_upload_mb: usize,
    #[arg(long, default_value_t = rosebreed_service::config::DEFAULT_LOW_CONFIDENCE_THRESHOLD)]
    pub low_confidence_threshold: f64,
    /// Keep uploaded images here (off by default).
    #[arg(long)]
    pub save_uploads: Option<PathBuf>,
    /// Allowed browser origin; repeatable. Any origin when omitted.
    #[arg(long)]
    pub cors_origin: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// What a command reports: a JSON summary and its text rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Value,
    pub lines: Vec<String>,
}

impl Outcome {
    fn new(summary: Value, lines: Vec<String>) -> Self {
        Self { summary, lines }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Training => 4,
        ErrorCategory::Io => 5,
    }
}

fn labels_or_default(labels: &[String]) -> Vec<String> {
    if labels.is_empty() {
        DEFAULT_BREEDS.iter().map(|s| s.to_string()).collect()
    } else {
        labels.to_vec()
    }
}

fn counts_line(c: &StageCounts) -> Vec<String> {
    c.labels
        .iter()
        .enumerate()
        .map(|(i, name)| {
            format!(
                "  {name}: collected {} train {} test {} generated {}",
                c.collected[i], c.train[i], c.test[i], c.generated[i]
            )
        })
        .collect()
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.force),
        Command::Ingest(a) => {
            let labels = (!a.labels.is_empty()).then(|| a.labels.clone());
            let m = stages::ingest(&a.data_root, labels, a.skip_undecodable)?;
            stages::save_manifest(&m, &a.out, cli.force)?;
            let c = StageCounts::of(&m);
            let mut lines = vec![format!("ingested {} images into {}", m.records.len(), a.out.display())];
            lines.extend(counts_line(&c));
            Ok(Outcome::new(to_value(&c), lines))
        }
        Command::Split(a) => {
            let m = stages::split(&stages::load_manifest(&a.manifest)?, a.ratio, a.seed)?;
            stages::save_manifest(&m, &a.out, cli.force)?;
            let c = StageCounts::of(&m);
            let mut lines = vec![format!(
                "train counts ({}); test counts ({})",
                join(&c.train),
                join(&c.test)
            )];
            lines.extend(counts_line(&c));
            Ok(Outcome::new(to_value(&c), lines))
        }
        Command::Augment(a) => augment(a, cli.force),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a, cli.force),
        Command::Compare(a) => compare(a, cli.force),
        Command::Serve(a) => serve(a),
        Command::Run(a) => {
            let config = PipelineConfig::read(&a.config)?;
            let s = run_pipeline(&config, cli.force)?;
            let mut lines = vec![format!("grand training total {}", s.counts.train_total)];
            for m in &s.models {
                lines.push(format!(
                    "{} {}: test accuracy {:.4} ({:.1} s)",
                    m.family,
                    m.model_id,
                    m.metrics.test_accuracy.unwrap_or(f64::NAN),
                    m.seconds
                ));
            }
            lines.push(format!("best model: {} ({:.1} s total)", s.comparison.best, s.seconds));
            Ok(Outcome::new(to_value(&s), lines))
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
}

fn synth(a: &SynthArgs, force: bool) -> Result<Outcome> {
    stages::prepare_output(&a.out, force)?;
    let labels = labels_or_default(&a.labels);
    let names: Vec<&str> = labels.iter().map(String::as_str).collect();
    let counts = match (a.per_class, a.counts.is_empty()) {
        (Some(n), _) => {
            synthetic::write_shape_corpus(&a.out, &names, n, a.size, a.seed)?;
            vec![n; names.len()]
        }
        (None, false) => {
            if a.counts.len() != names.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} counts for {} labels",
                    a.counts.len(),
                    names.len()
                )));
            }
            synthetic::write_placeholder_corpus(&a.out, &names, &a.counts, a.size)?;
            a.counts.clone()
        }
        (None, true) => {
            return Err(Error::InvalidArgument("pass --per-class or --counts".into()));
        }
    };
    Ok(Outcome::new(
        json!({ "out": a.out, "labels": labels, "counts": counts }),
        vec![format!("wrote {} images to {}", counts.iter().sum::<usize>(), a.out.display())],
    ))
}

fn augment(a: &AugmentArgs, force: bool) -> Result<Outcome> {
    let mut config = match &a.config {
        Some(p) => stages::read_json::<AugmentationConfig>(p)?,
        None => AugmentationConfig::default(),
    };
    if let Some(v) = a.multiplier {
        config.multiplier = v;
    }
    if let Some(v) = a.seed {
        config.rng_seed = v;
    }
    if let Some(v) = a.shear_range {
        config.shear_range = v;
    }
    if let Some(v) = a.zoom_range {
        config.zoom_range = v;
    }
    config.horizontal_flip &= !a.no_horizontal_flip;
    config.vertical_flip &= !a.no_vertical_flip;
    config.validate()?;
    stages::prepare_output(&a.out, force)?;
    let m = stages::augment(&stages::load_manifest(&a.manifest)?, &config, &a.out_dir, force)?;
    stages::save_manifest(&m, &a.out, force)?;
    let c = StageCounts::of(&m);
    let mut lines = vec![format!(
        "generated ({}); grand training total {}",
        join(&c.generated),
        c.train_total
    )];
    lines.extend(counts_line(&c));
    Ok(Outcome::new(to_value(&c), lines))
}

fn train(a: &TrainArgs) -> Result<Outcome> {
    let config = a.training.config()?;
    let manifest = stages::load_manifest(&a.manifest)?;
    let s = stages::train_backbone(&manifest, &a.backbone.choice(a.family), &config, &a.registry)?;
    if let Some(dir) = &a.plots_dir {
        let meta = list_models(&a.registry)?
            .models
            .into_iter()
            .find(|m| m.model_id == s.model_id)
            .ok_or_else(|| Error::NotFound(s.model_id.clone()))?;
        meta.history.write_plots(dir, a.family.display_name())?;
    }
    let lines = vec![format!(
        "registered {}: train accuracy {:.4}, test accuracy {:.4} ({:.1} s)",
        s.model_id,
        s.metrics.train_accuracy,
        s.metrics.test_accuracy.unwrap_or(f64::NAN),
        s.seconds
    )];
    Ok(Outcome::new(to_value(&s), lines))
}

fn evaluate(a: &EvaluateArgs, force: bool) -> Result<Outcome> {
    let id = stages::resolve_model_id(&a.registry, &a.model_id)?;
    let manifest = stages::load_manifest(&a.manifest)?;
    stages::prepare_output(&a.out_dir, force)?;
    let (meta, report) = stages::evaluate_model(&a.registry, &id, &manifest)?;
    let last = meta
        .history
        .last()
        .ok_or_else(|| Error::Dataset(format!("{id} has an empty history")))?;
    let comparison = rosebreed_core::evaluation::ComparisonReport::from_rows(vec![
        rosebreed_core::evaluation::ComparisonRow::new(
            report.model.clone(),
            last.train_accuracy,
            last.train_loss,
            rosebreed_core::evaluation::TestMetrics {
                accuracy: report.accuracy,
                loss: report.loss,
            },
        ),
    ])?;
    let files = rosebreed_core::evaluation::render_report(&comparison, &[report.clone()], &a.out_dir)?;
    let aucs: Vec<f64> = report.roc.iter().map(|r| r.auc).collect();
    Ok(Outcome::new(
        json!({
            "model_id": id,
            "accuracy": report.accuracy,
            "loss": report.loss,
            "auc": aucs,
            "confusion": report.confusion.counts,
            "files": files,
        }),
        vec![
            format!("{id}: test accuracy {:.4}, loss {:.4}", report.accuracy, report.loss),
            format!("per-class AUC: {}", aucs.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")),
            format!("wrote {} files to {}", files.len(), a.out_dir.display()),
        ],
    ))
}

fn worker_exe() -> Result<PathBuf> {
    match std::env::var_os(WORKER_EXE_ENV) {
        Some(p) => Ok(PathBuf::from(p)),
        None => std::env::current_exe().map_err(|e| Error::io("current executable", e)),
    }
}

fn train_in_worker(exe: &Path, a: &CompareArgs, family: BackboneFamily) -> Result<std::process::Child> {
    let mut cmd = Process::new(exe);
    cmd.arg("--json")
        .arg("train")
        .arg("--manifest")
        .arg(a.manifest.as_ref().expect("required by clap"))
        .arg("--family")
        .arg(family.as_str())
        .arg("--registry")
        .arg(&a.registry);
    let b = &a.backbone;
    if let Some(v) = b.input_size {
        cmd.arg("--input-size").arg(v.to_string());
    }
    if let Some(v) = b.random_init {
        cmd.arg("--random-init").arg(v.to_string());
    }
    if b.unfreeze {
        cmd.arg("--unfreeze");
    }
    cmd.arg("--fine-tune-top").arg(b.fine_tune_top.to_string());
    let t = &a.training;
    let mut opt = |flag: &str, v: Option<String>| {
        if let Some(v) = v {
            cmd.arg(flag).arg(v);
        }
    };
    opt("--training-config", t.config.as_ref().map(|p| p.display().to_string()));
    opt("--epochs", t.epochs.map(|v| v.to_string()));
    opt("--batch-size", t.batch_size.map(|v| v.to_string()));
    opt("--learning-rate", t.learning_rate.map(|v| v.to_string()));
    opt("--sgd-momentum", t.sgd_momentum.map(|v| v.to_string()));
    opt("--shuffle-seed", t.shuffle_seed.map(|v| v.to_string()));
    cmd.stdout(std::process::Stdio::piped())
        .spawn()
        .map_err(|e| Error::io(exe, e))
}

fn compare(a: &CompareArgs, force: bool) -> Result<Outcome> {
    let manifest = a.manifest.as_deref().map(stages::load_manifest).transpose()?;
    stages::prepare_output(&a.out_dir, force)?;
    let mut ids = a.models.clone();
    let mut trained = Vec::new();
    if a.all_backbones {
        let manifest = manifest.as_ref().expect("required by clap");
        if a.parallel {
            let exe = worker_exe()?;
            let children = BackboneFamily::TRANSFER
                .iter()
                .map(|&f| train_in_worker(&exe, a, f).map(|c| (f, c)))
                .collect::<Result<Vec<_>>>()?;
            for (family, child) in children {
                let out = child
                    .wait_with_output()
                    .map_err(|e| Error::io(&exe, e))?;
                if !out.status.success() {
                    return Err(Error::Training(format!(
                        "{family} worker exited with {}",
                        out.status
                    )));
                }
                let s: stages::TrainSummary = serde_json::from_slice(&out.stdout)
                    .map_err(|e| Error::Schema(format!("{family} worker output: {e}")))?;
                trained.push(s);
            }
        } else {
            let config = a.training.config()?;
            for family in BackboneFamily::TRANSFER {
                trained.push(stages::train_backbone(manifest, &a.backbone.choice(family), &config, &a.registry)?);
            }
        }
        ids.extend(trained.iter().map(|s| s.model_id.clone()));
    }
    if ids.is_empty() {
        ids = list_models(&a.registry)?.models.into_iter().map(|m| m.model_id).collect();
    }
    let s = stages::compare(&a.registry, &ids, manifest.as_ref(), &a.out_dir, true)?;
    let mut lines: Vec<String> = s
        .rows
        .iter()
        .map(|r| {
            format!(
                "  {}: train acc {:.2}% loss {:.2}, test acc {:.2}% loss {:.2}",
                r.model, r.train_accuracy_pct, r.train_loss_pct, r.test_accuracy_pct, r.test_loss_pct
            )
        })
        .collect();
    lines.insert(0, format!("compared {} models; best {}", s.rows.len(), s.best));
    Ok(Outcome::new(json!({ "comparison": s, "trained": trained }), lines))
}

fn serve(a: &ServeArgs) -> Result<Outcome> {
    let config = ServiceConfig {
        registry_dir: a.registry.clone(),
        breeds_file: a.breeds.clone(),
        model_id: a.model_id.clone(),
        bind: SocketAddr::new(a.host, a.port),
        max_upload_bytes: a.max_upload_mb * 1024 * 1024,
        low_confidence_threshold: a.low_confidence_threshold,
        save_uploads: a.save_uploads.clone(),
        cors_origins: a.cors_origin.clone(),
    };
    config.validate().map_err(Error::InvalidArgument)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    runtime
        .block_on(rosebreed_service::serve(config))
        .map_err(|e| Error::io(SocketAddr::new(a.host, a.port).to_string(), e))?;
    Ok(Outcome::new(json!({ "stopped": true }), vec!["service stopped".into()]))
}

/// Runs `cli` and prints its outcome; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(outcome) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("json"));
            } else {
                for line in outcome.lines {
                    println!("{line}");
                }
            }
            0
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": { "category": format!("{:?}", e.category()).to_lowercase(), "message": e.to_string() } }));
            }
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
