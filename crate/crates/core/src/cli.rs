//! The `skelmap` command line: one subcommand per pipeline stage.
//!
//! Settings come from an optional JSON run configuration (`--config`) with
//! individual flags layered on top. Every failure prints one line
//! `error[<category>]: <detail>` to stderr and exits 2 (usage), 3 (data or
//! format) or 4 (numeric).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_windows, parse_ranges, ranges_to_json, AbnormalRange, Dataset, DatasetKind, DatasetRecord, WindowSpec,
    DATASET_MAGIC,
};
use crate::error::{Error, Result};
use crate::evalkit::{export_latents, roc_curve, score_dataset, ScoreSeries};
use crate::io::{read_bytes, read_text, write_atomic};
use crate::models::{Architecture, ModelCheckpoint, ModelConfig, CHECKPOINT_MAGIC};
use crate::poseio::{parse_keypoint_stream, preprocess_records, LimbTopology, PreprocessConfig, IMAGE_SIDE};
use crate::synthgen::{frames_to_jsonl, test_corpus, training_corpus, Corpus};
use crate::trainer::{train_with, LossLog, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "skelmap", version, about = "Skeleton-map anomaly detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub latent_dim: Option<usize>,
    /// Frames per sequential skeleton map.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Binarization threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Limb stroke width in canvas pixels.
    #[arg(long, global = true)]
    pub stroke_width: Option<f64>,
    /// Output file (a directory for `synth` and `eval`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Lstmvae,
    Ae,
    Vae,
}

impl From<ModelArg> for Architecture {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lstmvae => Architecture::LstmVae,
            ModelArg::Ae => Architecture::Ae,
            ModelArg::Vae => Architecture::Vae,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Normal-only training corpus.
    Train,
    /// Labeled corpus with embedded abnormal actions.
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic keypoint stream and its abnormal ranges.
    Synth {
        #[arg(long, value_enum, default_value = "test", conflicts_with = "spec")]
        preset: Preset,
        /// Corpus specification JSON instead of a preset.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Preprocess keypoint JSON into a dataset of skeleton images.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Abnormal ranges JSON; labels every frame.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Cut a frame dataset into sequential skeleton maps.
    Windows {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Train a model on a normal-only dataset; writes the checkpoint and
    /// `<out>.loss.csv`.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Print the mean loss after every epoch.
        #[arg(long)]
        verbose: bool,
    },
    /// Score every record of a dataset.
    Score {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Include the KL term in the score.
        #[arg(long)]
        kl: bool,
    },
    /// ROC curve and AUROC of a labeled dataset (or a score CSV).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Evaluate an existing score CSV instead of scoring.
        #[arg(long, conflicts_with_all = ["checkpoint", "input"])]
        scores: Option<PathBuf>,
        #[arg(long)]
        kl: bool,
    },
    /// Summarize any artifact: dataset, checkpoint, run config or CSV.
    Inspect { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub ranges: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub latent_dim: usize,
    pub lstm_hidden: usize,
    pub feature_dim: usize,
    pub conv_channels: [usize; 2],
}

impl Default for NetworkSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            latent_dim: m.latent_dim,
            lstm_hidden: m.lstm_hidden,
            feature_dim: m.feature_dim,
            conv_channels: m.conv_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    /// Defaults to 16 for the LSTM-VAE and 32 for the baselines.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: None,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            shuffle: t.shuffle,
        }
    }
}

/// Declarative settings for every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: Architecture,
    /// Frames per window; `None` follows the input dataset (30 when there
    /// is none).
    pub window: Option<usize>,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub preprocess: PreprocessConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: Architecture::LstmVae,
            window: None,
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            preprocess: PreprocessConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.model_config(self.window.unwrap_or(WindowSpec::default().length))
            .validate()?;
        self.train_config().validate()
    }

    /// Loads `--config` when given, then applies the flags.
    pub fn resolve(common: &CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => Self::from_json(&read_text(path)?)?,
            None => Self::default(),
        };
        if let Some(v) = common.seed {
            cfg.seed = v;
        }
        if let Some(v) = common.model {
            cfg.model = v.into();
        }
        if let Some(v) = common.epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = common.batch_size {
            cfg.training.batch_size = Some(v);
        }
        if let Some(v) = common.latent_dim {
            cfg.network.latent_dim = v;
        }
        if let Some(v) = common.window {
            cfg.window = Some(v);
        }
        if let Some(v) = common.threshold {
            cfg.preprocess.threshold = v;
        }
        if let Some(v) = common.stroke_width {
            cfg.preprocess.stroke_width = v;
        }
        if let Some(v) = &common.out {
            cfg.paths.out = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, window: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: self.network.latent_dim,
            window,
            lstm_hidden: self.network.lstm_hidden,
            feature_dim: self.network.feature_dim,
            image_side: IMAGE_SIDE,
            conv_channels: self.network.conv_channels,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::for_architecture(self.model);
        let s = &self.training;
        t.epochs = s.epochs;
        if let Some(b) = s.batch_size {
            t.batch_size = b;
        }
        t.seed = self.seed;
        t.learning_rate = s.learning_rate;
        t.beta1 = s.beta1;
        t.beta2 = s.beta2;
        t.epsilon = s.epsilon;
        t.shuffle = s.shuffle;
        t
    }
}

fn require(value: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn load_ranges(path: Option<&Path>) -> Result<Option<Vec<AbnormalRange>>> {
    path.map(|p| parse_ranges(&read_text(p)?)).transpose()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Sibling path with `suffix` appended to the file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Runs one parsed invocation; human-readable output goes to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.common)?;
    let mut text = String::new();
    let paths = &cfg.paths;
    match cli.command {
        Command::Synth { preset, spec } => {
            let dir = require(None, &paths.out, "out")?;
            let corpus = match spec {
                Some(p) => serde_json::from_str::<Corpus>(&read_text(&p)?).map_err(|e| Error::Parse {
                    context: p.display().to_string(),
                    detail: e.to_string(),
                })?,
                None => match preset {
                    Preset::Train => training_corpus(cfg.seed),
                    Preset::Test => test_corpus(cfg.seed),
                },
            };
            let seg = corpus.generate()?;
            create_dir(&dir)?;
            write_atomic(&dir.join("keypoints.jsonl"), frames_to_jsonl(&seg.frames).as_bytes())?;
            write_atomic(&dir.join("ranges.json"), ranges_to_json(&seg.ranges).as_bytes())?;
            let _ = writeln!(
                text,
                "frames={} segments={} abnormal_ranges={}",
                seg.frames.len(),
                corpus.segments.len(),
                seg.ranges.len()
            );
        }
        Command::Ingest { input, ranges } => {
            let input = require(input, &paths.input, "input")?;
            let target = require(None, &paths.out, "out")?;
            let ranges = load_ranges(ranges.as_deref().or(paths.ranges.as_deref()))?;
            let (records, parsed) = parse_keypoint_stream(&read_text(&input)?)?;
            let (images, report) = preprocess_records(&records, &cfg.preprocess, &LimbTopology::body25());
            let ds = Dataset::from_frames(&images, ranges.as_deref())?;
            ds.save(&target)?;
            let _ = writeln!(
                text,
                "records={} frames={} skipped={} reused_neck={} multi_person={}",
                parsed.records,
                images.len(),
                report.skipped.len(),
                report.reused_neck,
                parsed.multi_person
            );
        }
        Command::Windows { input, ranges } => {
            let input = require(input, &paths.input, "input")?;
            let target = require(None, &paths.out, "out")?;
            let ranges = load_ranges(ranges.as_deref().or(paths.ranges.as_deref()))?;
            let frames = Dataset::load(&input)?;
            let ds = windows_from_frames(&frames, cfg.window.unwrap_or(WindowSpec::default().length), ranges.as_deref())?;
            ds.save(&target)?;
            let _ = writeln!(text, "windows={} abnormal={}", ds.len(), ds.abnormal_count());
        }
        Command::Train { input, verbose } => {
            let input = require(input, &paths.input, "input")?;
            let target = require(None, &paths.out, "out")?;
            let ds = Dataset::load(&input)?;
            let window = cfg.window.unwrap_or(if ds.kind() == DatasetKind::Windows {
                ds.window_len()
            } else {
                WindowSpec::default().length
            });
            let mut progress = String::new();
            let (ck, log) = train_with(cfg.model, &ds, &cfg.train_config(), &cfg.model_config(window), |r| {
                if verbose {
                    let _ = writeln!(progress, "epoch {}/{} mean_loss={:.6}", r.epoch, r.epochs, r.mean_loss);
                }
            })?;
            text.push_str(&progress);
            ck.save(&target)?;
            log.save(&with_suffix(&target, ".loss.csv"))?;
            let _ = writeln!(
                text,
                "model={} items={} epochs={} first_loss={:.6} final_loss={:.6}",
                cfg.model,
                ds.len(),
                log.epoch_means.len(),
                log.first().unwrap_or(f64::NAN),
                log.last().unwrap_or(f64::NAN)
            );
        }
        Command::Score { checkpoint, input, kl } => {
            let ck = ModelCheckpoint::load(&require(checkpoint, &paths.checkpoint, "checkpoint")?)?;
            let ds = Dataset::load(&require(input, &paths.input, "input")?)?;
            let target = require(None, &paths.out, "out")?;
            let series = score_dataset(&ck, &ds, kl)?;
            series.save(&target)?;
            let _ = writeln!(text, "scored={}", series.len());
        }
        Command::Eval {
            checkpoint,
            input,
            scores,
            kl,
        } => {
            let dir = require(None, &paths.out, "out")?;
            let (series, latents) = match scores {
                Some(p) => (ScoreSeries::from_csv(&read_text(&p)?)?, None),
                None => {
                    let ck = ModelCheckpoint::load(&require(checkpoint, &paths.checkpoint, "checkpoint")?)?;
                    let ds = Dataset::load(&require(input, &paths.input, "input")?)?;
                    if !ds.is_labeled() {
                        return Err(Error::Validation("evaluation needs a labeled dataset".into()));
                    }
                    let series = score_dataset(&ck, &ds, kl)?;
                    let latents = if ck.architecture().is_variational() {
                        let windows: Vec<_> = ds.windows().collect();
                        let labels: Vec<_> = ds.records().iter().map(|r| r.label).collect();
                        Some(export_latents(&ck, &windows, &labels)?)
                    } else {
                        None
                    };
                    (series, latents)
                }
            };
            let roc = roc_curve(&series.labeled_scores())?;
            create_dir(&dir)?;
            roc.save(&dir.join("roc.csv"))?;
            series.save(&dir.join("scores.csv"))?;
            if let Some(l) = latents {
                l.save(&dir.join("latents.csv"))?;
            }
            let _ = writeln!(text, "auroc={:.4}", roc.auroc);
        }
        Command::Inspect { path } => text = inspect(&path, cfg.window.unwrap_or(WindowSpec::default().length))?,
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(Path::new("<stdout>"), e))
}

/// Windows over the frames of a frame dataset. A window takes the label of
/// its end frame unless `ranges` relabels it.
pub fn windows_from_frames(frames: &Dataset, window: usize, ranges: Option<&[AbnormalRange]>) -> Result<Dataset> {
    if frames.kind() != DatasetKind::Frames {
        return Err(Error::Incompatible("windows are cut from a frame dataset".into()));
    }
    let spec = WindowSpec::new(window)?;
    let images: Vec<_> = frames.windows().flat_map(|w| w.to_images()).collect();
    let windows = build_windows(&images, spec);
    if let Some(r) = ranges {
        return Dataset::from_labeled(crate::dataset::label_windows(&windows, r)?, window);
    }
    let labels: HashMap<(&str, u64), _> = frames
        .records()
        .iter()
        .map(|r| ((r.window.segment_id(), r.window.start_frame()), r.label))
        .collect();
    let records = windows
        .into_iter()
        .map(|w| {
            let label = labels.get(&(w.segment_id(), w.end_frame())).copied().flatten();
            DatasetRecord { window: w, label }
        })
        .collect();
    Dataset::new(DatasetKind::Windows, window, records)
}

fn crc_of(bytes: &[u8]) -> String {
    match bytes.len().checked_sub(4) {
        Some(n) => format!("{:08x}", u32::from_le_bytes(bytes[n..].try_into().expect("4 bytes"))),
        None => "none".into(),
    }
}

/// Human-readable summary of an artifact, detected by content.
pub fn inspect(path: &Path, window: usize) -> Result<String> {
    let bytes = read_bytes(path)?;
    let mut s = String::new();
    if bytes.starts_with(&DATASET_MAGIC[..5]) {
        let ds = Dataset::from_bytes(&bytes)?;
        let kind = match ds.kind() {
            DatasetKind::Frames => "frames",
            DatasetKind::Windows => "windows",
        };
        let _ = writeln!(s, "dataset kind={kind} window_len={}", ds.window_len());
        let _ = writeln!(s, "records={}", ds.len());
        if ds.kind() == DatasetKind::Frames {
            let images: Vec<_> = ds.windows().flat_map(|w| w.to_images()).collect();
            let n = build_windows(&images, WindowSpec::new(window)?).len();
            let _ = writeln!(s, "frames={} windows_at_t{window}={n}", ds.len());
        } else {
            let _ = writeln!(s, "windows={}", ds.len());
        }
        if ds.is_labeled() {
            let _ = writeln!(s, "labeled=yes abnormal={} normal={}", ds.abnormal_count(), ds.len() - ds.abnormal_count());
        } else {
            let _ = writeln!(s, "labeled=no");
        }
        for (seg, n) in ds.segment_counts() {
            let _ = writeln!(s, "segment {seg}: {n}");
        }
        let _ = writeln!(s, "crc32={}", crc_of(&bytes));
    } else if bytes.starts_with(&CHECKPOINT_MAGIC[..4]) {
        let ck = ModelCheckpoint::from_bytes(&bytes)?;
        let m = &ck.model;
        let _ = writeln!(s, "checkpoint model={} epochs={} seed={}", ck.architecture(), ck.epochs, ck.seed);
        let _ = writeln!(s, "config {}", serde_json::to_string(m.config()).expect("config serializes"));
        let _ = writeln!(s, "parameters={} tensors={}", m.parameter_count(), m.params().len());
        let _ = writeln!(s, "crc32={}", crc_of(&bytes));
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: unrecognized binary file", path.display())))?;
        let first = text.lines().next().unwrap_or("").trim();
        if first.starts_with('{') || first.starts_with('[') {
            if let Ok(cfg) = RunConfig::from_json(&text) {
                let _ = writeln!(s, "run config (resolved)\n{}", cfg.to_json());
            } else if let Ok(ranges) = parse_ranges(&text) {
                let frames: u64 = ranges.iter().map(|r| r.last - r.first + 1).sum();
                let _ = writeln!(s, "abnormal ranges={} frames={frames}", ranges.len());
            } else {
                let (records, report) = parse_keypoint_stream(&text)?;
                let _ = writeln!(s, "keypoint records={} empty={} multi_person={}", records.len(), report.empty, report.multi_person);
            }
        } else if first == "epoch,mean_loss" {
            let log = LossLog::from_csv(&text)?;
            let _ = writeln!(
                s,
                "loss log epochs={} first={:?} last={:?}",
                log.epoch_means.len(),
                log.first().unwrap_or(f64::NAN),
                log.last().unwrap_or(f64::NAN)
            );
        } else if first == "segment,frame,score,label" {
            let series = ScoreSeries::from_csv(&text)?;
            let labeled = series.labeled_scores();
            let _ = writeln!(s, "score series entries={} labeled={}", series.len(), labeled.len());
            if let Ok(roc) = roc_curve(&labeled) {
                let _ = writeln!(s, "auroc={:.4}", roc.auroc);
            }
        } else if first == "threshold,fpr,tpr" {
            let points = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
            let auroc = text.lines().find_map(|l| l.strip_prefix("# auroc=")).unwrap_or("?");
            let _ = writeln!(s, "roc curve points={points} auroc={auroc}");
        } else {
            return Err(Error::Format(format!("{}: unrecognized artifact", path.display())));
        }
    }
    Ok(s)
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            let category = e.category();
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", category.as_str());
            category.exit_code()
        }
    }
}
