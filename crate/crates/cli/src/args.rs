use std::path::PathBuf;

use aemix::config::PipelineConfig;
use aemix::windowing::ThresholdPolicy;
use aemix::WaveFormat;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "aemix",
    version,
    about = "Acoustic-emission burst detection and clustering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic waveform or hit stream with ground truth.
    Synth(SynthArgs),
    /// Score windows against a background model and flag anomalies.
    Detect(DetectArgs),
    /// Fit the Poisson mixture to windowed counts and segment events.
    Cluster(ClusterArgs),
    /// Run the online mixture over a hit file and raise alarms.
    Monitor(MonitorArgs),
    /// Extract waveform features for annotated events.
    Features(FeaturesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    LeadBreak,
    JournalBearing,
    OffsetBursts,
    DamageStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    RawF32Le,
    RawI16Le,
}

impl From<FormatArg> for WaveFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => WaveFormat::Csv,
            FormatArg::RawF32Le => WaveFormat::RawF32Le,
            FormatArg::RawI16Le => WaveFormat::RawI16Le,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub preset: Option<Preset>,
    /// JSON synthetic-signal description, used instead of a preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Waveform file, or hit container for the damage-stream preset.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Ground truth: annotations JSON, or JSON-lines of (hit, family) for
    /// hit streams.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Hit streams only: number of hits before decimation.
    #[arg(long)]
    pub hits: Option<u64>,
    /// Hit streams only: generate just the hits decimation would keep.
    #[arg(long, default_value_t = 1.0)]
    pub keep_ratio: f64,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Hz; taken from the annotations file when omitted.
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Annotations JSON written by `synth`.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

/// Pipeline settings: a TOML file, then flag overrides.
#[derive(Debug, Args)]
pub struct Tuning {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, conflicts_with = "threshold_volts")]
    pub threshold_percentile: Option<f64>,
    #[arg(long)]
    pub threshold_volts: Option<f64>,
    /// Count upward crossings of `v` instead of `|v|`.
    #[arg(long)]
    pub no_rectify: bool,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub prior_shape: Option<f64>,
    #[arg(long)]
    pub prior_rate: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub training_windows: Option<usize>,
    #[arg(long)]
    pub min_probability: Option<f64>,
    #[arg(long)]
    pub keep_ratio: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
}

impl Tuning {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                PipelineConfig::load(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(q) = self.threshold_percentile {
            cfg.threshold = ThresholdPolicy::percentile(q)?.with_rectify(cfg.threshold.rectify);
        }
        if let Some(v) = self.threshold_volts {
            cfg.threshold = ThresholdPolicy::fixed(v)?.with_rectify(cfg.threshold.rectify);
        }
        if self.no_rectify {
            cfg.threshold.rectify = false;
        }
        if let Some(v) = self.window {
            cfg.window.length = v;
        }
        if let Some(v) = self.overlap {
            cfg.window.overlap = v;
        }
        if self.prior_shape.is_some() || self.prior_rate.is_some() {
            cfg.prior = aemix::GammaParams::new(
                self.prior_shape.unwrap_or(cfg.prior.shape()),
                self.prior_rate.unwrap_or(cfg.prior.rate()),
            )?;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.sweeps {
            cfg.sweeps = v;
        }
        if let Some(v) = self.burn_in {
            cfg.burn_in = v;
        }
        if let Some(v) = self.training_windows {
            cfg.training_windows = v;
        }
        if let Some(v) = self.min_probability {
            cfg.segmentation.min_probability = v;
        }
        if let Some(v) = self.keep_ratio {
            cfg.keep_ratio = v;
        }
        if let Some(v) = self.warmup {
            cfg.monitor.warmup = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tuning: Tuning,
    /// NLL trace CSV.
    #[arg(long)]
    pub trace: PathBuf,
    /// Flagged intervals JSON.
    #[arg(long)]
    pub flags: PathBuf,
    /// Override the NLL flag threshold.
    #[arg(long)]
    pub flag_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Event records, JSON lines.
    #[arg(long)]
    pub events: PathBuf,
    /// Final model state JSON (resumable).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Hit container.
    #[arg(long)]
    pub hits: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Alarm events, JSON lines.
    #[arg(long)]
    pub alarms: PathBuf,
    /// Cumulative cluster tracks CSV.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Final model state JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Feature records, JSON lines.
    #[arg(long)]
    pub out: PathBuf,
}
