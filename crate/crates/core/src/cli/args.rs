use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataprep::{CropWindow, GroundTruthConfig, SpeckleConfig};
use crate::eval::SsimConfig;
use crate::train::TrainConfig;

#[derive(Debug, Parser)]
#[command(
    name = "oct-denoise",
    version,
    about = "Residual-CNN speckle denoising for OCT B-scans",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// File of `key = value` lines supplying defaults for long flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build noisy/clean pairs from repeated volumes by registration and averaging.
    Prepare(PrepareArgs),
    /// Make speckled pairs from clean images or generated phantoms.
    Synth(SynthArgs),
    /// Train the network on a pairs directory.
    Train(TrainArgs),
    /// Denoise images with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score methods on a pairs directory and write a metrics report.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tns,
    Pgm,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Tns => "tns",
            Format::Pgm => "pgm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Noisy,
    Median,
    Nlm,
    Model,
}

/// Parses `y,x,height,width`.
pub fn parse_window(s: &str) -> Result<CropWindow, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [y, x, height, width] if height > 0 && width > 0 => Ok(CropWindow {
            y,
            x,
            height,
            width,
        }),
        _ => Err("expected y,x,height,width with non-zero size".into()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SsimArgs {
    #[arg(long, default_value_t = SsimConfig::default().k1)]
    pub ssim_k1: f64,
    #[arg(long, default_value_t = SsimConfig::default().k2)]
    pub ssim_k2: f64,
    /// Dynamic range of pixel values.
    #[arg(long, default_value_t = SsimConfig::default().dynamic_range)]
    pub ssim_range: f64,
    /// Gaussian window side (odd).
    #[arg(long, default_value_t = SsimConfig::default().window)]
    pub ssim_window: usize,
    #[arg(long, default_value_t = SsimConfig::default().sigma)]
    pub ssim_sigma: f64,
}

impl SsimArgs {
    pub fn config(&self) -> SsimConfig {
        SsimConfig {
            k1: self.ssim_k1,
            k2: self.ssim_k2,
            dynamic_range: self.ssim_range,
            window: self.ssim_window,
            sigma: self.ssim_sigma,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Directory holding one subdirectory of slice files per volume.
    pub volumes: PathBuf,
    /// Output directory; pairs go to `noisy/` and `clean/` inside it.
    pub out: PathBuf,
    /// Index (in name order) of the volume to build pairs for.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Number of volumes M (must match the directory).
    #[arg(long = "volumes", default_value_t = GroundTruthConfig::default().volumes)]
    pub n_volumes: usize,
    /// Nearby B-scans N taken from each other volume.
    #[arg(long, default_value_t = GroundTruthConfig::default().nearby)]
    pub nearby: usize,
    /// Registered candidates L averaged with the target.
    #[arg(long, default_value_t = GroundTruthConfig::default().selected)]
    pub selected: usize,
    /// Crop window `y,x,height,width` applied before registration.
    #[arg(long, value_parser = parse_window)]
    pub crop: Option<CropWindow>,
    #[arg(long, value_enum, default_value_t = Format::Tns)]
    pub format: Format,
    #[command(flatten)]
    pub ssim: SsimArgs,
}

impl PrepareArgs {
    pub fn config(&self) -> GroundTruthConfig {
        GroundTruthConfig {
            volumes: self.n_volumes,
            nearby: self.nearby,
            selected: self.selected,
            crop: self.crop,
            ssim: self.ssim.config(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory; pairs go to `noisy/` and `clean/` inside it.
    pub out: PathBuf,
    /// Directory of clean images to speckle.
    #[arg(long, conflicts_with = "phantoms", required_unless_present = "phantoms")]
    pub input: Option<PathBuf>,
    /// Generate this many layered phantoms instead of reading images.
    #[arg(long)]
    pub phantoms: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    /// Gamma shape of the speckle (variance 1/looks).
    #[arg(long, default_value_t = 4.0)]
    pub looks: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Tns)]
    pub format: Format,
}

impl SynthArgs {
    pub fn speckle(&self, seed: u64) -> SpeckleConfig {
        SpeckleConfig {
            looks: self.looks,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Pairs directory with `noisy/` and `clean/` subdirectories.
    pub pairs: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long, default_value_t = TrainConfig::default().patch_size)]
    pub patch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().patch_stride)]
    pub patch_stride: usize,
    #[arg(long, default_value_t = TrainConfig::default().variance_floor)]
    pub variance_floor: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta1)]
    pub beta1: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta2)]
    pub beta2: f64,
    #[arg(long, default_value_t = TrainConfig::default().adam_eps)]
    pub adam_eps: f64,
    #[arg(long, default_value_t = TrainConfig::default().augment_hflip, action = clap::ArgAction::Set)]
    pub augment_hflip: bool,
    #[arg(long, default_value_t = TrainConfig::default().validation_fraction)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = TrainConfig::default().early_stop_patience)]
    pub early_stop_patience: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            patch_size: self.patch_size,
            patch_stride: self.patch_stride,
            variance_floor: self.variance_floor,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            augment_hflip: self.augment_hflip,
            validation_fraction: self.validation_fraction,
            early_stop_patience: self.early_stop_patience,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    pub checkpoint: PathBuf,
    /// Image files or directories of images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory (file names are kept).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Pairs directory with `noisy/` and `clean/` subdirectories.
    pub pairs: PathBuf,
    /// Report path stem; `.csv` and `.txt` are written.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "noisy,median,nlm")]
    pub methods: Vec<MethodName>,
    /// Checkpoint for the `model` method.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Median windows swept for the best PSNR.
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub median_windows: Vec<usize>,
    /// NLM patch radii swept.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub nlm_patch: Vec<usize>,
    /// NLM search radii swept.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub nlm_search: Vec<usize>,
    /// NLM filtering strengths swept.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    pub nlm_h: Vec<f64>,
    /// PSNR peak value.
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Region of interest `y,x,height,width` for both metrics.
    #[arg(long, value_parser = parse_window)]
    pub roi: Option<CropWindow>,
    #[command(flatten)]
    pub ssim: SsimArgs,
}
