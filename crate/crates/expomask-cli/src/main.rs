//! `expomask`: synthesize exposure stacks, generate ground-truth masks,
//! compare thresholding methods, train the segmentation U-Net, evaluate
//! it, and verify every gradient with finite differences.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use expomask_core::gtgen::{PixelRange, ThresholdRanges};
use expomask_core::image::SynthSceneParams;
use expomask_core::pipeline::{
    self, build_training_set, compare_gt_methods_with, coverage_csv, evaluate, generate_gt,
    parse_config_file, synth_dataset, TrainConfig,
};
use expomask_core::{ExposureClass, GtMethod, LossKind, MetricRow};

#[derive(Parser)]
#[command(
    name = "expomask",
    about = "Well-exposed-region masks for multi-exposure LDR stacks",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render synthetic multi-exposure scenes into a dataset directory.
    Synth(SynthArgs),
    /// Generate ground-truth masks for every scene of a dataset.
    Gt(GtArgs),
    /// Emit a per-scene CSV comparing manual and Otsu mask coverage.
    CompareGt(CompareGtArgs),
    /// Train a segmentation network and save its weights.
    Train(TrainArgs),
    /// Evaluate saved weights against a dataset and write the report CSV.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes to render.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Scene size as HxW, e.g. 64x64.
    #[arg(long, default_value = "64x64")]
    size: String,
    /// Base seed; scene k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian blobs per scene.
    #[arg(long, default_value_t = 6)]
    blobs: usize,
    /// Additive noise sigma in 8-bit units.
    #[arg(long, default_value_t = 2.0)]
    noise_sigma: f64,
    /// Low,mid,high exposure multipliers (strictly increasing).
    #[arg(long, default_value = "0.4,1.0,2.5")]
    scales: String,
    /// Gamma of the exposure mapping.
    #[arg(long, default_value_t = 2.2)]
    gamma: f64,
}

#[derive(Args)]
struct GtArgs {
    /// Thresholding method: manual | otsu.
    #[arg(long)]
    method: GtMethod,
    /// Exposure class to mask: low | high.
    #[arg(long)]
    exposure: ExposureClass,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Manual range for low-exposure images, as A:B inclusive.
    #[arg(long, default_value = "120:255")]
    low_range: String,
    /// Manual range for high-exposure images, as A:B inclusive.
    #[arg(long, default_value = "0:200")]
    high_range: String,
}

#[derive(Args)]
struct CompareGtArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "120:255")]
    low_range: String,
    #[arg(long, default_value = "0:200")]
    high_range: String,
}

/// TrainConfig fields as optional flags; anything set here overrides the
/// config file, which overrides the defaults.
#[derive(Args, Clone)]
struct ConfigOverrides {
    /// Config file in key = value form.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exposure class: low | high.
    #[arg(long)]
    exposure: Option<ExposureClass>,
    /// Ground-truth method when no gt files ship: manual | otsu.
    #[arg(long)]
    gt: Option<GtMethod>,
    /// Loss: bce | focal | dice_bce.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Square input resolution (multiple of 16).
    #[arg(long)]
    size: Option<usize>,
    /// Divisor for the network channel widths.
    #[arg(long)]
    channel_scale: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Network input channels: 1 | 3.
    #[arg(long)]
    input_channels: Option<usize>,
}

impl ConfigOverrides {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.exposure {
            cfg.exposure_class = v;
        }
        if let Some(v) = self.gt {
            cfg.gt_method = v;
        }
        if let Some(v) = self.loss {
            cfg.loss = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.size {
            cfg.input_size = v;
        }
        if let Some(v) = self.channel_scale {
            cfg.channel_scale = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.input_channels {
            cfg.input_channels = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    model_out: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Output report CSV.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Channel-width divisor for the end-to-end network check.
    #[arg(long, default_value_t = 8)]
    scale: usize,
}

fn parse_hw(s: &str) -> anyhow::Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size must be HxW, got '{s}'"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn parse_scales(s: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("scales must be three comma-separated floats, got '{s}'"))?;
    match parts.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("scales must list exactly three values, got '{s}'"),
    }
}

fn parse_range(s: &str) -> anyhow::Result<PixelRange> {
    let (a, b) = s
        .split_once(':')
        .with_context(|| format!("range must be A:B, got '{s}'"))?;
    Ok(PixelRange::new(a.trim().parse()?, b.trim().parse()?)?)
}

fn ranges_from(low: &str, high: &str) -> anyhow::Result<ThresholdRanges> {
    Ok(ThresholdRanges {
        low_range: parse_range(low)?,
        high_range: parse_range(high)?,
    })
}

fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let (h, w) = parse_hw(&args.size)?;
    let base = SynthSceneParams {
        size: (h, w),
        blob_count: args.blobs,
        noise_sigma: args.noise_sigma,
        exposure_scales: parse_scales(&args.scales)?,
        gamma: args.gamma,
        seed: args.seed,
    };
    let ids = synth_dataset(&args.out, args.count, &base)?;
    println!(
        "wrote {} scenes of {}x{} under {}",
        ids.len(),
        h,
        w,
        args.out.display()
    );
    Ok(())
}

fn run_gt(args: GtArgs) -> anyhow::Result<()> {
    let ranges = ranges_from(&args.low_range, &args.high_range)?;
    let written = generate_gt(&args.data, args.method, args.exposure, &ranges)?;
    for (scene, coverage) in &written {
        println!(
            "{scene}: gt_{}.png coverage {:.6}",
            args.exposure.as_str(),
            coverage
        );
    }
    println!(
        "generated {} masks ({}, {} exposure)",
        written.len(),
        args.method.as_str(),
        args.exposure.as_str()
    );
    Ok(())
}

fn run_compare_gt(args: CompareGtArgs) -> anyhow::Result<()> {
    let ranges = ranges_from(&args.low_range, &args.high_range)?;
    let rows = compare_gt_methods_with(&args.data, &ranges)?;
    std::fs::write(&args.out, coverage_csv(&rows))
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} coverage rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = args.overrides.resolve()?;
    let data = build_training_set(&args.data, &cfg)?;
    println!(
        "training on {} scenes ({} exposure, {} gt, {} loss, {} epochs)",
        data.len(),
        cfg.exposure_class.as_str(),
        cfg.gt_method.as_str(),
        cfg.loss.as_str(),
        cfg.epochs
    );
    let (params, report) = pipeline::train(&data, &cfg)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>4}  loss {loss:.6}", epoch + 1);
    }
    pipeline::save_model(&params, &args.model_out)?;
    println!("model written to {}", args.model_out.display());
    println!("{}", MetricRow::csv_header());
    println!("{}", report.final_metrics.to_csv_row());
    println!("wall time {:.1}s", report.wall_seconds);
    Ok(())
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = args.overrides.resolve()?;
    let params = pipeline::load_model(&args.model, &cfg)?;
    let data = build_training_set(&args.data, &cfg)?;
    let row = evaluate(&params, &data, &cfg)?;
    let csv = format!("{}\n{}\n", MetricRow::csv_header(), row.to_csv_row());
    std::fs::write(&args.report, &csv)
        .with_context(|| format!("writing {}", args.report.display()))?;
    print!("{csv}");
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let report = expomask_core::gradcheck::run_suite(args.scale)?;
    for check in &report.checks {
        println!(
            "{:<28} {:>4} samples  max rel err {:.3e}  tol {:.0e}  {}",
            check.name,
            check.samples,
            check.max_rel_err,
            check.tolerance,
            if check.passed { "ok" } else { "FAIL" }
        );
    }
    if !report.all_passed() {
        bail!("gradient check failed");
    }
    println!("all {} gradient checks passed", report.checks.len());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth(args) => run_synth(args),
        Cmd::Gt(args) => run_gt(args),
        Cmd::CompareGt(args) => run_compare_gt(args),
        Cmd::Train(args) => run_train(args),
        Cmd::Eval(args) => run_eval(args),
        Cmd::Gradcheck(args) => run_gradcheck(args),
    }
}
