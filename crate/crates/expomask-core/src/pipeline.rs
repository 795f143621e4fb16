//! Dataset assembly, the training loop, evaluation and report emission.
//!
//! One network is trained per exposure class; low and high models come
//! from separate invocations. Everything downstream of (seed, config,
//! dataset bytes) is deterministic, including every CSV byte.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamHyper, AdamState};
use crate::color::luminance;
use crate::error::{Error, Result};
use crate::gtgen::{
    manual_mask, mask_coverage, mask_union, otsu_mask, residual_mask, BinaryMask, ExposureClass,
    ThresholdRanges,
};
use crate::image::{load_png, save_png, scan_dataset, synth_stack, SynthSceneParams};
use crate::losses::{FocalParams, LossKind};
use crate::metrics::{
    binarize, confusion, dice_index, jaccard_index, sensitivity, specificity, auc_balanced,
    ConfusionCounts, MetricRow, DEFAULT_THRESHOLD,
};
use crate::model;
use crate::resize::{resize_bilinear, resize_bilinear_plane, resize_nearest_mask};
use crate::tensor::Tensor;
use crate::unet::{
    unet_backward_traced, unet_forward, unet_forward_traced, NetMode, UNetConfig, UNetParams,
};

/// How ground truth is produced when a scene ships none.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtMethod {
    Manual,
    Otsu,
}

impl GtMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GtMethod::Manual => "manual",
            GtMethod::Otsu => "otsu",
        }
    }
}

impl FromStr for GtMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(GtMethod::Manual),
            "otsu" => Ok(GtMethod::Otsu),
            other => Err(Error::InvalidParams(format!(
                "gt method must be 'manual' or 'otsu', got '{other}'"
            ))),
        }
    }
}

/// Full training configuration. Desk-scale defaults; the experiment's own
/// settings (batch 32, 50 epochs, 512x512) remain reachable through the
/// same knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub exposure_class: ExposureClass,
    pub gt_method: GtMethod,
    pub loss: LossKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_size: usize,
    pub channel_scale: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub input_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            exposure_class: ExposureClass::Low,
            gt_method: GtMethod::Manual,
            loss: LossKind::Bce,
            lr: 0.001,
            batch_size: 4,
            epochs: 200,
            input_size: 64,
            channel_scale: 1,
            dropout_rate: 0.2,
            seed: 0,
            input_channels: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(crate::unet::SPATIAL_DIVISOR) {
            return Err(Error::InvalidParams(format!(
                "input_size {} must be a positive multiple of {}",
                self.input_size,
                crate::unet::SPATIAL_DIVISOR
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "lr must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParams(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        self.net_config().validate()
    }

    pub fn net_config(&self) -> UNetConfig {
        UNetConfig {
            input_channels: self.input_channels,
            channel_scale: self.channel_scale,
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |what: &str| Error::Config(format!("bad {what} value '{value}'"));
        match key {
            "exposure_class" => self.exposure_class = value.parse()?,
            "gt_method" => self.gt_method = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "lr" => self.lr = value.parse().map_err(|_| bad_num("lr"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad_num("batch_size"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad_num("epochs"))?,
            "input_size" => self.input_size = value.parse().map_err(|_| bad_num("input_size"))?,
            "channel_scale" => {
                self.channel_scale = value.parse().map_err(|_| bad_num("channel_scale"))?
            }
            "dropout_rate" => {
                self.dropout_rate = value.parse().map_err(|_| bad_num("dropout_rate"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad_num("seed"))?,
            "input_channels" => {
                self.input_channels = value.parse().map_err(|_| bad_num("input_channels"))?
            }
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// The `key = value` text form accepted by [`parse_config_str`].
    pub fn to_config_string(&self) -> String {
        format!(
            "exposure_class = {}\ngt_method = {}\nloss = {}\nlr = {}\nbatch_size = {}\n\
             epochs = {}\ninput_size = {}\nchannel_scale = {}\ndropout_rate = {}\nseed = {}\n\
             input_channels = {}\n",
            self.exposure_class.as_str(),
            self.gt_method.as_str(),
            self.loss.as_str(),
            self.lr,
            self.batch_size,
            self.epochs,
            self.input_size,
            self.channel_scale,
            self.dropout_rate,
            self.seed,
            self.input_channels,
        )
    }
}

/// Parse the flat `key = value` config format. `#` starts a comment.
pub fn parse_config_str(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// One training pair: normalized input tensor and its ground-truth mask.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub scene_id: String,
    /// `[input_size, input_size, input_channels]`, values in [0,1].
    pub input: Tensor,
    pub gt: BinaryMask,
}

/// Load the dataset for one exposure class: bilinear-resized inputs
/// normalized by 255, masks loaded from `gt_*.png` when present (nearest
/// resize) and otherwise regenerated from the resized luminance plane at
/// the default thresholds.
pub fn build_training_set(root: impl AsRef<Path>, cfg: &TrainConfig) -> Result<Vec<TrainSample>> {
    cfg.validate()?;
    let scan = scan_dataset(root)?;
    if scan.scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = cfg.input_size;
    let cls = cfg.exposure_class;
    let mut samples = Vec::with_capacity(scan.scenes.len());
    for scene in &scan.scenes {
        let (img_path, gt_path) = match cls {
            ExposureClass::Low => (&scene.low, &scene.gt_low),
            ExposureClass::High => (&scene.high, &scene.gt_high),
        };
        let image = load_png(img_path)?;

        let input = if cfg.input_channels == 1 {
            let y = resize_bilinear_plane(&luminance(&image), s, s);
            Tensor::new(
                vec![s, s, 1],
                y.samples().iter().map(|&v| v as f64 / 255.0).collect(),
            )?
        } else {
            let resized = resize_bilinear(&image, s, s);
            let mut data = Vec::with_capacity(s * s * 3);
            for i in 0..s {
                for j in 0..s {
                    for c in 0..3 {
                        let sample = if resized.channels() == 3 {
                            resized.at(i, j, c)
                        } else {
                            resized.at(i, j, 0)
                        };
                        data.push(sample as f64 / 255.0);
                    }
                }
            }
            Tensor::new(vec![s, s, 3], data)?
        };

        let gt = match gt_path {
            Some(p) => {
                let mask = BinaryMask::from_image(&load_png(p)?)?;
                resize_nearest_mask(&mask, s, s)
            }
            None => {
                let y = resize_bilinear_plane(&luminance(&image), s, s);
                match cfg.gt_method {
                    GtMethod::Manual => manual_mask(&y, cls, &ThresholdRanges::default()),
                    GtMethod::Otsu => otsu_mask(&y, cls)?,
                }
            }
        };
        samples.push(TrainSample {
            scene_id: scene.scene_id.clone(),
            input,
            gt,
        });
    }
    Ok(samples)
}

/// First index of the held-out tail: the last 20% of the lexicographic
/// scene order, rounded down, so small datasets keep everything for
/// training.
pub fn validation_split_index(n: usize) -> usize {
    n - n / 5
}

/// Training summary returned alongside the weights.
#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean training loss per epoch, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Metrics on the held-out split (the last 20% of scenes), or on the
    /// training data when the dataset is too small to split.
    pub final_metrics: MetricRow,
    pub wall_seconds: f64,
    pub config: TrainConfig,
}

fn stack_batch(data: &[TrainSample], picks: &[usize]) -> Result<(Tensor, Tensor)> {
    let first = &data[picks[0]].input;
    let (h, w, c) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let mut x = Tensor::zeros(&[picks.len(), h, w, c]);
    let mut y = Tensor::zeros(&[picks.len(), h, w, 1]);
    for (slot, &idx) in picks.iter().enumerate() {
        let sample = &data[idx];
        if sample.input.shape() != [h, w, c] {
            return Err(Error::ShapeMismatch(format!(
                "scene '{}' input {:?} differs from batch shape {:?}",
                sample.scene_id,
                sample.input.shape(),
                [h, w, c]
            )));
        }
        let x_dst = &mut x.data_mut()[slot * h * w * c..(slot + 1) * h * w * c];
        x_dst.copy_from_slice(sample.input.data());
        let y_dst = &mut y.data_mut()[slot * h * w..(slot + 1) * h * w];
        for (d, &m) in y_dst.iter_mut().zip(sample.gt.values()) {
            *d = f64::from(m);
        }
    }
    Ok((x, y))
}

fn mix_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (batch as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Train a fresh network: per-epoch seeded shuffle, minibatch forward /
/// loss / backward / Adam. Deterministic for a fixed seed.
pub fn train(data: &[TrainSample], cfg: &TrainConfig) -> Result<(UNetParams, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();

    let (train_slice, val_slice) = data.split_at(validation_split_index(data.len()));

    let mut params = UNetParams::init(&cfg.net_config(), cfg.seed)?;
    let mut adam = AdamState::new(&params, AdamHyper::with_lr(cfg.lr));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let focal_params = FocalParams::default();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_slice.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for (batch_idx, picks) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = stack_batch(train_slice, picks)?;
            let mode = NetMode::Train {
                dropout_rate: cfg.dropout_rate,
                seed: mix_seed(cfg.seed, epoch, batch_idx),
            };
            let trace = unet_forward_traced(&params, &x, mode)?;
            let loss_out = cfg.loss.evaluate(&y, trace.output(), &focal_params)?;
            if !loss_out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: loss_out.loss,
                    epoch,
                    batch: batch_idx,
                });
            }
            let grads = unet_backward_traced(&params, &trace, &loss_out.grad)?;
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss_out.loss * picks.len() as f64;
        }
        epoch_losses.push(loss_sum / train_slice.len() as f64);
    }

    let report_slice = if val_slice.is_empty() {
        train_slice
    } else {
        val_slice
    };
    let final_metrics = evaluate(&params, report_slice, cfg)?;
    Ok((
        params,
        TrainReport {
            epoch_losses,
            final_metrics,
            wall_seconds: start.elapsed().as_secs_f64(),
            config: cfg.clone(),
        },
    ))
}

/// Metric aggregation across a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Micro-average: pool confusion counts over all pixels of all images
    /// before computing metrics. The report default.
    Pooled,
    /// Compute the five metrics per image, then average them.
    PerImageMean,
}

/// Evaluate with pooled counts (the report convention).
pub fn evaluate(params: &UNetParams, data: &[TrainSample], cfg: &TrainConfig) -> Result<MetricRow> {
    evaluate_with(params, data, cfg, Averaging::Pooled)
}

pub fn evaluate_with(
    params: &UNetParams,
    data: &[TrainSample],
    cfg: &TrainConfig,
    averaging: Averaging,
) -> Result<MetricRow> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pooled = ConfusionCounts::default();
    let mut sums = [0.0f64; 5];
    for sample in data {
        let pred = predict_mask(params, sample)?;
        let c = confusion(&pred, &sample.gt)?;
        pooled = pooled + c;
        sums[0] += dice_index(&c);
        sums[1] += jaccard_index(&c);
        sums[2] += sensitivity(&c);
        sums[3] += specificity(&c);
        sums[4] += auc_balanced(&c);
    }
    let row = match averaging {
        Averaging::Pooled => MetricRow::from_counts(cfg.loss.as_str(), &pooled),
        Averaging::PerImageMean => {
            let n = data.len() as f64;
            MetricRow::from_metrics(
                cfg.loss.as_str(),
                sums[0] / n,
                sums[1] / n,
                sums[2] / n,
                sums[3] / n,
                sums[4] / n,
            )
        }
    };
    Ok(row)
}

/// Forward one sample in eval mode and binarize at 0.5.
pub fn predict_mask(params: &UNetParams, sample: &TrainSample) -> Result<BinaryMask> {
    let shape = sample.input.shape();
    let batched = Tensor::new(
        vec![1, shape[0], shape[1], shape[2]],
        sample.input.data().to_vec(),
    )?;
    let out = unet_forward(params, &batched, NetMode::Eval)?;
    binarize(&out, DEFAULT_THRESHOLD)
}

/// One row of the ground-truth coverage comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub scene_id: String,
    pub method: GtMethod,
    /// "low", "high", "merged" or "residual".
    pub exposure: &'static str,
    pub coverage: f64,
}

/// Per-scene coverage of both thresholding methods at full resolution:
/// low and high masks, their union, and the residual left to the medium
/// exposure.
pub fn compare_gt_methods(root: impl AsRef<Path>) -> Result<Vec<CoverageRow>> {
    compare_gt_methods_with(root, &ThresholdRanges::default())
}

pub fn compare_gt_methods_with(
    root: impl AsRef<Path>,
    ranges: &ThresholdRanges,
) -> Result<Vec<CoverageRow>> {
    let scan = scan_dataset(root)?;
    if scan.scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    for scene in &scan.scenes {
        let y_low = luminance(&load_png(&scene.low)?);
        let y_high = luminance(&load_png(&scene.high)?);
        for method in [GtMethod::Manual, GtMethod::Otsu] {
            let (low_mask, high_mask) = match method {
                GtMethod::Manual => (
                    manual_mask(&y_low, ExposureClass::Low, ranges),
                    manual_mask(&y_high, ExposureClass::High, ranges),
                ),
                GtMethod::Otsu => (
                    otsu_mask(&y_low, ExposureClass::Low)?,
                    otsu_mask(&y_high, ExposureClass::High)?,
                ),
            };
            let merged = mask_union(&low_mask, &high_mask)?;
            let residual = residual_mask(&low_mask, &high_mask)?;
            for (exposure, mask) in [
                ("low", &low_mask),
                ("high", &high_mask),
                ("merged", &merged),
                ("residual", &residual),
            ] {
                rows.push(CoverageRow {
                    scene_id: scene.scene_id.clone(),
                    method,
                    exposure,
                    coverage: mask_coverage(mask)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Serialize coverage rows as CSV.
pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut out = String::from("scene_id,method,exposure,coverage\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.scene_id,
            r.method.as_str(),
            r.exposure,
            r.coverage
        ));
    }
    out
}

/// Write `gt_low.png` / `gt_high.png` masks for every scene from its
/// full-resolution luminance. Returns (scene_id, coverage) pairs.
pub fn generate_gt(
    root: impl AsRef<Path>,
    method: GtMethod,
    cls: ExposureClass,
    ranges: &ThresholdRanges,
) -> Result<Vec<(String, f64)>> {
    let scan = scan_dataset(root)?;
    if scan.scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut written = Vec::with_capacity(scan.scenes.len());
    for scene in &scan.scenes {
        let img_path = match cls {
            ExposureClass::Low => &scene.low,
            ExposureClass::High => &scene.high,
        };
        let y = luminance(&load_png(img_path)?);
        let mask = match method {
            GtMethod::Manual => manual_mask(&y, cls, ranges),
            GtMethod::Otsu => otsu_mask(&y, cls)?,
        };
        let out_path = scene.dir.join(format!("gt_{}.png", cls.as_str()));
        save_png(&mask.to_image(), &out_path)?;
        written.push((scene.scene_id.clone(), mask_coverage(&mask)?));
    }
    Ok(written)
}

/// Render `count` synthetic scenes under `root` as `scene_000`,
/// `scene_001`, ... with consecutive seeds starting at `base.seed`.
pub fn synth_dataset(
    root: impl AsRef<Path>,
    count: usize,
    base: &SynthSceneParams,
) -> Result<Vec<String>> {
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut ids = Vec::with_capacity(count);
    for k in 0..count {
        let params = SynthSceneParams {
            seed: base.seed.wrapping_add(k as u64),
            ..base.clone()
        };
        let (stack, _) = synth_stack(&params)?;
        let scene_id = format!("scene_{k:03}");
        let dir = root.join(&scene_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_png(&stack.low, dir.join("low.png"))?;
        save_png(&stack.mid, dir.join("mid.png"))?;
        save_png(&stack.high, dir.join("high.png"))?;
        ids.push(scene_id);
    }
    Ok(ids)
}

/// Save trained weights; thin re-export so callers only need this module.
pub fn save_model(params: &UNetParams, path: impl AsRef<Path>) -> Result<()> {
    model::save_model(params, path)
}

/// Load weights, validating shapes against the config's architecture.
pub fn load_model(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<UNetParams> {
    model::load_model(path, &cfg.net_config())
}
