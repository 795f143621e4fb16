//! Image and dataset I/O plus the synthetic multi-exposure scene generator.
//!
//! PNG is the sole raster format: 8-bit, grayscale or RGB, no alpha. A
//! dataset is a directory of scene directories, each holding
//! `low.png`/`mid.png`/`high.png` and optionally `gt_low.png`,
//! `gt_mid.png`, `gt_high.png` masks stored as 1-channel `{0,255}` images.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit image, row-major, 1 (grayscale) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParams(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidParams(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(ImageU8 {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Sample of channel `c` at row `i`, column `j`.
    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize) -> u8 {
        self.data[(i * self.width + j) * self.channels + c]
    }
}

/// Three exposures of the same scene.
#[derive(Clone, Debug)]
pub struct ExposureStack {
    pub low: ImageU8,
    pub mid: ImageU8,
    pub high: ImageU8,
    pub scene_id: String,
}

impl ExposureStack {
    pub fn new(low: ImageU8, mid: ImageU8, high: ImageU8, scene_id: String) -> Result<Self> {
        let same = |a: &ImageU8, b: &ImageU8| {
            a.width == b.width && a.height == b.height && a.channels == b.channels
        };
        if !same(&low, &mid) || !same(&low, &high) {
            return Err(Error::DimensionMismatch(format!(
                "exposure stack '{scene_id}' images disagree on size or channels"
            )));
        }
        Ok(ExposureStack {
            low,
            mid,
            high,
            scene_id,
        })
    }
}

/// Parameters of the synthetic radiance-field scene generator.
#[derive(Clone, Debug)]
pub struct SynthSceneParams {
    /// (height, width) in pixels.
    pub size: (usize, usize),
    pub blob_count: usize,
    /// Additive Gaussian noise sigma in 8-bit sample units.
    pub noise_sigma: f64,
    /// Strictly increasing low/mid/high exposure multipliers.
    pub exposure_scales: [f64; 3],
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SynthSceneParams {
    fn default() -> Self {
        SynthSceneParams {
            size: (64, 64),
            blob_count: 6,
            noise_sigma: 2.0,
            exposure_scales: [0.4, 1.0, 2.5],
            gamma: 2.2,
            seed: 0,
        }
    }
}

impl SynthSceneParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h == 0 || w == 0 {
            return Err(Error::InvalidParams("scene size must be non-zero".into()));
        }
        if self.blob_count == 0 {
            return Err(Error::InvalidParams("blob_count must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidParams(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        let [a, b, c] = self.exposure_scales;
        if !(a > 0.0 && a < b && b < c) {
            return Err(Error::InvalidParams(format!(
                "exposure_scales must be positive and strictly increasing, got {:?}",
                self.exposure_scales
            )));
        }
        if self.gamma <= 0.0 || self.gamma.is_nan() {
            return Err(Error::InvalidParams(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Decode an 8-bit grayscale or RGB PNG. Anything else (16-bit depth,
/// palette, alpha) is rejected rather than silently converted.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;

    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: bit depth {:?}, only 8-bit is supported",
            path.display(),
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: color type {:?}, only grayscale and RGB without alpha are supported",
                path.display(),
                other
            )))
        }
    };

    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    buf.truncate(frame.buffer_size());
    ImageU8::new(frame.width as usize, frame.height as usize, channels, buf)
}

/// Encode an [`ImageU8`] as an 8-bit PNG. The parent directory must exist.
pub fn save_png(image: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width as u32,
        image.height as u32,
    );
    encoder.set_color(match image.channels {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    writer
        .write_image_data(&image.data)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    writer.finish().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

/// Generate a synthetic exposure stack plus the radiance field it was
/// rendered from. Deterministic for a fixed seed.
///
/// The radiance is a positive field of seeded Gaussian blobs on a linear
/// ramp, so every stack contains both under- and over-exposed regions.
/// Each exposure `e` maps radiance through
/// `clip(255 * (scale_e * radiance)^(1/gamma), 0, 255)`, then additive
/// Gaussian noise is applied in the 8-bit domain and the result is
/// re-clipped and quantized.
pub fn synth_stack(params: &SynthSceneParams) -> Result<(ExposureStack, Tensor)> {
    params.validate()?;
    let (h, w) = params.size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Mild per-channel tint so RGB inputs carry more than replicated gray.
    let tints: [f64; 3] = [
        rng.random_range(0.85..1.0),
        rng.random_range(0.85..1.0),
        rng.random_range(0.85..1.0),
    ];

    struct Blob {
        ci: f64,
        cj: f64,
        inv_two_sigma_sq: f64,
        amp: f64,
    }
    let min_extent = h.min(w) as f64;
    let blobs: Vec<Blob> = (0..params.blob_count)
        .map(|_| {
            let ci = rng.random_range(0.0..h as f64);
            let cj = rng.random_range(0.0..w as f64);
            let sigma = rng.random_range(min_extent / 12.0..min_extent / 4.0);
            let amp = rng.random_range(0.3..1.2);
            Blob {
                ci,
                cj,
                inv_two_sigma_sq: 1.0 / (2.0 * sigma * sigma),
                amp,
            }
        })
        .collect();

    let mut radiance = Tensor::zeros(&[h, w]);
    {
        let data = radiance.data_mut();
        for i in 0..h {
            for j in 0..w {
                let ramp_j = if w > 1 { j as f64 / (w - 1) as f64 } else { 0.0 };
                let ramp_i = if h > 1 { i as f64 / (h - 1) as f64 } else { 0.0 };
                let mut v = 0.02 + 0.35 * ramp_j + 0.15 * ramp_i;
                for b in &blobs {
                    let di = i as f64 - b.ci;
                    let dj = j as f64 - b.cj;
                    v += b.amp * (-(di * di + dj * dj) * b.inv_two_sigma_sq).exp();
                }
                data[i * w + j] = v;
            }
        }
    }

    let inv_gamma = 1.0 / params.gamma;
    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE))
        .expect("sigma validated above");
    let render = |scale: f64, rng: &mut ChaCha8Rng| -> ImageU8 {
        let mut data = vec![0u8; h * w * 3];
        for i in 0..h {
            for j in 0..w {
                let r = radiance.data()[i * w + j];
                for (c, &tint) in tints.iter().enumerate() {
                    let clean = (255.0 * (scale * r * tint).powf(inv_gamma)).clamp(0.0, 255.0);
                    let noisy = if params.noise_sigma > 0.0 {
                        clean + noise.sample(rng)
                    } else {
                        clean
                    };
                    data[(i * w + j) * 3 + c] = noisy.clamp(0.0, 255.0).round() as u8;
                }
            }
        }
        ImageU8::new(w, h, 3, data).expect("generator produces consistent dimensions")
    };

    let low = render(params.exposure_scales[0], &mut rng);
    let mid = render(params.exposure_scales[1], &mut rng);
    let high = render(params.exposure_scales[2], &mut rng);
    let stack = ExposureStack::new(low, mid, high, format!("synth_{:016x}", params.seed))?;
    Ok((stack, radiance))
}

/// One scene directory found by [`scan_dataset`].
#[derive(Clone, Debug)]
pub struct SceneEntry {
    pub scene_id: String,
    pub dir: PathBuf,
    pub low: PathBuf,
    pub mid: PathBuf,
    pub high: PathBuf,
    pub gt_low: Option<PathBuf>,
    pub gt_mid: Option<PathBuf>,
    pub gt_high: Option<PathBuf>,
}

/// Scan result: complete scenes in lexicographic order, plus one warning
/// per scene that was skipped for missing files.
#[derive(Clone, Debug, Default)]
pub struct DatasetScan {
    pub scenes: Vec<SceneEntry>,
    pub warnings: Vec<String>,
}

pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetScan> {
    let root = root.as_ref();
    if !root.exists() {
        return Err(Error::FileNotFound(root.to_path_buf()));
    }
    let mut dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            let id = entry.file_name().to_string_lossy().into_owned();
            dirs.push((id, path));
        }
    }
    dirs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut scan = DatasetScan::default();
    for (scene_id, dir) in dirs {
        let required = ["low.png", "mid.png", "high.png"];
        let missing: Vec<&str> = required
            .iter()
            .copied()
            .filter(|f| !dir.join(f).is_file())
            .collect();
        if !missing.is_empty() {
            scan.warnings.push(format!(
                "scene '{scene_id}': missing {}",
                missing.join(", ")
            ));
            continue;
        }
        let opt = |name: &str| {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        scan.scenes.push(SceneEntry {
            low: dir.join("low.png"),
            mid: dir.join("mid.png"),
            high: dir.join("high.png"),
            gt_low: opt("gt_low.png"),
            gt_mid: opt("gt_mid.png"),
            gt_high: opt("gt_high.png"),
            scene_id,
            dir,
        });
    }
    Ok(scan)
}
