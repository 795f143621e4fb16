//! Ground-truth mask generation.
//!
//! Two routes produce a "well-exposed region" mask from a luminance plane:
//! fixed manual intensity ranges (one range per exposure class) and Otsu's
//! between-class-variance threshold with per-class polarity. Masks are raw
//! per-pixel output; no morphological cleanup is applied.

use std::str::FromStr;

use crate::color::LuminancePlane;
use crate::error::{Error, Result};
use crate::image::ImageU8;

/// H×W mask with values in {0,1}; 1 marks a well-exposed pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    m: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, m: Vec<u8>) -> Result<Self> {
        if m.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask data length {} does not match {}x{}",
                m.len(),
                width,
                height
            )));
        }
        if let Some(&bad) = m.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidParams(format!(
                "mask values must be 0 or 1, found {bad}"
            )));
        }
        Ok(BinaryMask { width, height, m })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            m: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.m[i * self.width + j]
    }

    pub fn count_ones(&self) -> usize {
        self.m.iter().filter(|&&v| v == 1).count()
    }

    /// Serialize as a 1-channel image with 255 for mask value 1.
    pub fn to_image(&self) -> ImageU8 {
        let data = self.m.iter().map(|&v| if v == 1 { 255 } else { 0 }).collect();
        ImageU8::new(self.width, self.height, 1, data)
            .expect("mask dimensions are valid by construction")
    }

    /// Parse a 1-channel {0,255} image back into a mask.
    pub fn from_image(image: &ImageU8) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::InvalidParams(format!(
                "mask image must have 1 channel, got {}",
                image.channels()
            )));
        }
        let m = image
            .data()
            .iter()
            .map(|&v| match v {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::InvalidParams(format!(
                    "mask image sample {other} is neither 0 nor 255"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        BinaryMask::new(image.width(), image.height(), m)
    }
}

/// Which end of the exposure bracket an image comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExposureClass {
    Low,
    High,
}

impl ExposureClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ExposureClass::Low => "low",
            ExposureClass::High => "high",
        }
    }
}

impl FromStr for ExposureClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(ExposureClass::Low),
            "high" => Ok(ExposureClass::High),
            other => Err(Error::InvalidParams(format!(
                "exposure class must be 'low' or 'high', got '{other}'"
            ))),
        }
    }
}

/// Inclusive luminance interval on [0,255].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRange {
    pub min: u8,
    pub max: u8,
}

impl PixelRange {
    pub fn new(min: u8, max: u8) -> Result<Self> {
        if min > max {
            return Err(Error::InvalidParams(format!(
                "range bounds out of order: [{min},{max}]"
            )));
        }
        Ok(PixelRange { min, max })
    }

    #[inline]
    pub fn contains(&self, v: u8) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Manual thresholding ranges for the two exposure classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThresholdRanges {
    /// Well-exposed interval for low-exposure images.
    pub low_range: PixelRange,
    /// Well-exposed interval for high-exposure images.
    pub high_range: PixelRange,
}

impl Default for ThresholdRanges {
    fn default() -> Self {
        ThresholdRanges {
            low_range: PixelRange { min: 120, max: 255 },
            high_range: PixelRange { min: 0, max: 200 },
        }
    }
}

impl ThresholdRanges {
    pub fn range_for(&self, cls: ExposureClass) -> PixelRange {
        match cls {
            ExposureClass::Low => self.low_range,
            ExposureClass::High => self.high_range,
        }
    }
}

/// Mark every pixel whose luminance lies inside the class's inclusive
/// range. Purely per-pixel.
pub fn manual_mask(y: &LuminancePlane, cls: ExposureClass, ranges: &ThresholdRanges) -> BinaryMask {
    let range = ranges.range_for(cls);
    BinaryMask {
        width: y.width(),
        height: y.height(),
        m: y
            .samples()
            .iter()
            .map(|&v| range.contains(v) as u8)
            .collect(),
    }
}

/// Between-class variance of the split {Y <= t} / {Y > t}, computed from
/// exact integer class counts and sums.
///
/// Both the production scan and the brute-force test oracle feed exact
/// integers through this same expression, so their variances (and hence
/// the argmax and tie-break) agree bit for bit.
#[inline]
pub fn between_class_variance(n0: u64, s0: u64, n1: u64, s1: u64) -> f64 {
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let total = (n0 + n1) as f64;
    let w0 = n0 as f64 / total;
    let w1 = n1 as f64 / total;
    let mu0 = s0 as f64 / n0 as f64;
    let mu1 = s1 as f64 / n1 as f64;
    let d = mu0 - mu1;
    w0 * w1 * d * d
}

/// Otsu's threshold over the 256-bin histogram: the smallest `t` that
/// maximizes the between-class variance of {Y <= t} vs {Y > t}. A constant
/// plane returns that constant.
pub fn otsu_threshold(y: &LuminancePlane) -> Result<u8> {
    let samples = y.samples();
    if samples.is_empty() {
        return Err(Error::EmptyPlane);
    }

    let mut hist = [0u64; 256];
    for &v in samples {
        hist[v as usize] += 1;
    }
    if let Some(single) = single_nonzero_bin(&hist) {
        return Ok(single);
    }

    let total_count = samples.len() as u64;
    let total_sum: u64 = hist
        .iter()
        .enumerate()
        .map(|(v, &n)| v as u64 * n)
        .sum();

    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best_t = 0u8;
    let mut best_var = -1.0f64;
    for (t, &count) in hist.iter().enumerate() {
        n0 += count;
        s0 += t as u64 * count;
        let var = between_class_variance(n0, s0, total_count - n0, total_sum - s0);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

fn single_nonzero_bin(hist: &[u64; 256]) -> Option<u8> {
    let mut found = None;
    for (v, &n) in hist.iter().enumerate() {
        if n > 0 {
            if found.is_some() {
                return None;
            }
            found = Some(v as u8);
        }
    }
    found
}

/// Otsu mask with per-class polarity: strictly above the threshold for
/// low exposure, strictly below for high. Pixels equal to the threshold
/// are excluded either way.
pub fn otsu_mask(y: &LuminancePlane, cls: ExposureClass) -> Result<BinaryMask> {
    let t = otsu_threshold(y)?;
    let m = y
        .samples()
        .iter()
        .map(|&v| match cls {
            ExposureClass::Low => (v > t) as u8,
            ExposureClass::High => (v < t) as u8,
        })
        .collect();
    Ok(BinaryMask {
        width: y.width(),
        height: y.height(),
        m,
    })
}

/// Pixels claimed by neither exposure: NOT(low OR high). These are the
/// regions left to the medium exposure.
pub fn residual_mask(low_mask: &BinaryMask, high_mask: &BinaryMask) -> Result<BinaryMask> {
    check_same_dims(low_mask, high_mask)?;
    let m = low_mask
        .m
        .iter()
        .zip(&high_mask.m)
        .map(|(&l, &h)| (l == 0 && h == 0) as u8)
        .collect();
    Ok(BinaryMask {
        width: low_mask.width,
        height: low_mask.height,
        m,
    })
}

/// Pixelwise OR of two masks.
pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    check_same_dims(a, b)?;
    let m = a
        .m
        .iter()
        .zip(&b.m)
        .map(|(&x, &y)| (x == 1 || y == 1) as u8)
        .collect();
    Ok(BinaryMask {
        width: a.width,
        height: a.height,
        m,
    })
}

/// Fraction of pixels set to 1.
pub fn mask_coverage(mask: &BinaryMask) -> Result<f64> {
    if mask.m.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(mask.count_ones() as f64 / mask.m.len() as f64)
}

fn check_same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "masks {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}
