//! Luminance extraction: the Y channel of full-range BT.601 YCbCr.
//!
//! All thresholding operates on this plane. Chroma is never computed; no
//! consumer exists for it.

use crate::error::{Error, Result};
use crate::image::ImageU8;

/// 8-bit luminance plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LuminancePlane {
    width: usize,
    height: usize,
    y: Vec<u8>,
}

impl LuminancePlane {
    pub fn new(width: usize, height: usize, y: Vec<u8>) -> Result<Self> {
        if y.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "luminance data length {} does not match {}x{}",
                y.len(),
                width,
                height
            )));
        }
        Ok(LuminancePlane { width, height, y })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.y
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.y[i * self.width + j]
    }
}

/// Full-range BT.601 luma of one RGB pixel, rounded half away from zero.
#[inline]
pub fn bt601_luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Extract the luminance plane. Grayscale images pass through unchanged.
pub fn luminance(image: &ImageU8) -> LuminancePlane {
    let (w, h) = (image.width(), image.height());
    let y = if image.channels() == 1 {
        image.data().to_vec()
    } else {
        image
            .data()
            .chunks_exact(3)
            .map(|px| bt601_luma(px[0], px[1], px[2]))
            .collect()
    };
    LuminancePlane {
        width: w,
        height: h,
        y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageU8;

    fn rgb_pixel(r: u8, g: u8, b: u8) -> ImageU8 {
        ImageU8::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn white_maps_to_255_and_black_to_0() {
        assert_eq!(luminance(&rgb_pixel(255, 255, 255)).samples(), &[255]);
        assert_eq!(luminance(&rgb_pixel(0, 0, 0)).samples(), &[0]);
    }

    #[test]
    fn pure_red_matches_bt601_weight() {
        // 0.299 * 255 = 76.245 rounds to 76.
        assert_eq!(luminance(&rgb_pixel(255, 0, 0)).samples(), &[76]);
    }

    #[test]
    fn grayscale_is_a_fixed_point_for_every_value() {
        for v in 0u8..=255 {
            assert_eq!(luminance(&rgb_pixel(v, v, v)).samples(), &[v], "v={v}");
        }
    }

    #[test]
    fn single_channel_input_passes_through() {
        let img = ImageU8::new(2, 2, 1, vec![9, 120, 200, 255]).unwrap();
        assert_eq!(luminance(&img).samples(), &[9, 120, 200, 255]);
    }

    #[test]
    fn luma_is_monotone_in_each_channel() {
        let base = (40u8, 90u8, 140u8);
        let y0 = bt601_luma(base.0, base.1, base.2);
        for delta in 1..=100u8 {
            assert!(bt601_luma(base.0 + delta, base.1, base.2) >= y0);
            assert!(bt601_luma(base.0, base.1 + delta, base.2) >= y0);
            assert!(bt601_luma(base.0, base.1, base.2 + delta) >= y0);
        }
    }
}
