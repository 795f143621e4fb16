//! Resampling helpers: bilinear for images and luminance, nearest-neighbor
//! for masks so they stay binary.

use crate::color::LuminancePlane;
use crate::gtgen::BinaryMask;
use crate::image::ImageU8;

#[inline]
fn src_coord_bilinear(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let s = s.max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

#[inline]
fn src_coord_nearest(dst: usize, dst_len: usize, src_len: usize) -> usize {
    (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
}

fn bilinear_u8(
    src: &[u8],
    src_w: usize,
    src_h: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<u8> {
    let mut out = vec![0u8; dst_w * dst_h * channels];
    for i in 0..dst_h {
        let (y0, y1, fy) = src_coord_bilinear(i, dst_h, src_h);
        for j in 0..dst_w {
            let (x0, x1, fx) = src_coord_bilinear(j, dst_w, src_w);
            for c in 0..channels {
                let p00 = src[(y0 * src_w + x0) * channels + c] as f64;
                let p01 = src[(y0 * src_w + x1) * channels + c] as f64;
                let p10 = src[(y1 * src_w + x0) * channels + c] as f64;
                let p11 = src[(y1 * src_w + x1) * channels + c] as f64;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                out[(i * dst_w + j) * channels + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

pub fn resize_bilinear(img: &ImageU8, dst_w: usize, dst_h: usize) -> ImageU8 {
    let data = bilinear_u8(
        img.data(),
        img.width(),
        img.height(),
        img.channels(),
        dst_w,
        dst_h,
    );
    ImageU8::new(dst_w, dst_h, img.channels(), data)
        .expect("resize preserves channel count and fills the target size")
}

pub fn resize_bilinear_plane(plane: &LuminancePlane, dst_w: usize, dst_h: usize) -> LuminancePlane {
    let data = bilinear_u8(plane.samples(), plane.width(), plane.height(), 1, dst_w, dst_h);
    LuminancePlane::new(dst_w, dst_h, data).expect("resize fills the target size")
}

pub fn resize_nearest_mask(mask: &BinaryMask, dst_w: usize, dst_h: usize) -> BinaryMask {
    let mut out = vec![0u8; dst_w * dst_h];
    for i in 0..dst_h {
        let si = src_coord_nearest(i, dst_h, mask.height());
        for j in 0..dst_w {
            let sj = src_coord_nearest(j, dst_w, mask.width());
            out[i * dst_w + j] = mask.at(si, sj);
        }
    }
    BinaryMask::new(dst_w, dst_h, out).expect("nearest resize keeps mask values binary")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resizes_are_identity() {
        let img = ImageU8::new(3, 2, 3, (0..18).map(|v| v * 13).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2), img);

        let mask = BinaryMask::new(4, 4, [0, 1].repeat(8)).unwrap();
        assert_eq!(resize_nearest_mask(&mask, 4, 4), mask);
    }

    #[test]
    fn constant_image_stays_constant_under_bilinear() {
        let img = ImageU8::new(5, 7, 1, vec![77; 35]).unwrap();
        let out = resize_bilinear(&img, 16, 16);
        assert!(out.data().iter().all(|&v| v == 77));
    }

    #[test]
    fn nearest_mask_stays_binary_and_block_doubles() {
        let mask = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let out = resize_nearest_mask(&mask, 4, 4);
        assert_eq!(
            out.values(),
            &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]
        );
    }

    #[test]
    fn downscale_halves_gradient_plane() {
        let plane = LuminancePlane::new(4, 1, vec![0, 40, 80, 120]).unwrap();
        let out = resize_bilinear_plane(&plane, 2, 1);
        // Sample centers land midway between source pairs.
        assert_eq!(out.samples(), &[20, 100]);
    }
}
