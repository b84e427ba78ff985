//! CLAHE through the LAB color space.
//!
//! Production pipelines often replicate a grayscale mammogram to three
//! channels, convert to CIELAB, equalize the L channel and convert back.
//! For gray input the a/b channels are zero, so the whole detour reduces
//! to a monotone remap of the luminance axis: gray -> L*, CLAHE on L*,
//! L* -> gray. [`clahe_lab`] implements that faithfully (sRGB, D65);
//! [`super::clahe`] is the fast path operating on luminance directly.
//!
//! The two paths agree closely on spiky clinical histograms (large dark
//! background plus a bright tissue blob), where the clip limit keeps the
//! equalization map near the identity in either space. On dense, flat
//! histograms they legitimately diverge, because equalizing toward a
//! uniform distribution in L* space is not the same target as uniform in
//! gray space.

use super::{clahe, BitDepth, GrayImage, PreprocConfig};

const DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(v8: u8) -> f64 {
    let c = v8 as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(y: f64) -> u8 {
    let c = if y <= 0.003_130_8 {
        12.92 * y
    } else {
        1.055 * y.powf(1.0 / 2.4) - 0.055
    };
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// CIELAB L* of a gray sRGB value, scaled to 0..=255.
pub fn gray_to_lab_l(v8: u8) -> u8 {
    let y = srgb_to_linear(v8);
    let f = if y > DELTA.powi(3) {
        y.cbrt()
    } else {
        y / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    };
    let l_star = 116.0 * f - 16.0;
    (l_star * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8
}

/// Gray sRGB value of a CIELAB L* scaled to 0..=255 (a = b = 0).
pub fn lab_l_to_gray(l8: u8) -> u8 {
    let l_star = l8 as f64 * 100.0 / 255.0;
    let fy = (l_star + 16.0) / 116.0;
    let y = if fy > DELTA {
        fy.powi(3)
    } else {
        3.0 * DELTA * DELTA * (fy - 4.0 / 29.0)
    };
    linear_to_srgb(y)
}

/// CLAHE on the L channel of the LAB representation.
///
/// The image is taken to 8 bits, mapped to L*, equalized there, and
/// mapped back; 16-bit inputs are rescaled to their original range
/// afterwards.
pub fn clahe_lab(img: &GrayImage, cfg: &PreprocConfig) -> GrayImage {
    let eight = img.to_eight_bit();
    let l_img = GrayImage::from_fn(eight.width(), eight.height(), BitDepth::Eight, |x, y| {
        gray_to_lab_l(eight.get(x, y) as u8) as u16
    })
    .expect("L channel stays in range");

    let equalized = clahe(&l_img, cfg);

    let upscale = match img.depth() {
        BitDepth::Eight => 1,
        BitDepth::Sixteen => 257,
    };
    GrayImage::from_fn(img.width(), img.height(), img.depth(), |x, y| {
        lab_l_to_gray(equalized.get(x, y) as u8) as u16 * upscale
    })
    .expect("gray conversion stays in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_roundtrip_is_near_identity() {
        for v in 0..=255u16 {
            let back = lab_l_to_gray(gray_to_lab_l(v as u8)) as i32;
            assert!((back - v as i32).abs() <= 1, "v = {v}, back = {back}");
        }
    }

    #[test]
    fn lab_l_is_monotone() {
        let mut prev = 0;
        for v in 0..=255u8 {
            let l = gray_to_lab_l(v);
            assert!(l >= prev, "non-monotone at {v}");
            prev = l;
        }
        assert_eq!(gray_to_lab_l(0), 0);
        assert_eq!(gray_to_lab_l(255), 255);
    }

    #[test]
    fn lab_clahe_preserves_shape() {
        let img = GrayImage::from_fn(32, 24, BitDepth::Eight, |x, y| ((x * y) % 256) as u16)
            .unwrap();
        let cfg = PreprocConfig {
            clahe_tiles: 4,
            ..PreprocConfig::default()
        };
        let out = clahe_lab(&img, &cfg);
        assert_eq!((out.width(), out.height()), (32, 24));
    }
}
