//! Mammogram preprocessing pipeline.
//!
//! Stages, in order: Otsu foreground thresholding, tight ROI crop,
//! fixed-size resize, laterality normalization (all breasts face right),
//! and CLAHE contrast enhancement. Every stage is a pure function;
//! identical input bytes produce identical output bytes.

pub mod clahe;
pub mod lab;

pub use clahe::clahe;
pub use lab::clahe_lab;

use serde::{Deserialize, Serialize};

use crate::error::{AmrgError, Result};
use crate::ingest::Laterality;

/// Pixel bit depth of a grayscale image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    /// Right-shift that quantizes an intensity into one of 256 histogram
    /// bins.
    pub(crate) fn bin_shift(self) -> u32 {
        match self {
            BitDepth::Eight => 0,
            BitDepth::Sixteen => 8,
        }
    }
}

/// Row-major grayscale image. Intensities are stored as `u16` regardless
/// of depth; the depth bounds the legal value range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    depth: BitDepth,
    data: Vec<u16>,
}

impl GrayImage {
    /// Builds an image, validating buffer length and value range.
    pub fn new(width: usize, height: usize, depth: BitDepth, data: Vec<u16>) -> Result<Self> {
        if data.len() != width * height {
            return Err(AmrgError::Dimension(format!(
                "pixel buffer holds {} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        let max = depth.max_value();
        if data.iter().any(|&v| v > max) {
            return Err(AmrgError::InvalidInput(format!(
                "intensity exceeds {max} for declared depth"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            depth,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        depth: BitDepth,
        mut f: impl FnMut(usize, usize) -> u16,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, depth, data)
    }

    pub fn constant(width: usize, height: usize, depth: BitDepth, value: u16) -> Result<Self> {
        GrayImage::new(width, height, depth, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[u16] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn is_constant(&self) -> bool {
        self.data.windows(2).all(|w| w[0] == w[1])
    }

    /// 256-bin histogram; 16-bit intensities are quantized by their high
    /// byte.
    pub fn histogram256(&self) -> [u64; 256] {
        let shift = self.depth.bin_shift();
        let mut hist = [0u64; 256];
        for &v in &self.data {
            hist[(v >> shift) as usize] += 1;
        }
        hist
    }

    /// Converts to 8-bit, keeping 8-bit images untouched.
    pub fn to_eight_bit(&self) -> GrayImage {
        match self.depth {
            BitDepth::Eight => self.clone(),
            BitDepth::Sixteen => GrayImage {
                width: self.width,
                height: self.height,
                depth: BitDepth::Eight,
                data: self.data.iter().map(|&v| v >> 8).collect(),
            },
        }
    }
}

/// Pipeline configuration. Defaults mirror the production settings:
/// 512x512 output, 8x8 CLAHE tile grid, clip limit 2.0, direct resize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocConfig {
    pub target_size: usize,
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
    pub resize_mode: ResizeMode,
}

/// How a cropped ROI is brought to the target resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Anisotropic stretch to target x target.
    Direct,
    /// Aspect-preserving scale with centered zero padding.
    Letterbox,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            target_size: 512,
            clahe_tiles: 8,
            clahe_clip: 2.0,
            resize_mode: ResizeMode::Direct,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(AmrgError::InvalidInput("target_size must be positive".into()));
        }
        if self.clahe_tiles == 0 {
            return Err(AmrgError::InvalidInput("clahe_tiles must be >= 1".into()));
        }
        if self.clahe_clip < 1.0 {
            return Err(AmrgError::InvalidInput("clahe_clip must be >= 1.0".into()));
        }
        if self.target_size < self.clahe_tiles {
            return Err(AmrgError::InvalidInput(
                "target_size must be at least clahe_tiles".into(),
            ));
        }
        Ok(())
    }
}

/// Half-open pixel rectangle: x in [x0, x1), y in [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(AmrgError::Dimension(format!(
                "degenerate bbox ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contained_in(&self, img: &GrayImage) -> bool {
        self.x1 <= img.width() && self.y1 <= img.height()
    }
}

/// Otsu threshold over the 256-bin histogram.
///
/// Returns the smallest intensity t for which splitting the histogram
/// into {p < t} and {p >= t} maximizes between-class variance. A
/// constant image returns the constant itself. For 16-bit images the
/// chosen bin is mapped back to the intensity scale.
pub fn otsu_threshold(img: &GrayImage) -> u16 {
    assert!(!img.is_empty(), "otsu requires a non-empty image");
    if img.is_constant() {
        return img.pixels()[0];
    }

    let hist = img.histogram256();
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let weighted_total: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();

    let mut best_t = 0usize;
    let mut best_var = -1.0f64;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..256 {
        // Classes split as bins < t vs bins >= t.
        if t > 0 {
            let h = hist[t - 1] as f64;
            w0 += h;
            sum0 += (t - 1) as f64 * h;
        }
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (weighted_total - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }

    (best_t as u16) << img.depth().bin_shift()
}

/// Tight bounding box of all pixels strictly above `threshold`.
pub fn foreground_bbox(img: &GrayImage, threshold: u16) -> Result<BBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) > threshold {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    match bounds {
        Some((x0, y0, x1, y1)) => BBox::new(x0, y0, x1 + 1, y1 + 1),
        None => Err(AmrgError::EmptyForeground { threshold }),
    }
}

/// Bilinear sample of the crop region at fractional coordinates relative
/// to the crop origin, clamped to the crop bounds.
fn sample_bilinear(img: &GrayImage, bbox: &BBox, fx: f64, fy: f64) -> f64 {
    let w = bbox.width() as f64;
    let h = bbox.height() as f64;
    let x = fx.clamp(0.0, w - 1.0);
    let y = fy.clamp(0.0, h - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(bbox.width() - 1);
    let y1 = (y0 + 1).min(bbox.height() - 1);
    let dx = x - x0 as f64;
    let dy = y - y0 as f64;
    let at = |xx: usize, yy: usize| img.get(bbox.x0 + xx, bbox.y0 + yy) as f64;
    let top = (1.0 - dx) * at(x0, y0) + dx * at(x1, y0);
    let bottom = (1.0 - dx) * at(x0, y1) + dx * at(x1, y1);
    (1.0 - dy) * top + dy * bottom
}

fn resize_region(
    img: &GrayImage,
    bbox: &BBox,
    out_w: usize,
    out_h: usize,
) -> Result<GrayImage> {
    let sx = bbox.width() as f64 / out_w as f64;
    let sy = bbox.height() as f64 / out_h as f64;
    let max = img.depth().max_value() as f64;
    GrayImage::from_fn(out_w, out_h, img.depth(), |x, y| {
        // Pixel-center convention keeps a same-size resize bit-identical.
        let fx = (x as f64 + 0.5) * sx - 0.5;
        let fy = (y as f64 + 0.5) * sy - 0.5;
        sample_bilinear(img, bbox, fx, fy).round().clamp(0.0, max) as u16
    })
}

/// Crops `img` to `bbox` and resizes to `target_size` x `target_size`
/// with bilinear interpolation. Direct mode stretches anisotropically;
/// letterbox mode preserves aspect ratio inside centered zero padding.
pub fn crop_resize(img: &GrayImage, bbox: &BBox, cfg: &PreprocConfig) -> Result<GrayImage> {
    if !bbox.contained_in(img) {
        return Err(AmrgError::Dimension(format!(
            "bbox ({},{})-({},{}) exceeds {}x{} image",
            bbox.x0,
            bbox.y0,
            bbox.x1,
            bbox.y1,
            img.width(),
            img.height()
        )));
    }
    let target = cfg.target_size;
    match cfg.resize_mode {
        ResizeMode::Direct => resize_region(img, bbox, target, target),
        ResizeMode::Letterbox => {
            let scale = (target as f64 / bbox.width() as f64)
                .min(target as f64 / bbox.height() as f64);
            let new_w = ((bbox.width() as f64 * scale).round() as usize).clamp(1, target);
            let new_h = ((bbox.height() as f64 * scale).round() as usize).clamp(1, target);
            let content = resize_region(img, bbox, new_w, new_h)?;
            let ox = (target - new_w) / 2;
            let oy = (target - new_h) / 2;
            GrayImage::from_fn(target, target, img.depth(), |x, y| {
                if x >= ox && x < ox + new_w && y >= oy && y < oy + new_h {
                    content.get(x - ox, y - oy)
                } else {
                    0
                }
            })
        }
    }
}

/// Mirrors left-labeled images horizontally so every breast faces right;
/// right and unknown laterality pass through unchanged.
pub fn normalize_laterality(img: &GrayImage, side: Laterality) -> GrayImage {
    match side {
        Laterality::Left => {
            let w = img.width();
            GrayImage::from_fn(w, img.height(), img.depth(), |x, y| img.get(w - 1 - x, y))
                .expect("mirror preserves shape and range")
        }
        Laterality::Right | Laterality::Unknown => img.clone(),
    }
}

/// Result of the full pipeline for one image, with the intermediate
/// threshold and ROI recorded for logging.
#[derive(Debug, Clone)]
pub struct PreprocOutcome {
    pub image: GrayImage,
    pub threshold: u16,
    pub roi: BBox,
}

/// Runs the full pipeline: Otsu threshold, foreground crop, resize,
/// laterality flip, CLAHE.
///
/// A constant non-zero image is treated as all-foreground rather than
/// failing; an all-black image has no foreground and errors.
pub fn preprocess_case(
    img: &GrayImage,
    side: Laterality,
    cfg: &PreprocConfig,
) -> Result<PreprocOutcome> {
    cfg.validate()?;
    if img.is_empty() {
        return Err(AmrgError::InvalidInput("empty image".into()));
    }
    let threshold = otsu_threshold(img);
    let roi = if img.is_constant() && img.pixels()[0] > 0 {
        BBox::new(0, 0, img.width(), img.height())?
    } else {
        foreground_bbox(img, threshold)?
    };
    let resized = crop_resize(img, &roi, cfg)?;
    let oriented = normalize_laterality(&resized, side);
    let enhanced = clahe(&oriented, cfg);
    Ok(PreprocOutcome {
        image: enhanced,
        threshold,
        roi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bimodal(w: usize, h: usize, low: u16, high: u16) -> GrayImage {
        GrayImage::from_fn(w, h, BitDepth::Eight, |x, _| {
            if x < w / 2 {
                low
            } else {
                high
            }
        })
        .unwrap()
    }

    #[test]
    fn otsu_separates_two_populations() {
        let img = bimodal(64, 64, 10, 200);
        let t = otsu_threshold(&img);
        assert!(t > 10 && t < 200, "t = {t}");
        // The induced strict-greater mask keeps exactly the bright half.
        let fg = img.pixels().iter().filter(|&&p| p > t).count();
        assert_eq!(fg, 64 * 32);
    }

    #[test]
    fn otsu_constant_image_returns_constant() {
        let img = GrayImage::constant(8, 8, BitDepth::Eight, 50).unwrap();
        assert_eq!(otsu_threshold(&img), 50);
    }

    #[test]
    fn otsu_sixteen_bit_scales_threshold() {
        let img = GrayImage::from_fn(32, 32, BitDepth::Sixteen, |x, _| {
            if x < 16 {
                500
            } else {
                60000
            }
        })
        .unwrap();
        let t = otsu_threshold(&img);
        assert!(t > 500 && t < 60000, "t = {t}");
    }

    #[test]
    fn bbox_single_bright_pixel() {
        let img = GrayImage::from_fn(10, 12, BitDepth::Eight, |x, y| {
            if (x, y) == (3, 7) {
                255
            } else {
                0
            }
        })
        .unwrap();
        let bbox = foreground_bbox(&img, 0).unwrap();
        assert_eq!(bbox, BBox::new(3, 7, 4, 8).unwrap());
    }

    #[test]
    fn bbox_bright_rectangle() {
        let img = GrayImage::from_fn(30, 15, BitDepth::Eight, |x, y| {
            if (2..=10).contains(&y) && (5..=19).contains(&x) {
                200
            } else {
                0
            }
        })
        .unwrap();
        let bbox = foreground_bbox(&img, 0).unwrap();
        assert_eq!(bbox, BBox::new(5, 2, 20, 11).unwrap());
    }

    #[test]
    fn bbox_empty_foreground_errors() {
        let img = GrayImage::constant(4, 4, BitDepth::Eight, 0).unwrap();
        let err = foreground_bbox(&img, 0).unwrap_err();
        assert!(err.to_string().contains("empty foreground"));
    }

    #[test]
    fn bbox_is_tight() {
        let img = GrayImage::from_fn(9, 9, BitDepth::Eight, |x, y| {
            if (2..=6).contains(&x) && (3..=5).contains(&y) {
                255
            } else {
                0
            }
        })
        .unwrap();
        let bbox = foreground_bbox(&img, 0).unwrap();
        // Every edge row/column of the box contains a foreground pixel.
        assert!((bbox.x0..bbox.x1).any(|x| img.get(x, bbox.y0) > 0));
        assert!((bbox.x0..bbox.x1).any(|x| img.get(x, bbox.y1 - 1) > 0));
        assert!((bbox.y0..bbox.y1).any(|y| img.get(bbox.x0, y) > 0));
        assert!((bbox.y0..bbox.y1).any(|y| img.get(bbox.x1 - 1, y) > 0));
    }

    #[test]
    fn same_size_direct_resize_is_identity() {
        let img = GrayImage::from_fn(32, 32, BitDepth::Eight, |x, y| ((x * 7 + y * 13) % 256) as u16)
            .unwrap();
        let cfg = PreprocConfig {
            target_size: 32,
            ..PreprocConfig::default()
        };
        let bbox = BBox::new(0, 0, 32, 32).unwrap();
        let out = crop_resize(&img, &bbox, &cfg).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn upscale_keeps_vertical_gradient_monotone() {
        // 2x2 image with dark top row, bright bottom row, to 4x4.
        let img = GrayImage::new(2, 2, BitDepth::Eight, vec![0, 0, 255, 255]).unwrap();
        let cfg = PreprocConfig {
            target_size: 4,
            ..PreprocConfig::default()
        };
        let out = crop_resize(&img, &BBox::new(0, 0, 2, 2).unwrap(), &cfg).unwrap();
        for x in 0..4 {
            let column: Vec<u16> = (0..4).map(|y| out.get(x, y)).collect();
            assert!(column.windows(2).all(|w| w[0] <= w[1]), "column {column:?}");
            assert!(column[0] < column[3]);
        }
        // Hand-evaluated bilinear values at source coords -0.25, 0.25, 0.75, 1.25.
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(0, 1), 64);
        assert_eq!(out.get(0, 2), 191);
        assert_eq!(out.get(0, 3), 255);
    }

    #[test]
    fn letterbox_centers_content() {
        let img = GrayImage::constant(100, 200, BitDepth::Eight, 100).unwrap();
        let cfg = PreprocConfig {
            target_size: 512,
            resize_mode: ResizeMode::Letterbox,
            ..PreprocConfig::default()
        };
        let out = crop_resize(&img, &BBox::new(0, 0, 100, 200).unwrap(), &cfg).unwrap();
        assert_eq!((out.width(), out.height()), (512, 512));
        // Content occupies a 256x512 centered band; padding is zero.
        for y in [0, 255, 511] {
            assert_eq!(out.get(127, y), 0);
            assert_eq!(out.get(128, y), 100);
            assert_eq!(out.get(383, y), 100);
            assert_eq!(out.get(384, y), 0);
        }
    }

    #[test]
    fn laterality_flip_moves_bright_pixel() {
        let img = GrayImage::from_fn(8, 4, BitDepth::Eight, |x, _| if x == 0 { 255 } else { 0 })
            .unwrap();
        let flipped = normalize_laterality(&img, Laterality::Left);
        assert_eq!(flipped.get(7, 0), 255);
        assert_eq!(flipped.get(0, 0), 0);
    }

    #[test]
    fn laterality_right_and_unknown_unchanged() {
        let img = GrayImage::from_fn(5, 5, BitDepth::Eight, |x, y| (x * y) as u16).unwrap();
        assert_eq!(normalize_laterality(&img, Laterality::Right), img);
        assert_eq!(normalize_laterality(&img, Laterality::Unknown), img);
    }

    #[test]
    fn laterality_flip_is_involution() {
        let img = GrayImage::from_fn(7, 3, BitDepth::Eight, |x, y| ((x * 31 + y) % 256) as u16)
            .unwrap();
        let twice = normalize_laterality(&normalize_laterality(&img, Laterality::Left), Laterality::Left);
        assert_eq!(twice, img);
    }

    #[test]
    fn pipeline_all_black_errors() {
        let img = GrayImage::constant(64, 64, BitDepth::Eight, 0).unwrap();
        let err = preprocess_case(&img, Laterality::Left, &PreprocConfig::default()).unwrap_err();
        assert!(err.to_string().contains("empty foreground"));
    }

    #[test]
    fn pipeline_constant_nonzero_uses_full_frame() {
        let img = GrayImage::constant(64, 64, BitDepth::Eight, 80).unwrap();
        let cfg = PreprocConfig {
            target_size: 64,
            ..PreprocConfig::default()
        };
        let out = preprocess_case(&img, Laterality::Right, &cfg).unwrap();
        assert_eq!(out.roi, BBox::new(0, 0, 64, 64).unwrap());
        assert_eq!((out.image.width(), out.image.height()), (64, 64));
    }
}
