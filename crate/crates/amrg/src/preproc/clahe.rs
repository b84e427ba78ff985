//! Contrast-limited adaptive histogram equalization.
//!
//! The image is divided into a `tiles x tiles` grid. Each tile's 256-bin
//! histogram is clipped at `clip_limit * tile_pixels / 256` with the
//! excess redistributed uniformly over all bins, then turned into an
//! equalization lookup table. Per-pixel output blends the four
//! surrounding tile tables bilinearly between tile centers.
//!
//! The lookup table uses a midpoint CDF convention,
//! `round((cdf_below + bin/2) * 255 / tile_pixels)`, which maps a flat
//! histogram to the identity: featureless regions pass through
//! unchanged instead of drifting by half a bin.

use super::{BBox, GrayImage, PreprocConfig};

/// Tile rectangles of a `tiles x tiles` grid over a `width x height`
/// image, row-major. Boundaries are `i * extent / tiles`, so sizes differ
/// by at most one pixel.
pub fn tile_grid(width: usize, height: usize, tiles: usize) -> Vec<BBox> {
    assert!(tiles >= 1 && width >= tiles && height >= tiles);
    let edge = |i: usize, extent: usize| i * extent / tiles;
    let mut grid = Vec::with_capacity(tiles * tiles);
    for ty in 0..tiles {
        for tx in 0..tiles {
            grid.push(BBox {
                x0: edge(tx, width),
                y0: edge(ty, height),
                x1: edge(tx + 1, width),
                y1: edge(ty + 1, height),
            });
        }
    }
    grid
}

/// 256-bin histogram of one tile, quantized by depth.
pub fn tile_histogram(img: &GrayImage, tile: &BBox) -> [f64; 256] {
    let shift = img.depth().bin_shift();
    let mut hist = [0.0; 256];
    for y in tile.y0..tile.y1 {
        for x in tile.x0..tile.x1 {
            hist[(img.get(x, y) >> shift) as usize] += 1.0;
        }
    }
    hist
}

/// Clips histogram bins at `ceiling`, returning the clipped histogram and
/// the total excess removed. No post-clip bin exceeds the ceiling;
/// redistribution happens separately.
pub fn clip_histogram(hist: &[f64; 256], ceiling: f64) -> ([f64; 256], f64) {
    let mut clipped = *hist;
    let mut excess = 0.0;
    for bin in clipped.iter_mut() {
        if *bin > ceiling {
            excess += *bin - ceiling;
            *bin = ceiling;
        }
    }
    (clipped, excess)
}

/// Equalization lookup table for one tile under the given clip limit.
pub fn tile_lut(img: &GrayImage, tile: &BBox, clip_limit: f64) -> [u8; 256] {
    let pixels = (tile.width() * tile.height()) as f64;
    let ceiling = clip_limit * pixels / 256.0;
    let hist = tile_histogram(img, tile);
    let (mut clipped, excess) = clip_histogram(&hist, ceiling);
    for bin in clipped.iter_mut() {
        *bin += excess / 256.0;
    }

    let mut lut = [0u8; 256];
    let mut below = 0.0;
    for (i, &h) in clipped.iter().enumerate() {
        let mid = below + h / 2.0;
        lut[i] = (mid * 255.0 / pixels).round().clamp(0.0, 255.0) as u8;
        below += h;
    }
    lut
}

/// Center of a tile's pixel index range along one axis.
fn tile_center(lo: usize, hi: usize) -> f64 {
    (lo + hi) as f64 / 2.0 - 0.5
}

/// Locates the blend pair for coordinate `v` among sorted tile centers:
/// returns the lower tile index and the interpolation weight toward the
/// next one. Coordinates outside the center span clamp to the edge tile.
fn locate(centers: &[f64], v: f64) -> (usize, f64) {
    if centers.len() == 1 || v <= centers[0] {
        return (0, 0.0);
    }
    let last = centers.len() - 1;
    if v >= centers[last] {
        return (last - 1, 1.0);
    }
    let mut i = 0;
    while v >= centers[i + 1] {
        i += 1;
    }
    (i, (v - centers[i]) / (centers[i + 1] - centers[i]))
}

/// Applies CLAHE. Output has the same dimensions and depth range as the
/// input. Requires both image dimensions to be at least `cfg.clahe_tiles`.
pub fn clahe(img: &GrayImage, cfg: &PreprocConfig) -> GrayImage {
    let tiles = cfg.clahe_tiles;
    assert!(
        img.width() >= tiles && img.height() >= tiles,
        "image smaller than the tile grid"
    );

    let grid = tile_grid(img.width(), img.height(), tiles);
    let luts: Vec<[u8; 256]> = grid.iter().map(|t| tile_lut(img, t, cfg.clahe_clip)).collect();

    let x_centers: Vec<f64> = (0..tiles)
        .map(|tx| tile_center(grid[tx].x0, grid[tx].x1))
        .collect();
    let y_centers: Vec<f64> = (0..tiles)
        .map(|ty| tile_center(grid[ty * tiles].y0, grid[ty * tiles].y1))
        .collect();

    let shift = img.depth().bin_shift();
    // 255 * 257 = 65535, so the 8-bit table value scales back exactly.
    let upscale = match img.depth() {
        super::BitDepth::Eight => 1,
        super::BitDepth::Sixteen => 257,
    };

    GrayImage::from_fn(img.width(), img.height(), img.depth(), |x, y| {
        let (tx, wx) = locate(&x_centers, x as f64);
        let (ty, wy) = locate(&y_centers, y as f64);
        // Neighbor indices clamp at the grid edge, where the weight is 0.
        let (tx1, ty1) = ((tx + 1).min(tiles - 1), (ty + 1).min(tiles - 1));
        let bin = (img.get(x, y) >> shift) as usize;
        let lut_at = |tyy: usize, txx: usize| luts[tyy * tiles + txx][bin] as f64;
        let top = (1.0 - wx) * lut_at(ty, tx) + wx * lut_at(ty, tx1);
        let bottom = (1.0 - wx) * lut_at(ty1, tx) + wx * lut_at(ty1, tx1);
        let value = ((1.0 - wy) * top + wy * bottom).round().clamp(0.0, 255.0) as u16;
        value * upscale
    })
    .expect("clahe preserves shape and range")
}
