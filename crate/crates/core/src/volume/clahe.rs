//! Contrast-limited adaptive histogram equalisation on a single 2D slice.
//!
//! Each tile gets its own clipped, redistributed histogram; the resulting
//! grey-level mappings are blended bilinearly between tile centres. Inputs
//! are expected in `[0, 1]` (values outside are clamped for binning).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheParams {
    /// Clip limit as a multiple of the uniform bin height.
    pub clip_limit: f64,
    /// Tile grid `(rows, cols)`.
    pub tiles: (usize, usize),
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 2.0,
            tiles: (8, 8),
            bins: 256,
        }
    }
}

#[inline]
fn bin_of(x: f32, bins: usize) -> usize {
    let x = x.clamp(0.0, 1.0) as f64;
    ((x * bins as f64) as usize).min(bins - 1)
}

/// Grey-level mapping of one tile: `(cdf(b) - cdf_min) / (n - cdf_min)`
/// over the clipped histogram.
fn tile_mapping(
    img: &[f32],
    width: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    params: &ClaheParams,
) -> Vec<f32> {
    let bins = params.bins;
    let mut hist = vec![0f64; bins];
    for r in rows {
        for c in cols.clone() {
            hist[bin_of(img[r * width + c], bins)] += 1.0;
        }
    }
    let total: f64 = hist.iter().sum();
    let limit = params.clip_limit * total / bins as f64;
    if params.clip_limit > 0.0 {
        let mut excess = 0.0;
        for h in &mut hist {
            if *h > limit {
                excess += *h - limit;
                *h = limit;
            }
        }
        let share = excess / bins as f64;
        for h in &mut hist {
            *h += share;
        }
    }
    let mut cdf = Vec::with_capacity(bins);
    let mut run = 0.0;
    for &h in &hist {
        run += h;
        cdf.push(run);
    }
    let cdf_min = cdf.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
    let denom = run - cdf_min;
    if denom <= 0.0 {
        // a single occupied level: keep its position
        return (0..bins).map(|b| (b as f64 + 0.5) as f32 / bins as f32).collect();
    }
    cdf.iter()
        .map(|&v| (((v - cdf_min) / denom).clamp(0.0, 1.0)) as f32)
        .collect()
}

/// CLAHE on a row-major `height × width` image. Output lies in `[0, 1]`.
pub fn clahe(img: &[f32], height: usize, width: usize, params: &ClaheParams) -> Vec<f32> {
    assert_eq!(img.len(), height * width, "image buffer does not match dims");
    if img.is_empty() {
        return Vec::new();
    }
    let ty = params.tiles.0.clamp(1, height);
    let tx = params.tiles.1.clamp(1, width);
    let bins = params.bins.max(2);
    let params = ClaheParams { bins, ..*params };
    let bounds = |n: usize, t: usize, i: usize| (i * n / t)..((i + 1) * n / t);
    let maps: Vec<Vec<f32>> = (0..ty)
        .flat_map(|i| (0..tx).map(move |j| (i, j)))
        .map(|(i, j)| tile_mapping(img, width, bounds(height, ty, i), bounds(width, tx, j), &params))
        .collect();
    let tile_h = height as f64 / ty as f64;
    let tile_w = width as f64 / tx as f64;
    // blend weights per row/column: (tile0, tile1, weight of tile1)
    let axis_blend = |n: usize, t: usize, size: f64| -> Vec<(usize, usize, f32)> {
        (0..n)
            .map(|p| {
                let pos = (p as f64 + 0.5) / size - 0.5;
                if pos <= 0.0 {
                    (0, 0, 0.0)
                } else if pos >= (t - 1) as f64 {
                    (t - 1, t - 1, 0.0)
                } else {
                    let t0 = pos.floor() as usize;
                    (t0, t0 + 1, (pos - t0 as f64) as f32)
                }
            })
            .collect()
    };
    let rb = axis_blend(height, ty, tile_h);
    let cb = axis_blend(width, tx, tile_w);
    let mut out = Vec::with_capacity(img.len());
    for (r, &(r0, r1, fr)) in rb.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cb.iter().enumerate() {
            let b = bin_of(img[r * width + c], bins);
            let m = |i: usize, j: usize| maps[i * tx + j][b];
            let top = m(r0, c0) * (1.0 - fc) + m(r0, c1) * fc;
            let bot = m(r1, c0) * (1.0 - fc) + m(r1, c1) * fc;
            out.push((top * (1.0 - fr) + bot * fr).clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_stays_constant() {
        for value in [0.0f32, 0.3, 1.0] {
            let img = vec![value; 40 * 30];
            let out = clahe(&img, 40, 30, &ClaheParams::default());
            assert!(out.iter().all(|&x| (x - out[0]).abs() < 1e-6), "value {value}");
        }
    }

    #[test]
    fn two_level_image_is_stretched() {
        // Hand computation with one tile and no clipping: bins 51 and 204
        // each hold half the pixels, so cdf_min = n/2 and the mapping sends
        // 0.2 -> 0 and 0.8 -> 1.
        let (h, w) = (16, 16);
        let img: Vec<f32> = (0..h * w).map(|i| if i < h * w / 2 { 0.2 } else { 0.8 }).collect();
        let params = ClaheParams {
            clip_limit: 1000.0,
            tiles: (1, 1),
            bins: 256,
        };
        let out = clahe(&img, h, w, &params);
        let lo = out[0];
        let hi = out[h * w - 1];
        assert_eq!((lo, hi), (0.0, 1.0));
        assert!(hi - lo > 0.8 - 0.2);
    }

    #[test]
    fn output_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img: Vec<f32> = (0..64 * 48).map(|_| rng.random_range(-0.5..1.5)).collect();
        let out = clahe(&img, 64, 48, &ClaheParams::default());
        assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn tiny_image_with_many_tiles() {
        let img = vec![0.1, 0.9, 0.5];
        let out = clahe(&img, 1, 3, &ClaheParams::default());
        assert_eq!(out.len(), 3);
    }
}
