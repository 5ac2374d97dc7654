//! Per-slice PNG overlays: prediction contours over the grayscale image.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume4D};

const PALETTE: [[u8; 3]; 6] = [
    [255, 64, 64],
    [64, 255, 64],
    [64, 128, 255],
    [255, 255, 64],
    [255, 64, 255],
    [64, 255, 255],
];

fn colour(label: u8) -> Rgb<u8> {
    Rgb(PALETTE[(label as usize - 1) % PALETTE.len()])
}

/// True when a 4-neighbour in the slice carries a different label.
fn on_contour(labels: &LabelVolume, h: usize, w: usize, c: usize) -> bool {
    let [nh, nw, _] = labels.dims();
    let l = labels.get(h, w, c);
    (h > 0 && labels.get(h - 1, w, c) != l)
        || (h + 1 < nh && labels.get(h + 1, w, c) != l)
        || (w > 0 && labels.get(h, w - 1, c) != l)
        || (w + 1 < nw && labels.get(h, w + 1, c) != l)
}

/// Renders slice `c` with foreground contours drawn in per-class colours.
pub fn render_slice(image: &Volume4D, labels: &LabelVolume, c: usize) -> Result<RgbImage> {
    let [nh, nw, _] = labels.dims();
    if image.shape().spatial() != labels.dims() {
        return Err(Error::InvalidShape(format!(
            "overlay image {} vs labels {:?}",
            image.shape(),
            labels.dims()
        )));
    }
    let (lo, hi) = image.channel_range()[0];
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = RgbImage::new(nw as u32, nh as u32);
    for h in 0..nh {
        for w in 0..nw {
            let l = labels.get(h, w, c);
            let px = if l > 0 && on_contour(labels, h, w, c) {
                colour(l)
            } else {
                let g = (((image.get(h, w, c, 0) - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
                Rgb([g, g, g])
            };
            out.put_pixel(w as u32, h as u32, px);
        }
    }
    Ok(out)
}

/// Writes `<dir>/<id>_slice<NNN>.png` for every slice; returns the paths.
pub fn write_overlays(dir: &Path, id: &str, image: &Volume4D, labels: &LabelVolume) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..labels.dims()[2])
        .map(|c| {
            let path = dir.join(format!("{id}_slice{c:03}.png"));
            render_slice(image, labels, c)?.save(&path)?;
            Ok(path)
        })
        .collect()
}
