//! Resolution regularisation, intensity normalisation, contrast enhancement
//! and grid fitting, with the bookkeeping to map labels back.

use serde::{Deserialize, Serialize};

use super::case::Case;
use super::config::PreprocessConfig;
use crate::error::{Error, Result};
use crate::volume::{
    clahe, resample_labels_nearest, resample_lanczos, resize_labels_nearest, resize_trilinear, LabelVolume,
    Spacing, Volume4D,
};

/// Grid sizes at every preprocessing stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub original_dims: [usize; 3],
    pub original_spacing: Spacing,
    /// After resampling to the target spacing.
    pub resampled_dims: [usize; 3],
    pub target_spacing: Spacing,
    /// In-plane crop window `(h, w)` on the resampled grid.
    pub crop_origin: [usize; 2],
    pub crop_dims: [usize; 2],
    pub resized_dims: [usize; 3],
    /// Final model-input grid.
    pub padded_dims: [usize; 3],
}

/// Square in-plane crop centred on a point given in original voxel coordinates `(h, w)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crop {
    pub size: usize,
    pub center: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    /// Model-input image on the padded grid.
    pub image: Volume4D,
    pub mask: Option<LabelVolume>,
    pub geometry: Geometry,
}

/// Mean voxel position `(h, w, c)` of all nonzero labels.
pub fn foreground_centroid(labels: &LabelVolume) -> Option<[f64; 3]> {
    let [nh, nw, nc] = labels.dims();
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for h in 0..nh {
        for w in 0..nw {
            for c in 0..nc {
                if labels.get(h, w, c) > 0 {
                    sum[0] += h as f64;
                    sum[1] += w as f64;
                    sum[2] += c as f64;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

fn normalize(v: &Volume4D) -> Result<Volume4D> {
    let (lo, hi) = v.channel_range()[0];
    let span = hi - lo;
    if span > 0.0 {
        v.map(|x| ((x - lo) / span).clamp(0.0, 1.0))
    } else {
        v.map(|_| 0.0)
    }
}

fn clahe_slices(v: &Volume4D, cfg: &PreprocessConfig) -> Result<Volume4D> {
    let [nh, nw, nc] = v.shape().spatial();
    let mut data = v.data().to_vec();
    let mut slice = vec![0f32; nh * nw];
    for c in 0..nc {
        for (i, s) in slice.iter_mut().enumerate() {
            *s = data[i * nc + c];
        }
        let eq = clahe(&slice, nh, nw, &cfg.clahe);
        for (i, x) in eq.into_iter().enumerate() {
            data[i * nc + c] = x;
        }
    }
    Volume4D::new(v.shape(), data)?.with_spacing(v.spacing().expect("resampled volume has spacing"))
}

fn crop_window(dims: [usize; 3], crop: Option<Crop>, orig_sp: Spacing, target: Spacing) -> ([usize; 2], [usize; 2]) {
    match crop {
        None => ([0, 0], [dims[0], dims[1]]),
        Some(c) => {
            let mut origin = [0; 2];
            let mut size = [0; 2];
            for a in 0..2 {
                size[a] = c.size.min(dims[a]);
                let centre = (c.center[a] + 0.5) * orig_sp[a] / target[a] - 0.5;
                let start = (centre - size[a] as f64 / 2.0 + 0.5).floor();
                origin[a] = (start.max(0.0) as usize).min(dims[a] - size[a]);
            }
            (origin, size)
        }
    }
}

/// Brings a case onto the model-input grid. `slice_multiple` is the
/// divisibility the encoder needs along the slice axis.
pub fn preprocess(case: &Case, cfg: &PreprocessConfig, slice_multiple: usize, crop: Option<Crop>) -> Result<Prepared> {
    let spacing = case
        .spacing()
        .ok_or_else(|| Error::Metadata(format!("case {} has no voxel spacing", case.id)))?;
    let target = cfg.target_spacing;
    let resampled = resample_lanczos(&case.image, target)?;
    let rdims = resampled.shape().spatial();
    let enhanced = clahe_slices(&normalize(&resampled)?, cfg)?;
    let (origin, cdims) = crop_window(rdims, crop, spacing, target);
    let cropped = enhanced.crop([origin[0], origin[1], 0], [cdims[0], cdims[1], rdims[2]])?;
    let resized_dims = [cfg.in_plane[0], cfg.in_plane[1], rdims[2]];
    let resized = resize_trilinear(&cropped, resized_dims)?;
    let m = slice_multiple.max(1);
    let padded_dims = [resized_dims[0], resized_dims[1], rdims[2].div_ceil(m) * m];
    let image = resized.pad_reflect_to(padded_dims)?;

    let mask = case
        .mask
        .as_ref()
        .map(|mask| -> Result<LabelVolume> {
            let r = resample_labels_nearest(mask, spacing, rdims, target)?;
            let c = r.crop([origin[0], origin[1], 0], [cdims[0], cdims[1], rdims[2]])?;
            resize_labels_nearest(&c, resized_dims)?.pad_reflect_to(padded_dims)
        })
        .transpose()?;

    Ok(Prepared {
        id: case.id.clone(),
        image,
        mask,
        geometry: Geometry {
            original_dims: case.dims(),
            original_spacing: spacing,
            resampled_dims: rdims,
            target_spacing: target,
            crop_origin: origin,
            crop_dims: cdims,
            resized_dims,
            padded_dims,
        },
    })
}

/// Maps labels on the padded grid back to the original voxel grid with
/// nearest-neighbour transport. Voxels outside the crop window are background.
pub fn invert_labels(geometry: &Geometry, labels: &LabelVolume) -> Result<LabelVolume> {
    let g = geometry;
    if labels.dims() != g.padded_dims {
        return Err(Error::InvalidShape(format!(
            "labels {:?} are not on the model grid {:?}",
            labels.dims(),
            g.padded_dims
        )));
    }
    let unpadded = labels.crop([0, 0, 0], g.resized_dims)?;
    let uncropped = resize_labels_nearest(&unpadded, [g.crop_dims[0], g.crop_dims[1], g.resized_dims[2]])?;
    let [oh, ow] = g.crop_origin;
    let [ch, cw] = g.crop_dims;
    let full = LabelVolume::from_fn(g.resampled_dims, |h, w, c| {
        if (oh..oh + ch).contains(&h) && (ow..ow + cw).contains(&w) {
            uncropped.get(h - oh, w - ow, c)
        } else {
            0
        }
    });
    resample_labels_nearest(&full, g.target_spacing, g.original_dims, g.original_spacing)
}
