//! Separable resampling: trilinear resize (align-corners), Lanczos-3
//! spacing regularisation and nearest-neighbour label transport.

use std::f64::consts::PI;

use super::{LabelVolume, Shape, Spacing, Volume4D};
use crate::error::{Error, Result};

pub const LANCZOS_ORDER: f64 = 3.0;

/// Taps for one output sample along one axis.
type Taps = Vec<(usize, f64)>;

fn apply_axis(v: &Volume4D, axis: usize, taps: &[Taps]) -> Volume4D {
    let s = v.shape();
    let mut dims = s.spatial();
    dims[axis] = taps.len();
    let out = Shape::from_spatial(dims, s.k);
    // strides in the source layout, in units of f32
    let strides = [s.w * s.c * s.k, s.c * s.k, s.k];
    let src = v.data();
    let mut data = Vec::with_capacity(out.len());
    let mut acc = vec![0f64; s.k];
    for h in 0..out.h {
        for w in 0..out.w {
            for c in 0..out.c {
                let o = [h, w, c];
                let mut base = 0;
                for a in 0..3 {
                    if a != axis {
                        base += o[a] * strides[a];
                    }
                }
                acc.fill(0.0);
                for &(i, wt) in &taps[o[axis]] {
                    let at = base + i * strides[axis];
                    for (a, &x) in acc.iter_mut().zip(&src[at..at + s.k]) {
                        *a += wt * x as f64;
                    }
                }
                data.extend(acc.iter().map(|&a| a as f32));
            }
        }
    }
    Volume4D::from_parts(out, data, v.spacing())
}

fn linear_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    (0..n_out)
        .map(|j| {
            let pos = align_corners_pos(j, n_in, n_out);
            let i0 = pos.floor() as usize;
            let f = pos - i0 as f64;
            if f == 0.0 || i0 + 1 >= n_in {
                vec![(i0.min(n_in - 1), 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i0 + 1, f)]
            }
        })
        .collect()
}

/// Source coordinate of output sample `j` when corner samples are aligned.
/// A singleton output samples the centre of the source axis.
#[inline]
fn align_corners_pos(j: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn check_target(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "target dims must be >= 1, got {dims:?}"
        )));
    }
    Ok(())
}

/// Trilinear resize with aligned corners. Channels are preserved.
pub fn resize_trilinear(v: &Volume4D, target: [usize; 3]) -> Result<Volume4D> {
    check_target(target)?;
    let src = v.shape().spatial();
    let mut out = v.clone();
    for a in 0..3 {
        if src[a] != target[a] {
            out = apply_axis(&out, a, &linear_taps(src[a], target[a]));
        }
    }
    if let Some(sp) = v.spacing() {
        let new_sp = [0, 1, 2].map(|a| {
            if target[a] > 1 && src[a] > 1 {
                sp[a] * (src[a] - 1) as f64 / (target[a] - 1) as f64
            } else {
                sp[a] * src[a] as f64 / target[a] as f64
            }
        });
        out.set_spacing(Some(new_sp));
    }
    Ok(out)
}

fn centered_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = pos.floor() as usize;
            let f = pos - i0 as f64;
            if f == 0.0 || i0 + 1 >= n_in {
                vec![(i0.min(n_in - 1), 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i0 + 1, f)]
            }
        })
        .collect()
}

/// Trilinear resize with half-voxel (centre) alignment, matching the
/// geometry of block pooling: at integer factors, voxel centres of the
/// coarse grid sit at block centres of the fine grid. Spacing scales with
/// the extent ratio.
pub fn resize_trilinear_centered(v: &Volume4D, target: [usize; 3]) -> Result<Volume4D> {
    check_target(target)?;
    let src = v.shape().spatial();
    let mut out = v.clone();
    for a in 0..3 {
        if src[a] != target[a] {
            out = apply_axis(&out, a, &centered_taps(src[a], target[a]));
        }
    }
    if let Some(sp) = v.spacing() {
        out.set_spacing(Some([0, 1, 2].map(|a| sp[a] * src[a] as f64 / target[a] as f64)));
    }
    Ok(out)
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

#[inline]
fn lanczos(x: f64) -> f64 {
    if x.abs() >= LANCZOS_ORDER {
        0.0
    } else {
        sinc(x) * sinc(x / LANCZOS_ORDER)
    }
}

/// Lanczos taps mapping voxel centres of an axis with `n_in` samples at
/// `sp_in` to `n_out` samples at `sp_out` (both grids anchored at the outer
/// edge of voxel 0). When shrinking, the kernel is stretched by the scale
/// factor so it also low-passes.
fn lanczos_taps(n_in: usize, sp_in: f64, n_out: usize, sp_out: f64) -> Vec<Taps> {
    let scale = sp_out / sp_in;
    let stretch = scale.max(1.0);
    let radius = LANCZOS_ORDER * stretch;
    (0..n_out)
        .map(|j| {
            let pos = (j as f64 + 0.5) * scale - 0.5;
            let lo = (pos - radius).ceil() as isize;
            let hi = (pos + radius).floor() as isize;
            let mut taps: Taps = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for i in lo..=hi {
                let wt = lanczos((i as f64 - pos) / stretch);
                if wt == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, n_in as isize - 1) as usize;
                total += wt;
                match taps.iter_mut().find(|(t, _)| *t == idx) {
                    Some(t) => t.1 += wt,
                    None => taps.push((idx, wt)),
                }
            }
            if total.abs() < 1e-12 {
                let idx = pos.round().clamp(0.0, (n_in - 1) as f64) as usize;
                return vec![(idx, 1.0)];
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

fn require_spacing(v: &Volume4D) -> Result<Spacing> {
    v.spacing()
        .ok_or_else(|| Error::Metadata("volume has no voxel spacing".into()))
}

fn regularized_dims(dims: [usize; 3], spacing: Spacing, target: Spacing) -> [usize; 3] {
    [0, 1, 2].map(|a| ((dims[a] as f64 * spacing[a] / target[a]).round() as usize).max(1))
}

/// Resamples to `target_spacing` with a separable Lanczos-3 kernel. The
/// output extent is `round(n · spacing / target)` per axis.
pub fn resample_lanczos(v: &Volume4D, target_spacing: Spacing) -> Result<Volume4D> {
    let spacing = require_spacing(v)?;
    if target_spacing.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Metadata(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    let dims = regularized_dims(v.shape().spatial(), spacing, target_spacing);
    resample_lanczos_to(v, dims, target_spacing)
}

/// Lanczos-3 resampling onto an explicit grid of `dims` voxels at `spacing`.
pub fn resample_lanczos_to(v: &Volume4D, dims: [usize; 3], spacing: Spacing) -> Result<Volume4D> {
    check_target(dims)?;
    let src_sp = require_spacing(v)?;
    let src = v.shape().spatial();
    let mut out = v.clone();
    for a in 0..3 {
        if src[a] != dims[a] || src_sp[a] != spacing[a] {
            out = apply_axis(&out, a, &lanczos_taps(src[a], src_sp[a], dims[a], spacing[a]));
        }
    }
    out.set_spacing(Some(spacing));
    Ok(out)
}

/// Nearest-neighbour label resize with the same aligned-corner geometry as
/// [`resize_trilinear`].
pub fn resize_labels_nearest(labels: &LabelVolume, target: [usize; 3]) -> Result<LabelVolume> {
    check_target(target)?;
    let src = labels.dims();
    let maps: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            (0..target[a])
                .map(|j| (align_corners_pos(j, src[a], target[a]).round() as usize).min(src[a] - 1))
                .collect()
        })
        .collect();
    Ok(remap_labels(labels, &maps, target))
}

/// Nearest-neighbour label transport between two voxel grids that share the
/// outer corner of voxel 0, with the same centre mapping as the Lanczos path.
pub fn resample_labels_nearest(
    labels: &LabelVolume,
    src_spacing: Spacing,
    dims: [usize; 3],
    spacing: Spacing,
) -> Result<LabelVolume> {
    check_target(dims)?;
    let src = labels.dims();
    let maps: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            let scale = spacing[a] / src_spacing[a];
            (0..dims[a])
                .map(|j| {
                    let pos = (j as f64 + 0.5) * scale - 0.5;
                    pos.round().clamp(0.0, (src[a] - 1) as f64) as usize
                })
                .collect()
        })
        .collect();
    Ok(remap_labels(labels, &maps, dims))
}

fn remap_labels(labels: &LabelVolume, maps: &[Vec<usize>], dims: [usize; 3]) -> LabelVolume {
    let mut data = Vec::with_capacity(dims.iter().product());
    for &h in &maps[0] {
        for &w in &maps[1] {
            for &c in &maps[2] {
                data.push(labels.get(h, w, c));
            }
        }
    }
    LabelVolume::from_parts(dims, data)
}
