//! Dense 4D volumes and the spatial primitives built on them.
//!
//! A [`Volume4D`] is an `H × W × C × K` tensor: two in-plane axes, a slice
//! axis and a feature-channel axis. Storage is row-major with the channel
//! axis fastest, so the flat index of `(h, w, c, k)` is
//! `((h·W + w)·C + c)·K + k`.

mod clahe;
mod interp;
mod labels;
pub(crate) mod neighborhood;
mod pool;

pub use clahe::{clahe, ClaheParams};
pub use interp::{
    resample_labels_nearest, resample_lanczos, resample_lanczos_to, resize_labels_nearest,
    resize_trilinear, resize_trilinear_centered, LANCZOS_ORDER,
};
pub use labels::{median_filter_2d, LabelVolume};
pub use neighborhood::{gather_neighborhoods, AxisIndex, NeighborhoodSpec, Padding, RowMatrix};
pub use pool::max_pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of a volume along its four axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize, k: usize) -> Self {
        Shape { h, w, c, k }
    }

    pub const fn spatial(&self) -> [usize; 3] {
        [self.h, self.w, self.c]
    }

    pub const fn voxels(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn len(&self) -> usize {
        self.voxels() * self.k
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_channels(self, k: usize) -> Self {
        Shape { k, ..self }
    }

    pub fn from_spatial(dims: [usize; 3], k: usize) -> Self {
        Shape::new(dims[0], dims[1], dims[2], k)
    }

    fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.c == 0 || self.k == 0 {
            return Err(Error::InvalidShape(format!(
                "all extents must be >= 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.h, self.w, self.c, self.k)
    }
}

/// Voxel spacing in millimetres, ordered `(dy, dx, dz)` to match `(H, W, C)`.
pub type Spacing = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Volume4D {
    shape: Shape,
    data: Vec<f32>,
    spacing: Option<Spacing>,
}

impl Volume4D {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match shape {shape} ({} values)",
                data.len(),
                shape.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidShape(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Volume4D {
            shape,
            data,
            spacing: None,
        })
    }

    pub fn filled(shape: Shape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    /// Builds a volume by evaluating `f(h, w, c, k)` at every entry.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for h in 0..shape.h {
            for w in 0..shape.w {
                for c in 0..shape.c {
                    for k in 0..shape.k {
                        data.push(f(h, w, c, k));
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    /// Internal constructor for outputs whose shape and finiteness are
    /// guaranteed by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>, spacing: Option<Spacing>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Volume4D {
            shape,
            data,
            spacing,
        }
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Metadata(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        self.spacing = Some(spacing);
        Ok(self)
    }

    pub(crate) fn set_spacing(&mut self, spacing: Option<Spacing>) {
        self.spacing = spacing;
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Option<Spacing> {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize, k: usize) -> usize {
        let s = &self.shape;
        ((h * s.w + w) * s.c + c) * s.k + k
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize, k: usize) -> f32 {
        self.data[self.index(h, w, c, k)]
    }

    /// Channel vector of voxel `(h, w, c)`.
    #[inline]
    pub fn voxel(&self, h: usize, w: usize, c: usize) -> &[f32] {
        let start = self.index(h, w, c, 0);
        &self.data[start..start + self.shape.k]
    }

    /// Copies channel `k` into a single-channel volume.
    pub fn channel(&self, k: usize) -> Result<Volume4D> {
        if k >= self.shape.k {
            return Err(Error::InvalidShape(format!(
                "channel {k} out of range for {}",
                self.shape
            )));
        }
        let kk = self.shape.k;
        let data = self.data.iter().skip(k).step_by(kk).copied().collect();
        Ok(Volume4D::from_parts(
            self.shape.with_channels(1),
            data,
            self.spacing,
        ))
    }

    /// Voxel-wise concatenation along the channel axis. Spacing is taken from
    /// the first part.
    pub fn concat_channels(parts: &[&Volume4D]) -> Result<Volume4D> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("nothing to concatenate".into()))?;
        let dims = first.shape.spatial();
        if let Some(bad) = parts.iter().find(|p| p.shape.spatial() != dims) {
            return Err(Error::InvalidShape(format!(
                "cannot concatenate {} with {}",
                first.shape, bad.shape
            )));
        }
        let k_total: usize = parts.iter().map(|p| p.shape.k).sum();
        let shape = Shape::from_spatial(dims, k_total);
        let mut data = Vec::with_capacity(shape.len());
        for v in 0..shape.voxels() {
            for p in parts {
                let k = p.shape.k;
                data.extend_from_slice(&p.data[v * k..(v + 1) * k]);
            }
        }
        Ok(Volume4D::from_parts(shape, data, first.spacing))
    }

    /// Per-channel `(min, max)`.
    pub fn channel_range(&self) -> Vec<(f32, f32)> {
        let k = self.shape.k;
        let mut out = vec![(f32::INFINITY, f32::NEG_INFINITY); k];
        for vox in self.data.chunks_exact(k) {
            for (r, &x) in out.iter_mut().zip(vox) {
                r.0 = r.0.min(x);
                r.1 = r.1.max(x);
            }
        }
        out
    }

    /// Crops spatially to `[0, dims)` per axis.
    pub fn crop_to(&self, dims: [usize; 3]) -> Result<Volume4D> {
        self.crop(
            [0, 0, 0],
            dims,
        )
    }

    /// Spatial crop of extent `dims` starting at `origin`.
    pub fn crop(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<Volume4D> {
        let s = self.shape;
        let src = s.spatial();
        for a in 0..3 {
            if dims[a] == 0 || origin[a] + dims[a] > src[a] {
                return Err(Error::InvalidShape(format!(
                    "crop {origin:?}+{dims:?} exceeds {s}"
                )));
            }
        }
        let shape = Shape::from_spatial(dims, s.k);
        let mut data = Vec::with_capacity(shape.len());
        for h in 0..dims[0] {
            for w in 0..dims[1] {
                let start = self.index(h + origin[0], w + origin[1], origin[2], 0);
                data.extend_from_slice(&self.data[start..start + dims[2] * s.k]);
            }
        }
        Ok(Volume4D::from_parts(shape, data, self.spacing))
    }

    /// Reflect-pads each spatial axis at its far end up to `dims`.
    pub fn pad_reflect_to(&self, dims: [usize; 3]) -> Result<Volume4D> {
        let s = self.shape;
        let src = s.spatial();
        if (0..3).any(|a| dims[a] < src[a]) {
            return Err(Error::InvalidShape(format!(
                "cannot pad {s} down to {dims:?}"
            )));
        }
        let maps: Vec<Vec<usize>> = (0..3)
            .map(|a| (0..dims[a]).map(|i| reflect_index(i as isize, src[a])).collect())
            .collect();
        let shape = Shape::from_spatial(dims, s.k);
        let mut data = Vec::with_capacity(shape.len());
        for &h in &maps[0] {
            for &w in &maps[1] {
                for &c in &maps[2] {
                    data.extend_from_slice(self.voxel(h, w, c));
                }
            }
        }
        Ok(Volume4D::from_parts(shape, data, self.spacing))
    }

    /// Applies `f` elementwise; non-finite results are rejected.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume4D> {
        let mut out = Volume4D::new(self.shape, self.data.iter().map(|&x| f(x)).collect())?;
        out.spacing = self.spacing;
        Ok(out)
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`). Handles offsets of any size by folding.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_nan() {
        let s = Shape::new(2, 2, 1, 1);
        assert!(Volume4D::new(s, vec![0.0; 3]).is_err());
        assert!(Volume4D::new(s, vec![0.0, 1.0, f32::NAN, 0.0]).is_err());
        assert!(Volume4D::new(Shape::new(0, 2, 1, 1), vec![]).is_err());
    }

    #[test]
    fn reflect_folds() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn concat_and_channel_roundtrip() {
        let a = Volume4D::from_fn(Shape::new(2, 3, 2, 1), |h, w, c, _| (h * 100 + w * 10 + c) as f32).unwrap();
        let b = a.map(|x| -x).unwrap();
        let ab = Volume4D::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.shape().k, 2);
        assert_eq!(ab.channel(0).unwrap(), a);
        assert_eq!(ab.channel(1).unwrap(), b);
        assert_eq!(ab.get(1, 2, 1, 1), -121.0);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let a = Volume4D::from_fn(Shape::new(3, 5, 2, 2), |h, w, c, k| (h + 2 * w + 3 * c + 7 * k) as f32).unwrap();
        let p = a.pad_reflect_to([8, 8, 8]).unwrap();
        assert_eq!(p.shape(), Shape::new(8, 8, 8, 2));
        assert_eq!(p.crop_to([3, 5, 2]).unwrap(), a);
        // reflected entry
        assert_eq!(p.get(3, 0, 0, 0), a.get(1, 0, 0, 0));
    }
}
