use serde::{Deserialize, Serialize};

use super::{reflect_index, Volume4D};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Reflect,
    Zero,
}

/// Window size, stride and border handling for neighborhood gathering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub size: [usize; 3],
    pub stride: [usize; 3],
    pub padding: Padding,
}

impl NeighborhoodSpec {
    pub fn new(size: [usize; 3], stride: [usize; 3], padding: Padding) -> Result<Self> {
        let spec = NeighborhoodSpec {
            size,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `3×3×3`, stride 1, reflect padding: the VoxelHop window.
    pub fn cube3() -> Self {
        NeighborhoodSpec {
            size: [3, 3, 3],
            stride: [1, 1, 1],
            padding: Padding::Reflect,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| s == 0 || s % 2 == 0) {
            return Err(Error::InvalidSpec(format!(
                "window sizes must be odd and >= 1, got {:?}",
                self.size
            )));
        }
        if self.stride.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "strides must be >= 1, got {:?}",
                self.stride
            )));
        }
        Ok(())
    }

    /// Flattened window length for a single channel.
    pub fn window_len(&self) -> usize {
        self.size.iter().product()
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| dims[a].div_ceil(self.stride[a]))
    }
}

/// Dense row-major `f32` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl RowMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(RowMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// Source-index table for one axis: position `p` of the padded range
/// `[-radius, n + radius)` maps to `Some(index)` or `None` (zero padding).
#[derive(Clone, Debug)]
pub struct AxisIndex {
    radius: usize,
    table: Vec<Option<usize>>,
}

impl AxisIndex {
    pub fn new(n: usize, radius: usize, padding: Padding) -> Self {
        let table = (-(radius as isize)..(n + radius) as isize)
            .map(|i| {
                if (0..n as isize).contains(&i) {
                    Some(i as usize)
                } else {
                    match padding {
                        Padding::Reflect => Some(reflect_index(i, n)),
                        Padding::Zero => None,
                    }
                }
            })
            .collect();
        AxisIndex { radius, table }
    }

    /// Source index for centre `i` displaced by window position `j`
    /// (`j` in `0..2·radius+1`).
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Option<usize> {
        self.table[i + j]
    }

    pub fn radius(&self) -> usize {
        self.radius
    }
}

/// Streaming neighborhood reader shared by the public gather and the Saab
/// transforms, which never materialise the full neighborhood matrix.
pub(crate) struct Gatherer<'a> {
    vol: &'a Volume4D,
    spec: NeighborhoodSpec,
    axes: [AxisIndex; 3],
}

impl<'a> Gatherer<'a> {
    pub(crate) fn new(vol: &'a Volume4D, spec: NeighborhoodSpec) -> Result<Self> {
        spec.validate()?;
        let dims = vol.shape().spatial();
        for a in 0..3 {
            if spec.size[a] > 2 * dims[a] + 1 {
                return Err(Error::InvalidSpec(format!(
                    "window {:?} exceeds twice the volume extent {:?}",
                    spec.size, dims
                )));
            }
        }
        let axes = [0, 1, 2].map(|a| AxisIndex::new(dims[a], spec.size[a] / 2, spec.padding));
        Ok(Gatherer { vol, spec, axes })
    }

    pub(crate) fn out_dims(&self) -> [usize; 3] {
        self.spec.output_dims(self.vol.shape().spatial())
    }

    /// Fills `buf` (length `S_H·S_W·S_C`) with channel `k` around output voxel
    /// `(oh, ow, oc)`.
    #[inline]
    pub(crate) fn fill_channel(&self, oh: usize, ow: usize, oc: usize, k: usize, buf: &mut [f32]) {
        let [sh, sw, sc] = self.spec.size;
        let [th, tw, tc] = self.spec.stride;
        let (h0, w0, c0) = (oh * th, ow * tw, oc * tc);
        let shape = self.vol.shape();
        let data = self.vol.data();
        let mut p = 0;
        for jh in 0..sh {
            let h = self.axes[0].at(h0, jh);
            for jw in 0..sw {
                let w = self.axes[1].at(w0, jw);
                for jc in 0..sc {
                    let c = self.axes[2].at(c0, jc);
                    buf[p] = match (h, w, c) {
                        (Some(h), Some(w), Some(c)) => {
                            data[((h * shape.w + w) * shape.c + c) * shape.k + k]
                        }
                        _ => 0.0,
                    };
                    p += 1;
                }
            }
        }
    }

    /// Fills `buf` (length `S_H·S_W·S_C·K`) with all channels, spatial-major.
    #[inline]
    pub(crate) fn fill_all(&self, oh: usize, ow: usize, oc: usize, buf: &mut [f32]) {
        let [sh, sw, sc] = self.spec.size;
        let [th, tw, tc] = self.spec.stride;
        let (h0, w0, c0) = (oh * th, ow * tw, oc * tc);
        let kk = self.vol.shape().k;
        let mut p = 0;
        for jh in 0..sh {
            let h = self.axes[0].at(h0, jh);
            for jw in 0..sw {
                let w = self.axes[1].at(w0, jw);
                for jc in 0..sc {
                    let c = self.axes[2].at(c0, jc);
                    let dst = &mut buf[p..p + kk];
                    match (h, w, c) {
                        (Some(h), Some(w), Some(c)) => dst.copy_from_slice(self.vol.voxel(h, w, c)),
                        _ => dst.fill(0.0),
                    }
                    p += kk;
                }
            }
        }
    }
}

/// Gathers the `S_H × S_W × S_C` neighborhood (all channels) around every
/// output voxel. Rows follow voxel order (H slowest, C fastest); within a
/// row, window positions are in the same order with channels innermost.
pub fn gather_neighborhoods(v: &Volume4D, spec: &NeighborhoodSpec) -> Result<RowMatrix> {
    let g = Gatherer::new(v, *spec)?;
    let [oh, ow, oc] = g.out_dims();
    let cols = spec.window_len() * v.shape().k;
    let mut out = RowMatrix::zeros(oh * ow * oc, cols);
    let mut r = 0;
    for h in 0..oh {
        for w in 0..ow {
            for c in 0..oc {
                g.fill_all(h, w, c, out.row_mut(r));
                r += 1;
            }
        }
    }
    Ok(out)
}
