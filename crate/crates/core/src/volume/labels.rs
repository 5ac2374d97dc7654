use super::reflect_index;
use crate::error::{Error, Result};

/// Integer class-label volume over an `H × W × C` grid, same voxel order as
/// [`super::Volume4D`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelVolume {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if dims.contains(&0) || data.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidShape(format!(
                "label volume {dims:?} cannot hold {} values",
                data.len()
            )));
        }
        Ok(LabelVolume { dims, data })
    }

    pub(crate) fn from_parts(dims: [usize; 3], data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        LabelVolume { dims, data }
    }

    pub fn filled(dims: [usize; 3], label: u8) -> Self {
        LabelVolume::from_parts(dims, vec![label; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for h in 0..dims[0] {
            for w in 0..dims[1] {
                for c in 0..dims[2] {
                    data.push(f(h, w, c));
                }
            }
        }
        LabelVolume { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.dims[1] + w) * self.dims[2] + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> u8 {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, label: u8) {
        let i = self.index(h, w, c);
        self.data[i] = label;
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct labels present.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// Binary mask of voxels carrying `label`.
    pub fn binary(&self, label: u8) -> Vec<bool> {
        self.data.iter().map(|&l| l == label).collect()
    }

    /// Applies `f` to every label.
    pub fn map(&self, f: impl Fn(u8) -> u8) -> LabelVolume {
        LabelVolume::from_parts(self.dims, self.data.iter().map(|&l| f(l)).collect())
    }

    pub fn crop(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<LabelVolume> {
        for a in 0..3 {
            if dims[a] == 0 || origin[a] + dims[a] > self.dims[a] {
                return Err(Error::InvalidShape(format!(
                    "crop {origin:?}+{dims:?} exceeds {:?}",
                    self.dims
                )));
            }
        }
        Ok(LabelVolume::from_fn(dims, |h, w, c| {
            self.get(h + origin[0], w + origin[1], c + origin[2])
        }))
    }

    /// Reflect-pads at the far end of each axis up to `dims`.
    pub fn pad_reflect_to(&self, dims: [usize; 3]) -> Result<LabelVolume> {
        if (0..3).any(|a| dims[a] < self.dims[a]) {
            return Err(Error::InvalidShape(format!(
                "cannot pad {:?} down to {dims:?}",
                self.dims
            )));
        }
        Ok(LabelVolume::from_fn(dims, |h, w, c| {
            self.get(
                reflect_index(h as isize, self.dims[0]),
                reflect_index(w as isize, self.dims[1]),
                reflect_index(c as isize, self.dims[2]),
            )
        }))
    }
}

/// Per-slice `window × window` median over the in-plane axes with reflect
/// padding. The median of the sorted window is its lower middle element.
pub fn median_filter_2d(labels: &LabelVolume, window: usize) -> Result<LabelVolume> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidSpec(format!(
            "median window must be odd, got {window}"
        )));
    }
    let [nh, nw, nc] = labels.dims();
    let r = (window / 2) as isize;
    let n = window * window;
    // rank of the lower median, 0-based
    let rank = (n - 1) / 2;
    let hmap: Vec<Vec<usize>> = (0..nh)
        .map(|h| (-r..=r).map(|d| reflect_index(h as isize + d, nh)).collect())
        .collect();
    let wmap: Vec<Vec<usize>> = (0..nw)
        .map(|w| (-r..=r).map(|d| reflect_index(w as isize + d, nw)).collect())
        .collect();
    let top = labels.max_label() as usize;
    let mut out = labels.clone();
    let mut counts = vec![0usize; top + 1];
    for c in 0..nc {
        for h in 0..nh {
            for w in 0..nw {
                counts.fill(0);
                for &sh in &hmap[h] {
                    for &sw in &wmap[w] {
                        counts[labels.get(sh, sw, c) as usize] += 1;
                    }
                }
                let mut seen = 0;
                let mut median = 0u8;
                for (label, &cnt) in counts.iter().enumerate() {
                    seen += cnt;
                    if seen > rank {
                        median = label as u8;
                        break;
                    }
                }
                out.set(h, w, c, median);
            }
        }
    }
    Ok(out)
}
