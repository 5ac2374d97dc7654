use super::{Shape, Volume4D};
use crate::error::{Error, Result};

/// Channel-wise `2×2×2` max-pooling with stride 2. Trailing odd
/// rows/columns/slices are dropped.
pub fn max_pool(v: &Volume4D) -> Result<Volume4D> {
    let s = v.shape();
    if s.h < 2 || s.w < 2 || s.c < 2 {
        return Err(Error::InvalidShape(format!(
            "max-pooling needs every spatial extent >= 2, got {s}"
        )));
    }
    let out = Shape::new(s.h / 2, s.w / 2, s.c / 2, s.k);
    let mut data = vec![f32::NEG_INFINITY; out.len()];
    let k = s.k;
    for oh in 0..out.h {
        for ow in 0..out.w {
            for oc in 0..out.c {
                let dst = ((oh * out.w + ow) * out.c + oc) * k;
                let dst = &mut data[dst..dst + k];
                for h in 2 * oh..2 * oh + 2 {
                    for w in 2 * ow..2 * ow + 2 {
                        for c in 2 * oc..2 * oc + 2 {
                            for (d, &x) in dst.iter_mut().zip(v.voxel(h, w, c)) {
                                if x > *d {
                                    *d = x;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let spacing = v.spacing().map(|sp| sp.map(|x| 2.0 * x));
    Ok(Volume4D::from_parts(out, data, spacing))
}
