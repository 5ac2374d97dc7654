//! Dice similarity coefficient.

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// `2|X ∩ Y| / (|X| + |Y|)`. Two empty masks score 1.0.
pub fn dsc(x: &[bool], y: &[bool]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidShape(format!(
            "mask lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let (mut inter, mut nx, mut ny) = (0usize, 0usize, 0usize);
    for (&a, &b) in x.iter().zip(y) {
        nx += a as usize;
        ny += b as usize;
        inter += (a && b) as usize;
    }
    Ok(if nx + ny == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (nx + ny) as f64
    })
}

/// One-vs-rest DSC of `class` between two label volumes.
pub fn class_dsc(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::InvalidShape(format!(
            "label volumes differ: {:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    dsc(&pred.binary(class), &truth.binary(class))
}

/// DSC of every foreground class `1..n_classes`.
pub fn foreground_dsc(pred: &LabelVolume, truth: &LabelVolume, n_classes: usize) -> Result<Vec<f64>> {
    (1..n_classes).map(|c| class_dsc(pred, truth, c as u8)).collect()
}

/// Mean of [`foreground_dsc`].
pub fn mean_foreground_dsc(pred: &LabelVolume, truth: &LabelVolume, n_classes: usize) -> Result<f64> {
    let per = foreground_dsc(pred, truth, n_classes)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // |X| = 4, |Y| = 6, |X ∩ Y| = 3
        let x = [true, true, true, true, false, false, false];
        let y = [true, true, true, false, true, true, true];
        assert_eq!(dsc(&x, &y).unwrap(), 0.6);
    }

    #[test]
    fn conventions() {
        assert_eq!(dsc(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert_eq!(dsc(&[true, false], &[false, false]).unwrap(), 0.0);
        assert_eq!(dsc(&[true, false], &[false, true]).unwrap(), 0.0);
        assert!(dsc(&[true], &[true, false]).is_err());
    }
}
