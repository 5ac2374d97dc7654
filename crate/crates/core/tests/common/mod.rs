//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numerical code.

#![allow(dead_code)]

use std::collections::HashSet;

use pshop::volume::Volume4D;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` sorted by decreasing eigenvalue;
/// eigenvector `i` is `vecs[i]`.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// 3×3×3 reflect-padded neighborhoods of channel `k`, one row per voxel.
pub fn gather3(v: &Volume4D, k: usize) -> Vec<Vec<f64>> {
    let s = v.shape();
    let mut rows = Vec::with_capacity(s.h * s.w * s.c);
    for h in 0..s.h {
        for w in 0..s.w {
            for c in 0..s.c {
                let mut row = Vec::with_capacity(27);
                for dh in -1..=1isize {
                    for dw in -1..=1isize {
                        for dc in -1..=1isize {
                            let hh = reflect(h as isize + dh, s.h);
                            let ww = reflect(w as isize + dw, s.w);
                            let cc = reflect(c as isize + dc, s.c);
                            row.push(v.get(hh, ww, cc, k) as f64);
                        }
                    }
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// Two-pass population covariance.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Reference Saab transform of a set of rows.
pub struct OracleSaab {
    /// DC first, then AC anchors by decreasing eigenvalue.
    pub anchors: Vec<Vec<f64>>,
    /// Energy fractions in anchor order.
    pub energies: Vec<f64>,
    pub bias: f64,
}

pub fn oracle_saab(rows: &[Vec<f64>], bias_epsilon: f64) -> OracleSaab {
    let d = rows[0].len();
    let cov = covariance(rows);
    let a0 = vec![1.0 / (d as f64).sqrt(); d];
    // P Σ P with P = I - a0 a0ᵀ, built by explicit matrix products
    let p: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| f64::from(i == j) - a0[i] * a0[j]).collect())
        .collect();
    let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|k| x[i][k] * y[k][j]).sum()).collect())
            .collect()
    };
    let s = mul(&mul(&p, &cov), &p);
    let dc_var: f64 = (0..d).map(|i| (0..d).map(|j| a0[i] * cov[i][j] * a0[j]).sum::<f64>()).sum();
    let trace: f64 = (0..d).map(|i| s[i][i]).sum();
    let total = dc_var + trace;
    let (vals, vecs) = jacobi_eigen(&s);
    let mut anchors = vec![a0];
    let mut energies = vec![dc_var / total];
    for (lambda, mut v) in vals.into_iter().zip(vecs).take(d - 1) {
        let pivot = (0..d).max_by(|&i, &j| v[i].abs().partial_cmp(&v[j].abs()).unwrap().then(j.cmp(&i))).unwrap();
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        anchors.push(v);
        energies.push(lambda / total);
    }
    let mut min = f64::INFINITY;
    for r in rows {
        for a in &anchors {
            min = min.min(dot(a, r));
        }
    }
    OracleSaab {
        anchors,
        energies,
        bias: (-min).max(0.0) + bias_epsilon,
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// DSC by explicit set construction.
pub fn dsc_sets(x: &[bool], y: &[bool]) -> f64 {
    let sx: HashSet<usize> = x.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    let sy: HashSet<usize> = y.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    if sx.is_empty() && sy.is_empty() {
        return 1.0;
    }
    2.0 * sx.intersection(&sy).count() as f64 / (sx.len() + sy.len()) as f64
}

/// Lower median of the 7×7 (or `window`) reflect-padded in-plane window.
pub fn median_oracle(labels: &pshop::volume::LabelVolume, window: usize) -> pshop::volume::LabelVolume {
    let [nh, nw, nc] = labels.dims();
    let r = (window / 2) as isize;
    pshop::volume::LabelVolume::from_fn([nh, nw, nc], |h, w, c| {
        let mut vals = Vec::with_capacity(window * window);
        for dh in -r..=r {
            for dw in -r..=r {
                vals.push(labels.get(reflect(h as isize + dh, nh), reflect(w as isize + dw, nw), c));
            }
        }
        vals.sort_unstable();
        vals[(vals.len() - 1) / 2]
    })
}
