//! Model size and inference cost. The formulas are spelled out in
//! `docs/complexity.md`.

use serde::{Deserialize, Serialize};

use super::model::SegmentationModel;
use crate::classifier::TreeEnsemble;
use crate::decoder::DecoderModel;
use crate::encoder::EncoderModel;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// `N · (kept AC components) + 1` per Saab unit.
    pub saab: u64,
    /// 2 per split node, 1 per leaf.
    pub trees: u64,
    pub total: u64,
}

pub fn encoder_params(enc: &EncoderModel) -> u64 {
    enc.hops
        .iter()
        .map(|hop| {
            let kept = hop.kept();
            hop.units
                .iter()
                .enumerate()
                .map(|(p, u)| {
                    let ac = kept.iter().filter(|&&(par, comp)| par == p && comp > 0).count();
                    (u.n_in() * ac + 1) as u64
                })
                .sum::<u64>()
        })
        .sum()
}

pub fn tree_params(dec: &DecoderModel) -> u64 {
    dec.ensembles()
        .flat_map(TreeEnsemble::all_trees)
        .map(|t| (2 * t.n_splits() + t.n_leaves()) as u64)
        .sum()
}

pub fn count_params(model: &SegmentationModel) -> ParamCount {
    let saab = encoder_params(&model.encoder);
    let trees = tree_params(&model.decoder);
    ParamCount {
        saab,
        trees,
        total: saab + trees,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopCount {
    pub input_dims: [usize; 3],
    pub saab: u64,
    pub pooling: u64,
    pub trees: u64,
    pub softmax: u64,
    pub upsampling: u64,
    pub postprocess: u64,
    pub total: u64,
}

fn ensemble_flops(e: &TreeEnsemble) -> (f64, f64) {
    // comparisons on the walk plus one accumulation per tree
    let walk: f64 = e.all_trees().map(|t| t.mean_leaf_depth() + 1.0).sum();
    let softmax = 3.0 * e.n_classes as f64;
    (walk, softmax)
}

/// Floating-point operations of one inference on a model-input grid of `dims`.
pub fn estimate_flops(model: &SegmentationModel, dims: [usize; 3]) -> FlopCount {
    let hop_dims: Vec<[usize; 3]> = (0..model.encoder.n_hops())
        .map(|i| dims.map(|d| (d >> i).max(1)))
        .collect();
    let voxels = |d: [usize; 3]| d.iter().product::<usize>() as f64;

    let mut saab = 0.0;
    let mut pooling = 0.0;
    for (i, hop) in model.encoder.hops.iter().enumerate() {
        let kept = hop.kept();
        let per_voxel: f64 = kept.iter().map(|&(p, _)| 2.0 * hop.units[p].n_in() as f64).sum();
        saab += per_voxel * voxels(hop_dims[i]);
        if i + 1 < hop_dims.len() {
            pooling += 7.0 * kept.len() as f64 * voxels(hop_dims[i + 1]);
        }
    }

    let n = model.decoder.config.n_classes as f64;
    let l = model.encoder.n_hops();
    let (mut trees, mut softmax, mut upsampling) = (0.0, 0.0, 0.0);
    for hd in &model.decoder.hops {
        let v = voxels(hop_dims[hd.hop - 1]);
        for e in std::iter::once(&hd.main).chain(&hd.refine) {
            let (walk, sm) = ensemble_flops(e);
            trees += walk * v;
            softmax += sm * v;
        }
        if hd.hop < l {
            // separable trilinear: 3 passes of 2 multiplies and 1 add
            upsampling += 9.0 * n * (l - hd.hop) as f64 * v;
        }
    }
    let v1 = voxels(dims);
    let window = model.decoder.config.median_window as f64;
    let postprocess = (n + window * window) * v1;

    let saab = saab as u64;
    let pooling = pooling as u64;
    let trees = trees as u64;
    let softmax = softmax as u64;
    let upsampling = upsampling as u64;
    let postprocess = postprocess as u64;
    FlopCount {
        input_dims: dims,
        saab,
        pooling,
        trees,
        softmax,
        upsampling,
        postprocess,
        total: saab + pooling + trees + softmax + upsampling + postprocess,
    }
}
