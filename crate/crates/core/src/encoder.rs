//! Fine-to-coarse feature learning: `L` cascaded VoxelHop units
//! (3×3×3 neighborhood + channel-wise Saab, stride 1) with 2×2×2
//! max-pooling between consecutive hops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saab::{cw_saab_apply, cw_saab_fit_many, CwSaabConfig, VoxelHopModel, DEFAULT_MAX_COVARIANCE_ROWS};
use crate::volume::{max_pool, NeighborhoodSpec, Volume4D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hops: usize,
    pub neighborhood: NeighborhoodSpec,
    pub energy_threshold: f64,
    pub max_covariance_rows: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hops: 4,
            neighborhood: NeighborhoodSpec::cube3(),
            energy_threshold: 0.002,
            max_covariance_rows: DEFAULT_MAX_COVARIANCE_ROWS,
        }
    }
}

impl EncoderConfig {
    /// Spatial extents must be multiples of this so every pooling is exact.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.hops.saturating_sub(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub hops: Vec<VoxelHopModel>,
}

impl EncoderModel {
    pub fn n_hops(&self) -> usize {
        self.hops.len()
    }

    /// Output channel count `K_i` of each hop.
    pub fn channels(&self) -> Vec<usize> {
        self.hops.iter().map(VoxelHopModel::out_channels).collect()
    }

    pub fn input_channels(&self) -> usize {
        self.hops.first().map_or(0, VoxelHopModel::in_channels)
    }
}

/// Encoder features of one volume, `F_e^1 … F_e^L` (finest first).
pub type HopFeatures = Vec<Volume4D>;

fn check_geometry(v: &Volume4D, cfg: &EncoderConfig) -> Result<()> {
    let m = cfg.spatial_multiple();
    let dims = v.shape().spatial();
    if dims.iter().any(|&d| d % m != 0 || d < m) {
        return Err(Error::InvalidShape(format!(
            "spatial extents {dims:?} must be positive multiples of {m} for {} hops",
            cfg.hops
        )));
    }
    Ok(())
}

/// Fits the cascade on `volumes` (no labels involved).
pub fn encoder_fit(volumes: &[Volume4D], config: &EncoderConfig) -> Result<EncoderModel> {
    Ok(encoder_fit_with_features(volumes, config)?.0)
}

/// Fits the cascade and returns, alongside the model, the per-hop features
/// of every training volume (identical to [`encoder_apply`] on each).
pub fn encoder_fit_with_features(
    volumes: &[Volume4D],
    config: &EncoderConfig,
) -> Result<(EncoderModel, Vec<HopFeatures>)> {
    if config.hops == 0 {
        return Err(Error::Config("encoder needs at least one hop".into()));
    }
    let first = volumes
        .first()
        .ok_or_else(|| Error::InsufficientData("no training volumes".into()))?;
    let k = first.shape().k;
    for v in volumes {
        check_geometry(v, config)?;
        if v.shape().k != k {
            return Err(Error::InvalidShape(format!(
                "training volumes disagree on channels: {} vs {}",
                first.shape(),
                v.shape()
            )));
        }
    }

    let mut hops = Vec::with_capacity(config.hops);
    let mut features: Vec<HopFeatures> = vec![Vec::with_capacity(config.hops); volumes.len()];
    let mut inputs: Vec<Volume4D> = volumes.to_vec();
    let mut parent_energies = vec![1.0 / k as f64; k];
    for hop in 1..=config.hops {
        if hop > 1 {
            inputs = features
                .iter()
                .map(|f| max_pool(f.last().expect("previous hop")))
                .collect::<Result<_>>()
                .map_err(|e| e.at_hop(hop))?;
        }
        let cfg = CwSaabConfig {
            spec: config.neighborhood,
            energy_threshold: config.energy_threshold,
            max_covariance_rows: config.max_covariance_rows,
            hop,
        };
        let (model, feats) =
            cw_saab_fit_many(&inputs, &cfg, &parent_energies).map_err(|e| e.at_hop(hop))?;
        log::debug!(
            "hop {hop}: {} -> {} channels",
            model.in_channels(),
            model.out_channels()
        );
        parent_energies = model.kept_energies();
        for (f, feat) in features.iter_mut().zip(feats) {
            f.push(feat);
        }
        hops.push(model);
    }
    Ok((
        EncoderModel {
            config: config.clone(),
            hops,
        },
        features,
    ))
}

/// Runs a fitted cascade on one volume.
pub fn encoder_apply(model: &EncoderModel, v: &Volume4D) -> Result<HopFeatures> {
    check_geometry(v, &model.config)?;
    if v.shape().k != model.input_channels() {
        return Err(Error::InvalidShape(format!(
            "encoder expects {} input channels, got {}",
            model.input_channels(),
            v.shape()
        )));
    }
    let mut out: HopFeatures = Vec::with_capacity(model.n_hops());
    for (i, hop) in model.hops.iter().enumerate() {
        let input = match out.last() {
            None => cw_saab_apply(hop, v),
            Some(prev) => max_pool(prev).and_then(|p| cw_saab_apply(hop, &p)),
        }
        .map_err(|e| e.at_hop(i + 1))?;
        out.push(input);
    }
    Ok(out)
}
