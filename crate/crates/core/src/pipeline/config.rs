use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::volume::{ClaheParams, Spacing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Background vs whole gland; every nonzero mask label counts as gland.
    Gland,
    /// Background / TZ (1) / PZ (2).
    Zonal,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Gland => 2,
            Task::Zonal => 3,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gland" => Ok(Task::Gland),
            "zonal" => Ok(Task::Zonal),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Where the zonal crop window is centred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropCenter {
    /// Centroid of the ground-truth gland (training, isolated zonal evaluation).
    GroundTruth,
    /// Centroid of a gland model's prediction; falls back to the ground truth
    /// when no gland model is supplied.
    GlandModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Target voxel spacing `(dy, dx, dz)` in mm.
    pub target_spacing: Spacing,
    /// In-plane size `(H, W)` after resizing.
    pub in_plane: [usize; 2],
    pub clahe: ClaheParams,
    /// Square in-plane crop (voxels at target spacing) applied for the zonal task.
    pub zonal_crop: Option<usize>,
    pub crop_center: CropCenter,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: [0.625, 0.625, 1.5],
            in_plane: [128, 128],
            clahe: ClaheParams::default(),
            zonal_crop: Some(256),
            crop_center: CropCenter::GlandModel,
        }
    }
}

/// Every tunable of the engine, serialisable as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub task: Task,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            task: Task::Gland,
            seed: 42,
            preprocess: PreprocessConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn for_task(task: Task) -> Self {
        PipelineConfig {
            task,
            ..PipelineConfig::default()
        }
        .normalized()
    }

    /// Makes derived fields agree: class count follows the task and the
    /// classifier seed follows the pipeline seed.
    pub fn normalized(mut self) -> Self {
        self.decoder.n_classes = self.task.n_classes();
        self.decoder.main.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.encoder.spatial_multiple();
        if self.preprocess.in_plane.iter().any(|&d| d == 0 || d % m != 0) {
            return Err(Error::Config(format!(
                "in-plane size {:?} must be a positive multiple of {m}",
                self.preprocess.in_plane
            )));
        }
        if self.preprocess.target_spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("target spacing must be positive".into()));
        }
        if self.decoder.n_classes != self.task.n_classes() {
            return Err(Error::Config(format!(
                "{:?} task needs {} classes, decoder configured for {}",
                self.task,
                self.task.n_classes(),
                self.decoder.n_classes
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        Ok(cfg.normalized())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_partial_documents() {
        let cfg = PipelineConfig::for_task(Task::Zonal);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig = serde_json::from_str(r#"{"task": "zonal", "seed": 7}"#).unwrap();
        let partial = partial.normalized();
        assert_eq!(partial.decoder.n_classes, 3);
        assert_eq!(partial.decoder.main.seed, 7);
        assert_eq!(partial.encoder.hops, 4);
        partial.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_in_plane() {
        let mut cfg = PipelineConfig::default();
        cfg.preprocess.in_plane = [100, 128];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
