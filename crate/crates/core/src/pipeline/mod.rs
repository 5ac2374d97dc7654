//! Dataset handling, preprocessing, training and inference orchestration,
//! evaluation, persistence and cost accounting.

pub mod case;
pub mod complexity;
pub mod config;
pub mod model;
pub mod nifti;
pub mod overlay;
pub mod phantom;
pub mod preprocess;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;

pub use case::{ingest, write_case, Case, Format, Ingested, Rejected};
pub use complexity::{count_params, estimate_flops, FlopCount, ParamCount};
pub use config::{CropCenter, PipelineConfig, PreprocessConfig, Task};
pub use model::{SegmentationModel, FORMAT_VERSION};
pub use phantom::{make_phantoms, make_phantoms_with_truth, PhantomParams, PhantomTruth};
pub use preprocess::{foreground_centroid, invert_labels, preprocess, Crop, Geometry, Prepared};
pub use report::{evaluate, CaseScore, EvalReport};

use crate::decoder::{decoder_fit, decoder_predict_traced, DecoderTrace, HopFitReport};
use crate::encoder::{encoder_apply, encoder_fit_with_features};
use crate::error::{Error, Result};
use crate::metrics::mean_foreground_dsc;
use crate::volume::{LabelVolume, Volume4D};

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Task-specific view of a ground-truth mask.
pub fn task_labels(task: Task, mask: &LabelVolume) -> Result<LabelVolume> {
    match task {
        Task::Gland => Ok(mask.map(|l| u8::from(l > 0))),
        Task::Zonal => {
            if mask.max_label() > 2 {
                return Err(Error::DegenerateLabels(format!(
                    "zonal masks use labels 0..=2, found {}",
                    mask.max_label()
                )));
            }
            Ok(mask.clone())
        }
    }
}

fn image_center(case: &Case) -> [f64; 2] {
    let [h, w, _] = case.dims();
    [(h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0]
}

fn truth_center(case: &Case) -> Option<[f64; 2]> {
    case.mask.as_ref().and_then(foreground_centroid).map(|c| [c[0], c[1]])
}

/// Crop window for one case: none for the gland task, otherwise centred on
/// the gland model's prediction or the ground truth.
fn crop_for(case: &Case, config: &PipelineConfig, gland: Option<&SegmentationModel>) -> Result<Option<Crop>> {
    let size = match (config.task, config.preprocess.zonal_crop) {
        (Task::Zonal, Some(size)) => size,
        _ => return Ok(None),
    };
    let predicted = match (config.preprocess.crop_center, gland) {
        (CropCenter::GlandModel, Some(g)) => {
            let p = predict_case(g, case, None)?;
            foreground_centroid(&p.labels).map(|c| [c[0], c[1]])
        }
        _ => None,
    };
    let center = predicted.or_else(|| truth_center(case)).unwrap_or_else(|| image_center(case));
    Ok(Some(Crop { size, center }))
}

fn prepare(case: &Case, config: &PipelineConfig, gland: Option<&SegmentationModel>) -> Result<Prepared> {
    let crop = crop_for(case, config, gland)?;
    let mut p = preprocess(case, &config.preprocess, config.encoder.spatial_multiple(), crop)?;
    p.mask = p.mask.map(|m| task_labels(config.task, &m)).transpose()?;
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub hops: Vec<HopFitReport>,
    /// Mean foreground DSC of the final training predictions on the model grid.
    pub train_dsc: Vec<(String, f64)>,
    pub preprocess_secs: f64,
    pub encoder_secs: f64,
    pub decoder_secs: f64,
}

/// Fits encoder and decoder on fully annotated cases.
pub fn train(cases: &[Case], config: &PipelineConfig) -> Result<(SegmentationModel, TrainReport)> {
    let config = config.clone().normalized();
    config.validate()?;
    if cases.is_empty() {
        return Err(Error::InsufficientData("no training cases".into()));
    }
    if let Some(c) = cases.iter().find(|c| c.mask.is_none()) {
        return Err(Error::InsufficientData("training case has no mask".into()).in_case(&c.id));
    }
    let t0 = Instant::now();
    let prepared: Vec<Prepared> = cases
        .par_iter()
        .map(|c| prepare(c, &config, None).map_err(|e| e.in_case(&c.id)))
        .collect::<Result<_>>()?;
    let t1 = Instant::now();
    let images: Vec<Volume4D> = prepared.iter().map(|p| p.image.clone()).collect();
    let (encoder, features) = encoder_fit_with_features(&images, &config.encoder)?;
    drop(images);
    let t2 = Instant::now();
    let masks: Vec<LabelVolume> = prepared
        .iter()
        .map(|p| p.mask.clone().expect("checked above"))
        .collect();
    let fit = decoder_fit(&features, &masks, &config.decoder)?;
    let t3 = Instant::now();
    let train_dsc = prepared
        .iter()
        .zip(&fit.outputs)
        .map(|(p, o)| {
            let mask = p.mask.as_ref().expect("checked above");
            Ok((p.id.clone(), mean_foreground_dsc(&o.labels, mask, config.task.n_classes())?))
        })
        .collect::<Result<_>>()?;
    let model = SegmentationModel {
        version: FORMAT_VERSION,
        task: config.task,
        seed: config.seed,
        config: config.clone(),
        encoder,
        decoder: fit.model,
    };
    let report = TrainReport {
        hops: fit.report,
        train_dsc,
        preprocess_secs: (t1 - t0).as_secs_f64(),
        encoder_secs: (t2 - t1).as_secs_f64(),
        decoder_secs: (t3 - t2).as_secs_f64(),
    };
    Ok((model, report))
}

/// Prediction for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    /// Labels on the case's original voxel grid.
    pub labels: LabelVolume,
    /// Soft decisions on the model-input grid.
    pub soft: Volume4D,
    pub geometry: Geometry,
}

/// Prediction with every intermediate decoder stage retained.
#[derive(Clone, Debug)]
pub struct TracedPrediction {
    pub prepared: Prepared,
    pub trace: DecoderTrace,
    pub prediction: Prediction,
}

pub fn predict_case_traced(
    model: &SegmentationModel,
    case: &Case,
    gland: Option<&SegmentationModel>,
) -> Result<TracedPrediction> {
    let run = || -> Result<TracedPrediction> {
        let prepared = prepare(case, &model.config, gland)?;
        let features = encoder_apply(&model.encoder, &prepared.image)?;
        let trace = decoder_predict_traced(&model.decoder, &features)?;
        let labels = invert_labels(&prepared.geometry, &trace.output.labels)?;
        let prediction = Prediction {
            id: case.id.clone(),
            labels,
            soft: trace.output.soft.clone(),
            geometry: prepared.geometry.clone(),
        };
        Ok(TracedPrediction {
            prepared,
            trace,
            prediction,
        })
    };
    run().map_err(|e| e.in_case(&case.id))
}

pub fn predict_case(model: &SegmentationModel, case: &Case, gland: Option<&SegmentationModel>) -> Result<Prediction> {
    Ok(predict_case_traced(model, case, gland)?.prediction)
}

/// Predicts every case independently; one failing case does not affect the others.
pub fn predict(model: &SegmentationModel, cases: &[Case], gland: Option<&SegmentationModel>) -> Vec<Result<Prediction>> {
    cases.par_iter().map(|c| predict_case(model, c, gland)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::BoostParams;

    fn tiny_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.preprocess.in_plane = [32, 32];
        cfg.encoder.hops = 3;
        cfg.decoder.main = BoostParams {
            n_rounds: 15,
            max_depth: 4,
            ..BoostParams::default()
        };
        cfg.decoder.refine_rounds = 8;
        cfg.normalized()
    }

    fn phantoms(n: usize, seed: u64) -> Vec<Case> {
        let p = PhantomParams {
            dims: [32, 32, 16],
            ..PhantomParams::default()
        };
        make_phantoms(n, seed, &p).unwrap()
    }

    #[test]
    fn train_predict_roundtrip() {
        let cases = phantoms(2, 1);
        let (model, report) = train(&cases, &tiny_config()).unwrap();
        assert_eq!(report.hops.len(), 3);
        let bytes = model.to_bytes().unwrap();
        let loaded = SegmentationModel::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
        let a = predict_case(&model, &cases[0], None).unwrap();
        let b = predict_case(&loaded, &cases[0], None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.dims(), cases[0].dims());
    }

    #[test]
    fn unmasked_training_case_is_rejected() {
        let mut cases = phantoms(1, 2);
        cases[0].mask = None;
        let err = train(&cases, &tiny_config()).unwrap_err();
        assert!(matches!(err, Error::Case { .. }));
    }

    #[test]
    fn version_and_magic_checked() {
        let cases = phantoms(1, 3);
        let (model, _) = train(&cases, &tiny_config()).unwrap();
        let mut bytes = model.to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(SegmentationModel::from_bytes(&bytes), Err(Error::UnsupportedVersion(9))));
        bytes[0] = b'X';
        assert!(matches!(SegmentationModel::from_bytes(&bytes), Err(Error::Format { .. })));
    }
}
