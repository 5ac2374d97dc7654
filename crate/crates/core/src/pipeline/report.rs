//! DSC evaluation of a trained model on annotated cases.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::complexity::{count_params, estimate_flops, FlopCount, ParamCount};
use super::model::SegmentationModel;
use super::{predict_case, task_labels, Case};
use crate::error::Result;
use crate::metrics::foreground_dsc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub id: String,
    /// DSC of foreground classes `1..n_classes`, in order.
    pub dsc: Vec<f64>,
    pub mean_dsc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: super::Task,
    pub cases: Vec<CaseScore>,
    /// Per foreground class across cases.
    pub class_mean: Vec<f64>,
    pub class_std: Vec<f64>,
    pub mean_dsc: f64,
    pub std_dsc: f64,
    pub params: ParamCount,
    pub flops: Option<FlopCount>,
    pub total_seconds: f64,
    /// `(id, error)` of cases that could not be evaluated.
    pub failed: Vec<(String, String)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Predicts every annotated case and scores it against its mask in the
/// original geometry.
pub fn evaluate(model: &SegmentationModel, cases: &[Case], gland: Option<&SegmentationModel>) -> EvalReport {
    let start = Instant::now();
    let n_classes = model.n_classes();
    let results: Vec<std::result::Result<(CaseScore, [usize; 3]), (String, String)>> = cases
        .par_iter()
        .map(|c| {
            let t = Instant::now();
            let scored = (|| -> Result<(CaseScore, [usize; 3])> {
                let mask = c.mask.as_ref().ok_or_else(|| {
                    crate::Error::InsufficientData("case has no mask to evaluate against".into())
                })?;
                let truth = task_labels(model.task, mask)?;
                let p = predict_case(model, c, gland)?;
                let dsc = foreground_dsc(&p.labels, &truth, n_classes)?;
                let mean_dsc = dsc.iter().sum::<f64>() / dsc.len() as f64;
                Ok((
                    CaseScore {
                        id: c.id.clone(),
                        dsc,
                        mean_dsc,
                        seconds: t.elapsed().as_secs_f64(),
                    },
                    p.geometry.padded_dims,
                ))
            })();
            scored.map_err(|e| (c.id.clone(), e.to_string()))
        })
        .collect();
    let mut scores = Vec::new();
    let mut failed = Vec::new();
    let mut grid = None;
    for r in results {
        match r {
            Ok((s, dims)) => {
                grid.get_or_insert(dims);
                scores.push(s);
            }
            Err(f) => failed.push(f),
        }
    }
    let (class_mean, class_std): (Vec<f64>, Vec<f64>) = (0..n_classes - 1)
        .map(|k| mean_std(&scores.iter().map(|s| s.dsc[k]).collect::<Vec<_>>()))
        .unzip();
    let (mean_dsc, std_dsc) = mean_std(&scores.iter().map(|s| s.mean_dsc).collect::<Vec<_>>());
    EvalReport {
        task: model.task,
        cases: scores,
        class_mean,
        class_std,
        mean_dsc,
        std_dsc,
        params: count_params(model),
        flops: grid.map(|d| estimate_flops(model, d)),
        total_seconds: start.elapsed().as_secs_f64(),
        failed,
    }
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
