//! Coarse-to-fine decoding on phantoms: DSC of every hop before and after
//! the neighborhood refinements, and the effect of the median filter.
//!
//!     cargo run --release --example decoder_trace

use pshop::decoder::{argmax_labels, downsample_labels};
use pshop::metrics::mean_foreground_dsc;
use pshop::pipeline::{make_phantoms, predict_case_traced, train, PhantomParams, PipelineConfig, Task};
use pshop::volume::LabelVolume;

fn main() -> pshop::Result<()> {
    let params = PhantomParams::default();
    let train_cases = make_phantoms(4, 42, &params)?;
    let probe = make_phantoms(1, 99, &params)?.remove(0);
    let mut config = PipelineConfig::for_task(Task::Gland);
    config.preprocess.in_plane = [64, 64];
    config.decoder.main.n_rounds = 100;

    let (model, report) = train(&train_cases, &config)?;
    for h in &report.hops {
        println!(
            "train hop {}: {} selected voxels, {} used, DSC {:.4} then {:?}",
            h.hop, h.n_selected, h.n_train, h.dsc_main, h.dsc_refined
        );
    }

    let traced = predict_case_traced(&model, &probe, None)?;
    let truth = traced.prepared.mask.as_ref().expect("phantoms carry masks");
    let score = |labels: &LabelVolume| -> pshop::Result<f64> {
        // coarse hops are scored against the downsampled labels they were trained on
        let coarse = downsample_labels(truth, labels.dims(), 2, 0.0)?.labels;
        mean_foreground_dsc(labels, &coarse, 2)
    };
    for hop in &traced.trace.hops {
        let refined: Vec<String> = hop
            .refined
            .iter()
            .map(|r| score(&argmax_labels(r)).map(|d| format!("{d:.4}")))
            .collect::<pshop::Result<_>>()?;
        println!(
            "held-out hop {} {:?}: main {:.4}, refined [{}]",
            hop.hop,
            hop.main.shape().spatial(),
            score(&argmax_labels(&hop.main))?,
            refined.join(", ")
        );
    }
    println!(
        "before median {:.4}, after median {:.4}",
        score(&traced.trace.unfiltered)?,
        score(&traced.trace.output.labels)?
    );
    Ok(())
}
