//! Parameter and FLOP accounting of a trained model, stage by stage.
//!
//!     cargo run --release --example complexity -- [model.pshop]
//!
//! Without a model path a small gland model is trained on phantoms first.

use pshop::pipeline::{
    count_params, estimate_flops, make_phantoms, train, PhantomParams, PipelineConfig, SegmentationModel, Task,
};

fn main() -> pshop::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => SegmentationModel::load(path.as_ref())?,
        None => {
            let cases = make_phantoms(3, 42, &PhantomParams::default())?;
            let mut cfg = PipelineConfig::for_task(Task::Gland);
            cfg.preprocess.in_plane = [64, 64];
            train(&cases, &cfg)?.0
        }
    };
    let p = count_params(&model);
    println!("encoder channels {:?}", model.encoder.channels());
    println!("parameters: Saab {}, trees {}, total {}", p.saab, p.trees, p.total);

    let [h, w] = model.config.preprocess.in_plane;
    for slices in [16, 32] {
        let f = estimate_flops(&model, [h, w, slices]);
        println!("FLOPs at {:?}:", f.input_dims);
        for (stage, n) in [
            ("Saab", f.saab),
            ("pooling", f.pooling),
            ("trees", f.trees),
            ("softmax", f.softmax),
            ("upsampling", f.upsampling),
            ("argmax + median", f.postprocess),
            ("total", f.total),
        ] {
            println!("  {stage:<16} {:>10.3e}", n as f64);
        }
    }
    Ok(())
}
