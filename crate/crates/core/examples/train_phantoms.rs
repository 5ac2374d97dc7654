//! Trains a gland model on synthetic phantoms and scores it on training and
//! held-out phantoms.
//!
//!     cargo run --release --example train_phantoms -- [n_train] [in_plane]

use std::time::Instant;

use pshop::pipeline::{evaluate, make_phantoms, train, PhantomParams, PipelineConfig, Task};

fn main() -> pshop::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(5, |a| a.parse().expect("n_train"));
    let size: usize = args.next().map_or(64, |a| a.parse().expect("in_plane"));

    let params = PhantomParams {
        dims: [size, size, 16],
        ..PhantomParams::default()
    };
    let train_cases = make_phantoms(n, 42, &params)?;
    let held_out = make_phantoms(2, 4242, &params)?;

    let mut config = PipelineConfig::for_task(Task::Gland);
    config.preprocess.in_plane = [size, size];

    let t = Instant::now();
    let (model, report) = train(&train_cases, &config)?;
    println!("trained in {:.1}s", t.elapsed().as_secs_f64());
    for hop in &report.hops {
        println!(
            "hop {}: {:?} features={} train voxels={} dsc main={:.4} refined={:?}",
            hop.hop, hop.dims, hop.feature_dim, hop.n_train, hop.dsc_main, hop.dsc_refined
        );
    }

    let on_train = evaluate(&model, &train_cases, None);
    let on_held = evaluate(&model, &held_out, None);
    println!("training DSC {:.4} ± {:.4}", on_train.mean_dsc, on_train.std_dsc);
    println!("held-out DSC {:.4} ± {:.4}", on_held.mean_dsc, on_held.std_dsc);
    println!("parameters {}", on_train.params.total);
    if let Some(f) = on_train.flops {
        println!("FLOPs per {:?} input {:.3e}", f.input_dims, f.total as f64);
    }
    Ok(())
}
