//! Two-stage zonal segmentation: a gland model finds the prostate, a
//! three-class model segments the transition and peripheral zones inside
//! a crop centred on the gland prediction.
//!
//!     cargo run --release --example zonal

use pshop::pipeline::{evaluate, make_phantoms, train, PhantomParams, PipelineConfig, Task};

fn main() -> pshop::Result<()> {
    let params = PhantomParams {
        dims: [96, 96, 16],
        zonal: true,
        ..PhantomParams::default()
    };
    let train_cases = make_phantoms(4, 21, &params)?;
    let held_out = make_phantoms(2, 2121, &params)?;

    let mut gland_cfg = PipelineConfig::for_task(Task::Gland);
    gland_cfg.preprocess.in_plane = [64, 64];
    gland_cfg.decoder.main.n_rounds = 100;
    let (gland, _) = train(&train_cases, &gland_cfg)?;

    // the crop is 64 voxels at the model spacing; training crops follow the
    // ground truth, inference crops follow the gland model
    let mut zonal_cfg = PipelineConfig::for_task(Task::Zonal);
    zonal_cfg.preprocess.in_plane = [64, 64];
    zonal_cfg.preprocess.zonal_crop = Some(64);
    zonal_cfg.decoder.main.n_rounds = 100;
    let (zonal, _) = train(&train_cases, &zonal_cfg)?;

    let g = evaluate(&gland, &held_out, None);
    let z = evaluate(&zonal, &held_out, Some(&gland));
    println!("gland DSC {:.4}", g.mean_dsc);
    println!(
        "zonal DSC: TZ {:.4}, PZ {:.4}, mean {:.4}",
        z.class_mean[0], z.class_mean[1], z.mean_dsc
    );
    Ok(())
}
