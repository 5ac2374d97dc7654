//! Writes phantoms as NIfTI, loads the directory back, preprocesses every
//! case and maps the model-grid mask back to the original grid.
//!
//!     cargo run --release --example nifti_roundtrip -- [out_dir]

use std::path::PathBuf;

use pshop::pipeline::{
    ingest, invert_labels, make_phantoms, preprocess, write_case, Format, PhantomParams, PreprocessConfig,
};

fn main() -> pshop::Result<()> {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("pshop_nifti_roundtrip"), PathBuf::from);
    std::fs::create_dir_all(&dir)?;

    // an anisotropic scanner-like grid, off the model's target spacing
    let params = PhantomParams {
        dims: [96, 80, 14],
        spacing: [0.5, 0.5, 3.0],
        ..PhantomParams::default()
    };
    for case in make_phantoms(3, 5, &params)? {
        write_case(&dir, &case, Format::NiftiGz)?;
    }
    std::fs::write(dir.join("notes.txt"), "not a volume")?;

    let loaded = ingest(&dir)?;
    for r in &loaded.rejected {
        println!("rejected {}: {}", r.id, r.error);
    }
    let cfg = PreprocessConfig {
        in_plane: [64, 64],
        ..PreprocessConfig::default()
    };
    for case in &loaded.cases {
        let p = preprocess(case, &cfg, 8, None)?;
        let g = &p.geometry;
        let mask = case.mask.as_ref().expect("phantoms carry masks");
        let back = invert_labels(g, p.mask.as_ref().expect("mask follows the image"))?;
        let changed = mask.data().iter().zip(back.data()).filter(|(a, b)| a != b).count();
        println!(
            "{}: {:?} @ {:?} -> resampled {:?} -> model grid {:?}; round trip changes {changed} of {} voxels",
            case.id,
            g.original_dims,
            g.original_spacing,
            g.resampled_dims,
            g.padded_dims,
            mask.data().len()
        );
    }
    println!("files in {}", dir.display());
    Ok(())
}
