//! Channel-wise Saab on one phantom: anchors, energies and which children
//! survive the energy threshold.
//!
//!     cargo run --release --example saab_transform

use pshop::pipeline::{make_phantoms, preprocess, PhantomParams, PreprocessConfig};
use pshop::saab::{cw_saab_apply, cw_saab_fit, saab_fit};
use pshop::volume::{gather_neighborhoods, NeighborhoodSpec};

fn main() -> pshop::Result<()> {
    let case = make_phantoms(1, 7, &PhantomParams::default())?.remove(0);
    let cfg = PreprocessConfig {
        in_plane: [64, 64],
        ..PreprocessConfig::default()
    };
    let image = preprocess(&case, &cfg, 8, None)?.image;
    let spec = NeighborhoodSpec::cube3();

    // a single unit on the raw 3×3×3 neighborhoods
    let rows = gather_neighborhoods(&image, &spec)?;
    let unit = saab_fit(&rows, 27)?;
    println!("{} neighborhoods of {} voxels, bias {:.4}", rows.rows, unit.n_in(), unit.bias());
    println!("DC energy {:.4}", unit.energies()[0]);
    for (m, e) in unit.energies().iter().enumerate().skip(1).take(8) {
        println!("AC {m:>2} energy {e:.5}");
    }
    let gram: f64 = (0..unit.n_ac())
        .flat_map(|i| (0..unit.n_ac()).map(move |j| (i, j)))
        .map(|(i, j)| {
            let d: f64 = unit.ac_anchor(i).iter().zip(unit.ac_anchor(j)).map(|(a, b)| a * b).sum();
            (d - f64::from(i == j)).abs()
        })
        .fold(0.0, f64::max);
    println!("max deviation from orthonormality {gram:.2e}");

    // the same unit inside a hop, with children pruned by energy
    for threshold in [0.0, 0.002, 0.02] {
        let hop = cw_saab_fit(&image, &spec, threshold, &[1.0])?;
        let out = cw_saab_apply(&hop, &image)?;
        let kept: f64 = hop.kept_energies().iter().sum();
        println!(
            "threshold {threshold:<5}: {} of {} children kept ({:.2}% of energy), output {}",
            hop.out_channels(),
            hop.nodes.len(),
            100.0 * kept,
            out.shape()
        );
    }
    Ok(())
}
