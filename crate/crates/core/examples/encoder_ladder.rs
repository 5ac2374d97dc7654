//! Fits the four-hop encoder on phantoms and prints the feature ladder and
//! the energy tree per hop.
//!
//!     cargo run --release --example encoder_ladder -- [slices]

use pshop::encoder::{encoder_fit_with_features, EncoderConfig};
use pshop::pipeline::{make_phantoms, preprocess, PhantomParams, PreprocessConfig};

fn main() -> pshop::Result<()> {
    let slices: usize = std::env::args().nth(1).map_or(32, |a| a.parse().expect("slices"));
    let params = PhantomParams {
        dims: [128, 128, slices],
        ..PhantomParams::default()
    };
    let cfg = PreprocessConfig::default();
    let images = make_phantoms(2, 11, &params)?
        .iter()
        .map(|c| preprocess(c, &cfg, 8, None).map(|p| p.image))
        .collect::<pshop::Result<Vec<_>>>()?;

    let config = EncoderConfig::default();
    let (model, features) = encoder_fit_with_features(&images, &config)?;
    for (hop, feat) in model.hops.iter().zip(&features[0]) {
        let kept = hop.kept_energies();
        let dc = hop.kept().iter().filter(|(_, comp)| *comp == 0).count();
        println!(
            "hop {}: {} -> {} channels ({} DC), energy kept {:.4}, largest child {:.4}, feature map {}",
            hop.hop,
            hop.in_channels(),
            hop.out_channels(),
            dc,
            kept.iter().sum::<f64>(),
            kept.iter().copied().fold(0.0, f64::max),
            feat.shape()
        );
    }
    Ok(())
}
