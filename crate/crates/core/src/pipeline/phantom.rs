//! Synthetic prostate-like phantoms with analytically known masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::case::Case;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Shape, Spacing, Volume4D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    /// Adds an inner "TZ" ellipsoid; labels become 0 / 1 (TZ) / 2 (PZ).
    pub zonal: bool,
    /// Noise standard deviation as a fraction of the noiseless dynamic range.
    pub noise: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            dims: [64, 64, 16],
            spacing: [0.625, 0.625, 1.5],
            zonal: false,
            noise: 0.05,
        }
    }
}

/// Ellipsoid in voxel coordinates `(h, w, c)`, rotated in-plane by `angle`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub angle: f64,
}

impl Ellipsoid {
    pub fn contains(&self, h: f64, w: f64, c: f64) -> bool {
        let (s, co) = self.angle.sin_cos();
        let dh = h - self.center[0];
        let dw = w - self.center[1];
        let u = co * dh + s * dw;
        let v = -s * dh + co * dw;
        let dc = c - self.center[2];
        (u / self.radii[0]).powi(2) + (v / self.radii[1]).powi(2) + (dc / self.radii[2]).powi(2) <= 1.0
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radii.iter().product::<f64>()
    }

    pub fn scaled(&self, f: f64) -> Ellipsoid {
        Ellipsoid {
            radii: self.radii.map(|r| r * f),
            ..*self
        }
    }
}

/// Ground-truth geometry of one phantom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub gland: Ellipsoid,
    pub tz: Option<Ellipsoid>,
}

const TZ_SCALE: f64 = 0.55;

fn phantom(id: String, rng: &mut ChaCha8Rng, p: &PhantomParams) -> Result<(Case, PhantomTruth)> {
    let [nh, nw, nc] = p.dims;
    let span = nh.min(nw) as f64;
    let jitter = |rng: &mut ChaCha8Rng, n: usize, f: f64| (n as f64 - 1.0) / 2.0 + rng.random_range(-f..=f) * n as f64;
    let gland = Ellipsoid {
        center: [jitter(rng, nh, 0.08), jitter(rng, nw, 0.08), jitter(rng, nc, 0.05)],
        radii: [
            rng.random_range(0.16..0.24) * span,
            rng.random_range(0.16..0.24) * span,
            rng.random_range(0.30..0.40) * nc as f64,
        ],
        angle: rng.random_range(0.0..std::f64::consts::PI),
    };
    let tz = p.zonal.then(|| gland.scaled(TZ_SCALE));
    let bg = rng.random_range(0.10..0.20);
    let fg = rng.random_range(0.65..0.75);
    let tz_level = rng.random_range(0.40..0.50);
    let ramp = rng.random_range(0.05..0.12);

    let mask = LabelVolume::from_fn(p.dims, |h, w, c| {
        let (h, w, c) = (h as f64, w as f64, c as f64);
        match (gland.contains(h, w, c), tz.map(|t| t.contains(h, w, c))) {
            (false, _) => 0,
            (true, None) => 1,
            (true, Some(true)) => 1,
            (true, Some(false)) => 2,
        }
    });
    let clean: Vec<f32> = (0..nh)
        .flat_map(|h| (0..nw).flat_map(move |w| (0..nc).map(move |c| (h, w, c))))
        .map(|(h, w, c)| {
            let base = match mask.get(h, w, c) {
                0 => bg,
                1 if p.zonal => tz_level,
                _ => fg,
            };
            // smooth coil-like shading across the field of view
            (base + ramp * (w as f64 / nw as f64 - 0.5) + 0.5 * ramp * (h as f64 / nh as f64)) as f32
        })
        .collect();
    let (lo, hi) = clean
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let sigma = p.noise * (hi - lo) as f64;
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let data: Vec<f32> = clean
        .into_iter()
        .map(|x| x + noise.sample(rng) as f32)
        .collect();
    let image = Volume4D::new(Shape::from_spatial(p.dims, 1), data)?.with_spacing(p.spacing)?;
    Ok((Case::new(id, image, Some(mask))?, PhantomTruth { gland, tz }))
}

/// `n` phantoms; phantom `i` depends only on `(seed, i)`.
pub fn make_phantoms_with_truth(n: usize, seed: u64, params: &PhantomParams) -> Result<Vec<(Case, PhantomTruth)>> {
    if n == 0 {
        return Err(Error::Config("phantom count must be >= 1".into()));
    }
    if params.dims.contains(&0) {
        return Err(Error::InvalidShape(format!("phantom dims {:?}", params.dims)));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            phantom(format!("phantom_{seed}_{i:03}"), &mut rng, params)
        })
        .collect()
}

pub fn make_phantoms(n: usize, seed: u64, params: &PhantomParams) -> Result<Vec<Case>> {
    Ok(make_phantoms_with_truth(n, seed, params)?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_prefix_stable() {
        let p = PhantomParams::default();
        let a = make_phantoms(3, 11, &p).unwrap();
        let b = make_phantoms(3, 11, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(make_phantoms(1, 11, &p).unwrap()[0], a[0]);
        assert_ne!(make_phantoms(1, 12, &p).unwrap()[0].image, a[0].image);
    }

    #[test]
    fn voxel_count_matches_ellipsoid_volume() {
        let p = PhantomParams {
            dims: [96, 96, 64],
            ..PhantomParams::default()
        };
        for (case, truth) in make_phantoms_with_truth(4, 3, &p).unwrap() {
            assert!(truth.gland.radii.iter().all(|&r| r >= 8.0), "{:?}", truth.gland.radii);
            let count = case.mask.unwrap().count(1) as f64;
            let rel = (count - truth.gland.volume()).abs() / truth.gland.volume();
            assert!(rel < 0.03, "relative error {rel}");
        }
    }

    #[test]
    fn tz_strictly_inside_gland() {
        let p = PhantomParams {
            zonal: true,
            ..PhantomParams::default()
        };
        for (case, truth) in make_phantoms_with_truth(3, 5, &p).unwrap() {
            let m = case.mask.unwrap();
            assert!(m.count(1) > 0 && m.count(2) > 0);
            let tz = truth.tz.unwrap();
            let [nh, nw, nc] = m.dims();
            for h in 0..nh {
                for w in 0..nw {
                    for c in 0..nc {
                        if m.get(h, w, c) == 1 {
                            assert!(truth.gland.contains(h as f64, w as f64, c as f64));
                            assert!(tz.contains(h as f64, w as f64, c as f64));
                        }
                    }
                }
            }
        }
    }
}
