//! Writes a synthetic saturation curve to stdout:
//!
//! ```text
//! cargo run -p ioncouple --example synthetic_saturation > crates/cli/data/saturation_synthetic.csv
//! ```
//!
//! Twelve log-spaced powers bracket a quarter-population power of 1081 pW in
//! front of the mirror; counts and a separate background record per point
//! are Poisson draws.

use ioncouple::satfit::{model_counts, write_csv, Background, SaturationDataset, SaturationPoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn main() -> ioncouple::Result<()> {
    let p_quarter = 1081e-12;
    let duration = 0.5;
    let asymptote = 40_000.0;
    let background_rate = 2_000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(20_24);
    let points = (0..12)
        .map(|i| {
            let p = p_quarter / 8.0 * 64f64.powf(i as f64 / 11.0);
            let mean = model_counts(p, asymptote, p_quarter, duration) + background_rate * duration;
            let bg = background_rate * duration;
            SaturationPoint {
                power: p,
                counts: Poisson::new(mean).unwrap().sample(&mut rng),
                duration,
                background: Some(Background {
                    counts: Poisson::new(bg).unwrap().sample(&mut rng),
                    duration,
                }),
            }
        })
        .collect();
    let data = SaturationDataset::new(points, 1.0)?;
    write_csv(&data, std::io::stdout().lock())
}
