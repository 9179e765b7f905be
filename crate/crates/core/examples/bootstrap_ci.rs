//! Patient-level AUROC with a bootstrap interval, and how the interval
//! narrows as the cohort grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use anatomical_prior::metrics::{auroc, bootstrap_auroc};

fn main() -> anatomical_prior::Result<()> {
    for n in [25, 50, 100, 200, 400] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let scores: Vec<(f64, bool)> = (0..n)
            .map(|i| {
                let pos = i % 2 == 0;
                let z: f64 = rng.sample(StandardNormal);
                (z + if pos { 1.2 } else { 0.0 }, pos)
            })
            .collect();
        let r = bootstrap_auroc(&scores, 1000, 7)?;
        println!(
            "n = {n:>3}  AUROC {:.3}  bootstrap {:.3} ± {:.3}  (redraws {})",
            auroc(&scores)?,
            r.mean,
            r.ci_half_width,
            r.redraws
        );
    }
    Ok(())
}
