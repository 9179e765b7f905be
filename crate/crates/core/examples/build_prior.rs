//! Build the three prior presets from a phantom cohort and report their
//! value ranges and left/right asymmetry.

use anatomical_prior::phantom::{generate_cohort, PhantomSpec};
use anatomical_prior::pipeline::{standardize_all, AnchoredPrior};
use anatomical_prior::prior::asymmetry_index;
use anatomical_prior::volume::Axis;

fn main() -> anatomical_prior::Result<()> {
    for left_bias in [false, true] {
        let spec = PhantomSpec {
            left_bias,
            ..Default::default()
        };
        let cases = standardize_all(&generate_cohort(&spec)?, spec.dims)?;
        println!("cohort of {} (left_bias = {left_bias})", cases.len());
        for mu in [0.0, 0.01, 0.33] {
            let p = AnchoredPrior::build(&cases, mu)?.prior;
            let (lo, hi) = p.map.min_max();
            println!(
                "  {:>10}  mu {mu:<4}  range [{lo:.3}, {hi:.3}]  mass {:>8.2}  asymmetry {:.4}",
                p.variant.name(),
                p.map.sum(),
                asymmetry_index(&p, Axis::X)?
            );
        }
    }
    Ok(())
}
