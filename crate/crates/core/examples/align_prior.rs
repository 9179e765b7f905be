//! Align the hybrid prior to individual cases and stack it as a fourth
//! input channel.

use anatomical_prior::phantom::{generate_cohort, PhantomSpec};
use anatomical_prior::pipeline::{network_input, standardize_all, AnchoredPrior};

fn main() -> anatomical_prior::Result<()> {
    let spec = PhantomSpec {
        n_cases: 30,
        ..Default::default()
    };
    let cases = standardize_all(&generate_cohort(&spec)?, spec.dims)?;
    let (train, test) = cases.split_at(24);
    let prior = AnchoredPrior::build(train, 0.01)?;
    println!("reference gland: {} voxels", prior.reference.count());
    for case in test {
        let gland = case.gland();
        let map = prior.map_to(&gland, false)?;
        let aligned = prior.aligned(&gland, false)?;
        let inside: f64 = gland.indices().map(|i| aligned.data()[i]).sum();
        let fused = network_input(case, Some(&prior), false)?;
        println!(
            "{}  t = [{:+.2}, {:+.2}, {:+.2}] mm  s = [{:.3}, {:.3}, {:.3}]  prior mass in gland {:.1}%  channels {}",
            case.id,
            map.translation[0],
            map.translation[1],
            map.translation[2],
            map.scale[0],
            map.scale[1],
            map.scale[2],
            100.0 * inside / aligned.sum(),
            fused.channels()
        );
    }
    Ok(())
}
