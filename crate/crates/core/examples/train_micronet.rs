//! Train the toy U-Net on a small phantom cohort, with and without the
//! hybrid prior channel, and print the loss curve summary.

use std::time::Instant;

use anatomical_prior::micronet::{train, MicroNet, MicroNetConfig, TrainConfig};
use anatomical_prior::phantom::{generate_cohort, PhantomSpec};
use anatomical_prior::pipeline::{standardize_all, training_samples, AnchoredPrior};

fn main() -> anatomical_prior::Result<()> {
    let spec = PhantomSpec {
        n_cases: 16,
        ..Default::default()
    };
    let cases = standardize_all(&generate_cohort(&spec)?, spec.dims)?;
    let prior = AnchoredPrior::build(&cases, 0.01)?;
    let cfg = TrainConfig {
        epochs: 4,
        ..Default::default()
    };
    for (name, p) in [("baseline", None), ("hybrid", Some(&prior))] {
        let samples = training_samples(&cases, p, false)?;
        let in_channels = samples[0].input.channels();
        let net = MicroNet::new(MicroNetConfig { in_channels, ..Default::default() }, cfg.seed)?;
        let t = Instant::now();
        let run = train(net, &samples, &cfg)?;
        let first = &run.history[..4];
        let last = &run.history[run.history.len() - 4..];
        let mean = |h: &[anatomical_prior::micronet::LossRecord]| h.iter().map(|r| r.loss).sum::<f64>() / h.len() as f64;
        println!(
            "{name:>8}: {} iterations in {:.1?}, loss {:.5} -> {:.5}",
            run.iterations,
            t.elapsed(),
            mean(first),
            mean(last)
        );
    }
    Ok(())
}
