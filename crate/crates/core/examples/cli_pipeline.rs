//! Run every subcommand in sequence on a reduced config, the same way the
//! `anaprior` binary does, and print the metrics summary.

use anatomical_prior::cli::{run, Command, RunConfig};

fn main() -> anatomical_prior::Result<()> {
    let out = std::env::temp_dir().join("anaprior-pipeline");
    let mut cfg = RunConfig::default();
    cfg.phantom.n_cases = 60;
    cfg.n_train = 40;
    cfg.training.epochs = 10;
    cfg.evaluation.bootstrap_reps = 200;
    // Focal-loss training at this length rarely pushes lesions past 0.5.
    cfg.evaluation.protocol.threshold = 0.35;
    cfg.paths.prior = Some(cfg.prior_file().into());
    cfg.render.prediction = Some("predictions/case_0040.nii".into());
    for cmd in [
        Command::Phantom,
        Command::BuildPrior,
        Command::Train,
        Command::Eval,
        Command::DiagnosePrior,
        Command::Render,
    ] {
        run(cmd, &cfg, &out)?;
        println!("{:>15} done", cmd.name());
    }
    let metrics = std::fs::read_to_string(out.join("metrics.json")).expect("metrics written");
    let report: anatomical_prior::cli::MetricsReport = serde_json::from_str(&metrics)?;
    println!(
        "AUROC {:.3} ± {:.3}, pAUC {:.3}, outputs in {}",
        report.auroc,
        report.auroc_bootstrap.ci_half_width,
        report.pauc.normalized,
        out.display()
    );
    Ok(())
}
