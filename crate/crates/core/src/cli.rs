//! Subcommands behind the `anaprior` binary, callable from library code.
//!
//! Every command takes a [`RunConfig`] and an output directory. Relative
//! paths inside the config resolve against that directory, so a config
//! replays identically wherever it is pointed. Each command writes its
//! resolved config to `<out>/<command>.config.json` before doing any work.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesions::{detect_case, write_candidates_csv, CaseDetections, DetectionProtocol};
use crate::metrics::{
    auroc, bootstrap_auroc, bootstrap_pauc, froc, pauc, patient_score, plot_froc, write_froc_csv,
    BootstrapReport, FrocCurve, Pauc, PatientScore,
};
use crate::micronet::{train, write_loss_csv, Arch, Checkpoint, MicroNet, MicroNetConfig, Tensor, TrainConfig};
use crate::phantom::{cohort_stats, generate_cohort, read_cohort, write_cohort, CohortStats, PhantomSpec};
use crate::pipeline::{network_input, predict_volume, standardize_all, training_samples, AnchoredPrior, StandardCase};
use crate::prior::{asymmetry_index, check_mu, PriorVariant};
use crate::volume::{read_volume, write_volume, Axis, Volume3D, VolumeFormat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub mu: f64,
    /// Add a principal-axes rotation when aligning the prior to a case.
    pub use_rotation: bool,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            mu: 0.01,
            use_rotation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: DetectionProtocol,
    pub patient_score: PatientScore,
    /// Flip-averaged prediction.
    pub tta: bool,
    pub bootstrap_reps: usize,
    pub bootstrap_seed: u64,
    pub fp_range: [f64; 2],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: DetectionProtocol::default(),
            patient_score: PatientScore::Max,
            tta: true,
            bootstrap_reps: 1000,
            bootstrap_seed: 7,
            fp_range: [0.1, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Case to draw; the first evaluation case when unset.
    pub case: Option<String>,
    /// Probability map to overlay; plain slice when unset.
    pub prediction: Option<PathBuf>,
    pub alpha: f64,
    /// Pixels per voxel.
    pub zoom: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            case: None,
            prediction: None,
            alpha: 0.5,
            zoom: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub cohort: PathBuf,
    /// Prior fused into training and evaluation inputs; baseline when unset.
    pub prior: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Precomputed probability maps (`<case id>.nii`) that replace the
    /// network during evaluation.
    pub predictions: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            cohort: "cohort".into(),
            prior: None,
            checkpoint: "checkpoint.json".into(),
            predictions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    /// Standard grid every case is center-cropped to.
    pub crop: [usize; 3],
    /// The first `n_train` cases train the network and build the prior; the
    /// rest are evaluated.
    pub n_train: usize,
    /// `in_channels` is set by the train command from the prior's presence.
    pub network: MicroNetConfig,
    pub training: TrainConfig,
    pub prior: PriorSettings,
    pub evaluation: EvalConfig,
    pub render: RenderConfig,
    pub paths: PathsConfig,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phantom = PhantomSpec::default();
        RunConfig {
            crop: phantom.dims,
            phantom,
            n_train: 60,
            network: MicroNetConfig::default(),
            training: TrainConfig::default(),
            prior: PriorSettings::default(),
            evaluation: EvalConfig::default(),
            render: RenderConfig::default(),
            paths: PathsConfig::default(),
            threads: None,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Replaces the phantom, training and bootstrap seeds.
    pub seed: Option<u64>,
    pub mu: Option<f64>,
    pub arch: Option<Arch>,
    pub prior: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.phantom.seed = seed;
            self.training.seed = seed;
            self.evaluation.bootstrap_seed = seed;
        }
        if let Some(mu) = o.mu {
            self.prior.mu = mu;
        }
        if let Some(arch) = o.arch {
            let flags = MicroNetConfig::for_arch(arch, self.network.in_channels);
            self.network.use_se = flags.use_se;
            self.network.use_attention_gates = flags.use_attention_gates;
            self.network.use_nested_skips = flags.use_nested_skips;
        }
        if let Some(p) = &o.prior {
            self.paths.prior = Some(p.clone());
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.network.validate()?;
        self.training.validate()?;
        check_mu(self.prior.mu)?;
        let [lo, hi] = self.evaluation.fp_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("fp_range [{lo}, {hi}] must satisfy 0 < lo < hi")));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// File name for a prior built with the configured μ.
    pub fn prior_file(&self) -> String {
        format!("prior_{}.nii", PriorVariant::from_mu(self.prior.mu).name())
    }
}

/// The subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Phantom,
    BuildPrior,
    Train,
    Eval,
    DiagnosePrior,
    Render,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::BuildPrior => "build-prior",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::DiagnosePrior => "diagnose-prior",
            Command::Render => "render",
        }
    }
}

fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Validate, echo the config, and run `cmd` on a local pool when a thread
/// count is pinned.
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(format!("{}.config.json", cmd.name())), cfg)?;
    let job = || match cmd {
        Command::Phantom => cmd_phantom(cfg, out).map(drop),
        Command::BuildPrior => cmd_build_prior(cfg, out).map(drop),
        Command::Train => cmd_train(cfg, out).map(drop),
        Command::Eval => cmd_eval(cfg, out).map(drop),
        Command::DiagnosePrior => cmd_diagnose_prior(cfg, out).map(drop),
        Command::Render => cmd_render(cfg, out).map(drop),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(job),
        None => job(),
    }
}

/// Generate the phantom cohort into `paths.cohort`.
pub fn cmd_phantom(cfg: &RunConfig, out: &Path) -> Result<CohortStats> {
    if cfg.phantom.n_cases == 0 {
        return Err(Error::EmptyCohort);
    }
    let cases = generate_cohort(&cfg.phantom)?;
    write_cohort(&resolve(out, &cfg.paths.cohort), &cfg.phantom, &cases)?;
    Ok(cohort_stats(&cases))
}

fn load_split(cfg: &RunConfig, out: &Path) -> Result<(Vec<StandardCase>, Vec<StandardCase>)> {
    let dir = resolve(out, &cfg.paths.cohort);
    let mut cases = standardize_all(&read_cohort(&dir)?, cfg.crop)?;
    if cases.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let test = cases.split_off(cfg.n_train.min(cases.len()));
    Ok((cases, test))
}

fn load_prior(cfg: &RunConfig, out: &Path) -> Result<Option<AnchoredPrior>> {
    cfg.paths
        .prior
        .as_ref()
        .map(|p| AnchoredPrior::read(&resolve(out, p)))
        .transpose()
}

/// Build the population prior from the training split, writing the prior
/// volume, its provenance sidecar and the reference gland.
pub fn cmd_build_prior(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    check_mu(cfg.prior.mu)?;
    let (train_cases, _) = load_split(cfg, out)?;
    if train_cases.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let prior = AnchoredPrior::build(&train_cases, cfg.prior.mu)?;
    let path = out.join(cfg.prior_file());
    prior.write(&path)?;
    Ok(path)
}

/// Train on the training split; writes `paths.checkpoint` and `loss.csv`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Checkpoint> {
    let prior = load_prior(cfg, out)?;
    let (train_cases, _) = load_split(cfg, out)?;
    if train_cases.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let samples = training_samples(&train_cases, prior.as_ref(), cfg.prior.use_rotation)?;
    let network = MicroNetConfig {
        in_channels: samples[0].input.channels(),
        ..cfg.network
    };
    let net = MicroNet::new(network, cfg.training.seed)?;
    let run = train(net, &samples, &cfg.training)?;
    let ckpt = Checkpoint::from_run(&run, &cfg.training);
    ckpt.write(&resolve(out, &cfg.paths.checkpoint))?;
    write_loss_csv(&out.join("loss.csv"), &run.history)?;
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub case_id: String,
    pub label: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_cases: usize,
    pub n_positive: usize,
    pub n_lesions: usize,
    pub n_candidates: usize,
    pub auroc: f64,
    pub auroc_bootstrap: BootstrapReport,
    pub pauc: Pauc,
    pub pauc_bootstrap: BootstrapReport,
    pub fp_range: [f64; 2],
    /// Sensitivity at 0.1, 0.5, 1, 2, 5 and 10 false positives per patient.
    pub sensitivity_at: Vec<[f64; 2]>,
    pub patients: Vec<PatientRow>,
}

/// Patient- and lesion-level metrics for probability maps of `cases`.
pub fn evaluate(cases: &[StandardCase], predictions: &[Volume3D], ev: &EvalConfig) -> Result<(MetricsReport, FrocCurve, Vec<CaseDetections>)> {
    if cases.len() != predictions.len() {
        return Err(Error::Shape(format!("{} cases but {} predictions", cases.len(), predictions.len())));
    }
    let detections = cases
        .par_iter()
        .zip(predictions.par_iter())
        .map(|(c, p)| detect_case(&c.id, p, &c.lesion, &ev.protocol))
        .collect::<Result<Vec<_>>>()?;
    let patients: Vec<PatientRow> = cases
        .iter()
        .zip(predictions)
        .map(|(c, p)| PatientRow {
            case_id: c.id.clone(),
            label: c.label,
            score: patient_score(p, ev.patient_score),
        })
        .collect();
    let scores: Vec<(f64, bool)> = patients.iter().map(|p| (p.score, p.label)).collect();
    let [lo, hi] = ev.fp_range;
    let curve = froc(&detections)?;
    let report = MetricsReport {
        n_cases: cases.len(),
        n_positive: scores.iter().filter(|s| s.1).count(),
        n_lesions: curve.n_lesions,
        n_candidates: detections.iter().map(|d| d.candidates.len()).sum(),
        auroc: auroc(&scores)?,
        auroc_bootstrap: bootstrap_auroc(&scores, ev.bootstrap_reps, ev.bootstrap_seed)?,
        pauc: pauc(&curve, lo, hi)?,
        pauc_bootstrap: bootstrap_pauc(&detections, lo, hi, ev.bootstrap_reps, ev.bootstrap_seed)?,
        fp_range: ev.fp_range,
        sensitivity_at: [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|&fp| [fp, curve.sensitivity_at(fp)])
            .collect(),
        patients,
    };
    Ok((report, curve, detections))
}

fn predict(net: &MicroNet, input: &Volume3D, tta: bool) -> Result<Volume3D> {
    if tta {
        return predict_volume(net, input);
    }
    net.forward(&Tensor::from_volumes(&[input])?)?.to_volume(0, *input.grid())
}

/// Evaluate the test split. Predictions come from `paths.predictions` when
/// set, otherwise from the checkpoint, and are written to `predictions/`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let (_, test) = load_split(cfg, out)?;
    if test.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let predictions: Vec<Volume3D> = match &cfg.paths.predictions {
        Some(dir) => {
            let dir = resolve(out, dir);
            test.iter()
                .map(|c| {
                    let p = dir.join(format!("{}.nii", c.id));
                    if !p.exists() {
                        return Err(Error::MissingPath(p));
                    }
                    read_volume(&p, VolumeFormat::Nifti1)
                })
                .collect::<Result<_>>()?
        }
        None => {
            let net = Checkpoint::read(&resolve(out, &cfg.paths.checkpoint))?.into_net()?;
            let prior = load_prior(cfg, out)?;
            let want = net.config().in_channels;
            let have = 3 + usize::from(prior.is_some());
            if want != have {
                return Err(Error::Config(format!(
                    "checkpoint expects {want} input channels but the run provides {have}"
                )));
            }
            let preds = test
                .iter()
                .map(|c| predict(&net, &network_input(c, prior.as_ref(), cfg.prior.use_rotation)?, cfg.evaluation.tta))
                .collect::<Result<Vec<_>>>()?;
            let dir = out.join("predictions");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (c, p) in test.iter().zip(&preds) {
                write_volume(p, dir.join(format!("{}.nii", c.id)), VolumeFormat::Nifti1)?;
            }
            preds
        }
    };
    let (report, curve, detections) = evaluate(&test, &predictions, &cfg.evaluation)?;
    let [lo, hi] = cfg.evaluation.fp_range;
    write_json(&out.join("metrics.json"), &report)?;
    write_froc_csv(&out.join("froc.csv"), &curve)?;
    plot_froc(&out.join("froc.png"), &curve, None, lo, hi)?;
    write_candidates_csv(&out.join("candidates.csv"), &detections)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryReport {
    pub prior: PathBuf,
    pub variant: PriorVariant,
    pub mu: f64,
    pub n_cases: usize,
    /// Left/right index across the sagittal (x) axis.
    pub sagittal: f64,
    pub coronal: f64,
    pub axial: f64,
}

/// Asymmetry of `paths.prior`, or of this run's built prior when unset.
pub fn cmd_diagnose_prior(cfg: &RunConfig, out: &Path) -> Result<AsymmetryReport> {
    let rel = cfg.paths.prior.clone().unwrap_or_else(|| cfg.prior_file().into());
    let prior = AnchoredPrior::read(&resolve(out, &rel))?.prior;
    let report = AsymmetryReport {
        prior: rel,
        variant: prior.variant,
        mu: prior.mu,
        n_cases: prior.n_cases,
        sagittal: asymmetry_index(&prior, Axis::X)?,
        coronal: asymmetry_index(&prior, Axis::Y)?,
        axial: asymmetry_index(&prior, Axis::Z)?,
    };
    write_json(&out.join("asymmetry.json"), &report)?;
    Ok(report)
}

/// Mid-axial slice of channel 0 in grayscale (min-max scaled over the
/// slice), blended toward red by `alpha · p` where a prediction is given.
/// `alpha` is clamped to [0, 1].
pub fn render_overlay(image: &Volume3D, prediction: Option<&Volume3D>, alpha: f64, zoom: u32) -> Result<image::RgbImage> {
    if zoom == 0 {
        return Err(Error::Parameter("zoom must be at least 1".into()));
    }
    if let Some(p) = prediction {
        if !p.grid().same_lattice(image.grid()) {
            return Err(Error::GridMismatch("prediction and image grids differ".into()));
        }
    }
    let alpha = if alpha.is_nan() { 0.0 } else { alpha.clamp(0.0, 1.0) };
    let [nx, ny, nz] = image.dims();
    let z = nz / 2;
    let slice: Vec<f64> = (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (x, y)))
        .map(|(x, y)| image.get(0, x, y, z))
        .collect();
    let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::RgbImage::new(nx as u32 * zoom, ny as u32 * zoom);
    for y in 0..ny {
        for x in 0..nx {
            let g = (slice[y * nx + x] - lo) / span * 255.0;
            let w = prediction.map_or(0.0, |p| alpha * p.get(0, x, y, z).clamp(0.0, 1.0));
            let px = image::Rgb([
                ((1.0 - w) * g + w * 255.0).round() as u8,
                ((1.0 - w) * g).round() as u8,
                ((1.0 - w) * g).round() as u8,
            ]);
            for dy in 0..zoom {
                for dx in 0..zoom {
                    img.put_pixel(x as u32 * zoom + dx, y as u32 * zoom + dy, px);
                }
            }
        }
    }
    Ok(img)
}

/// Render one standardized case to `render_<id>.png`.
pub fn cmd_render(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let (train_cases, test) = load_split(cfg, out)?;
    let case = match &cfg.render.case {
        Some(id) => train_cases
            .iter()
            .chain(&test)
            .find(|c| &c.id == id)
            .ok_or_else(|| Error::Config(format!("no case {id:?} in the cohort")))?,
        None => test.first().or(train_cases.first()).ok_or(Error::EmptyCohort)?,
    };
    let prediction = match &cfg.render.prediction {
        Some(p) => {
            let p = resolve(out, p);
            if !p.exists() {
                return Err(Error::MissingPath(p));
            }
            Some(read_volume(&p, VolumeFormat::from_path(&p)?)?)
        }
        None => None,
    };
    let img = render_overlay(&case.image, prediction.as_ref(), cfg.render.alpha, cfg.render.zoom)?;
    let path = out.join(format!("render_{}.png", case.id));
    img.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = RunConfig::from_json(r#"{"n_train": 4, "bogus": 1}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::from_json(r#"{"training": {"lr": 1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn seed_override_reaches_every_stream() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(99),
            arch: Some(Arch::Attention),
            ..Default::default()
        });
        assert_eq!((cfg.phantom.seed, cfg.training.seed, cfg.evaluation.bootstrap_seed), (99, 99, 99));
        assert!(cfg.network.use_attention_gates && !cfg.network.use_se);
        assert_eq!(cfg.network.depth, 2);
    }

    #[test]
    fn render_clamps_alpha_and_plain_slice_is_gray() {
        let g = Grid::with_spacing([4, 4, 3], [0.5, 0.5, 3.6]).unwrap();
        let img = Volume3D::from_fn(g, |x, y, _| (x + 4 * y) as f64).unwrap();
        let plain = render_overlay(&img, None, 0.5, 2).unwrap();
        assert_eq!(plain.dimensions(), (8, 8));
        assert!(plain.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
        assert_eq!(plain.get_pixel(7, 7)[0], 255);
        let ones = Volume3D::filled(g, 1, 1.0).unwrap();
        let hot = render_overlay(&img, Some(&ones), 7.0, 1).unwrap();
        assert!(hot.pixels().all(|p| p[0] == 255 && p[1] == 0));
        let zero = render_overlay(&img, Some(&ones), -1.0, 2).unwrap();
        assert_eq!(zero, plain);
    }
}
