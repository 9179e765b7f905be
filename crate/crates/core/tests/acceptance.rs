//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so every line is printed; exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command as Proc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use anatomical_prior::align::{apply_rigid, estimate_rigid};
use anatomical_prior::lesions::{CaseDetections, LesionCandidate, MatchedCandidate};
use anatomical_prior::metrics::{auroc, bootstrap_auroc, bootstrap_ci, froc, pauc, patient_score, FrocCurve, FrocPoint, PatientScore};
use anatomical_prior::micronet::{
    focal_loss, loss_and_gradients, predict_tta, train, Arch, MicroNet, MicroNetConfig, Tensor, TrainConfig,
};
use anatomical_prior::phantom::{generate_cohort, PhantomSpec};
use anatomical_prior::pipeline::{network_input, predict_volume, standardize_all, training_samples, AnchoredPrior};
use anatomical_prior::prior::{aggregate_prior, asymmetry_index, prevalence_map, PopulationPrior, PriorVariant};
use anatomical_prior::volume::{Axis, BinaryMask, Grid, Volume3D};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let r = f();
    let dt = t.elapsed();
    let over = dt > budget;
    match r {
        Ok(d) if over => Err(format!("{d}; took {dt:.1?}, budget {budget:?}")),
        Ok(d) => Ok(format!("{d}; {dt:.1?}")),
        Err(d) => Err(format!("{d}; {dt:.1?}")),
    }
}

fn standard_cohort(spec: &PhantomSpec) -> Vec<anatomical_prior::pipeline::StandardCase> {
    standardize_all(&generate_cohort(spec).expect("cohort"), spec.dims).expect("standardize")
}

fn c1_prior_correctness() -> Outcome {
    let spec = PhantomSpec {
        n_cases: 50,
        ..Default::default()
    };
    let cases = standard_cohort(&spec);
    let mut worst: f64 = 0.0;
    for mu in [0.0, 0.01, 0.33] {
        let mut maps = Vec::new();
        for c in &cases {
            let m = prevalence_map(&c.tz, &c.pz, &c.lesion, mu, c.id.clone()).map_err(|e| e.to_string())?;
            let g = *c.tz.grid();
            for z in 0..g.dims[2] {
                for y in 0..g.dims[1] {
                    for x in 0..g.dims[0] {
                        let expect = if c.lesion.at(x, y, z) {
                            1.0
                        } else if c.pz.at(x, y, z) {
                            3.0 * mu
                        } else if c.tz.at(x, y, z) {
                            mu
                        } else {
                            0.0
                        };
                        if m.map.get(0, x, y, z) != expect {
                            return Err(format!("{} voxel ({x},{y},{z}) at mu {mu}", c.id));
                        }
                    }
                }
            }
            maps.push(m);
        }
        let p = aggregate_prior(&maps).map_err(|e| e.to_string())?;
        // Streaming compensated sum over cases in reverse order.
        for i in 0..p.map.data().len() {
            let (mut s, mut comp) = (0.0f64, 0.0f64);
            for m in maps.iter().rev() {
                let y = m.map.data()[i] - comp;
                let t = s + y;
                comp = (t - s) - y;
                s = t;
            }
            worst = worst.max((s / maps.len() as f64 - p.map.data()[i]).abs());
        }
    }
    check(worst <= 1e-12, format!("maps exact for 3 mu x 50 cases, max |P - oracle| = {worst:.2e}"))
}

fn c2_mu_zero_reduction() -> Outcome {
    let spec = PhantomSpec {
        n_cases: 50,
        seed: 11,
        ..Default::default()
    };
    let cases = standard_cohort(&spec);
    let maps: Vec<_> = cases
        .iter()
        .map(|c| prevalence_map(&c.tz, &c.pz, &c.lesion, 0.0, c.id.clone()).unwrap())
        .collect();
    let p = aggregate_prior(&maps).map_err(|e| e.to_string())?;
    let n = cases.len() as f64;
    let mismatches = (0..p.map.data().len())
        .filter(|&i| {
            let count = cases.iter().filter(|c| c.lesion.contains(i)).count() as f64;
            (count / n).to_bits() != p.map.data()[i].to_bits()
        })
        .count();
    check(
        mismatches == 0 && p.variant == PriorVariant::Prevalence,
        format!("{mismatches} voxels differ from mean lesion mask"),
    )
}

fn randomize(net: &mut MicroNet, rng: &mut ChaCha8Rng, scale: f64) {
    for p in net.params_mut().iter_mut() {
        for v in &mut p.data {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn random_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Max relative error of analytic vs central-difference gradients over all
/// parameters. Relative error uses max(|a|, |n|, 1e-8) as denominator.
fn grad_rel_error(config: MicroNetConfig, dims: [usize; 3], seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MicroNet::new(config, seed).unwrap();
    randomize(&mut net, &mut rng, 0.4);
    let x = random_tensor([1, config.in_channels, dims[0], dims[1], dims[2]], &mut rng);
    let n = dims.iter().product::<usize>();
    let t = Tensor::new([1, 1, dims[0], dims[1], dims[2]], (0..n).map(|_| f64::from(rng.random::<f64>() < 0.2)).collect()).unwrap();
    let (_, grads) = loss_and_gradients(&mut net, &x, &t, 0.75, 2.0).unwrap();
    let loss = |net: &MicroNet| focal_loss(&net.forward(&x).unwrap(), &t, 0.75, 2.0).unwrap().loss;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for pi in 0..net.params().len() {
        let len = net.params().iter().nth(pi).unwrap().data.len();
        for k in 0..len {
            let orig = net.params().iter().nth(pi).unwrap().data[k];
            net.params_mut().iter_mut().nth(pi).unwrap().data[k] = orig + h;
            let up = loss(&net);
            net.params_mut().iter_mut().nth(pi).unwrap().data[k] = orig - h;
            let down = loss(&net);
            net.params_mut().iter_mut().nth(pi).unwrap().data[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.0[pi][k];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
            count += 1;
        }
    }
    (worst, count)
}

fn c3_gradient_fidelity() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for arch in Arch::ALL {
        let cfg = MicroNetConfig {
            depth: 1,
            base_width: 2,
            ..MicroNetConfig::for_arch(arch, 3)
        };
        let (err, n) = grad_rel_error(cfg, [8, 8, 8], 5);
        ok &= err < 1e-3;
        parts.push(format!("{} {err:.1e} ({n} params)", arch.name()));
    }
    check(ok, format!("max rel error: {}", parts.join(", ")))
}

fn c4_focal_values() -> Outcome {
    let one = |p: f64, y: f64, a: f64, g: f64| {
        let pt = Tensor::new([1, 1, 1, 1, 1], vec![p]).unwrap();
        let yt = Tensor::new([1, 1, 1, 1, 1], vec![y]).unwrap();
        focal_loss(&pt, &yt, a, g).unwrap().loss
    };
    let v = one(0.5, 1.0, 0.75, 2.0);
    let literal_ok = (v - 0.129953).abs() <= 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 4 * 4 * 2;
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<bool>())).collect();
    let bce = p
        .iter()
        .zip(&y)
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / n as f64;
    let fl = focal_loss(
        &Tensor::new([1, 1, 4, 4, 2], p).unwrap(),
        &Tensor::new([1, 1, 4, 4, 2], y).unwrap(),
        0.5,
        0.0,
    )
    .unwrap()
    .loss;
    let bce_err = (fl - 0.5 * bce).abs();
    check(
        literal_ok && bce_err <= 1e-10,
        format!(
            "FL(0.5; 1, 0.75, 2) = {v:.7} vs 0.129953 ± 1e-6 (0.75·0.25·ln2 = {:.7}); |FL_γ=0 − 0.5·BCE| = {bce_err:.1e}",
            0.1875 * 2f64.ln()
        ),
    )
}

fn brute_auroc(s: &[(f64, bool)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for a in s.iter().filter(|x| x.1) {
        for b in s.iter().filter(|x| !x.1) {
            den += 1.0;
            num += if a.0 > b.0 {
                1.0
            } else if a.0 == b.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn matched(score: f64, gt: Option<usize>) -> MatchedCandidate {
    MatchedCandidate {
        candidate: LesionCandidate {
            voxels: vec![0],
            score,
            peak: 0,
            centroid: [0.0; 3],
            volume_mm3: 10.0,
        },
        tp: gt.is_some(),
        gt,
    }
}

fn brute_froc(cases: &[CaseDetections]) -> Vec<(f64, f64, f64)> {
    let total: usize = cases.iter().map(|c| c.n_gt).sum();
    let thresholds: BTreeSet<u64> = cases
        .iter()
        .flat_map(|c| c.candidates.iter().map(|m| m.candidate.score.to_bits()))
        .collect();
    let mut out: Vec<(f64, f64, f64)> = thresholds
        .into_iter()
        .map(f64::from_bits)
        .map(|t| {
            let mut hit = BTreeSet::new();
            let mut fp = 0;
            for (ci, c) in cases.iter().enumerate() {
                for m in c.candidates.iter().filter(|m| m.candidate.score >= t) {
                    match m.gt {
                        Some(g) if m.tp => {
                            hit.insert((ci, g));
                        }
                        _ => fp += 1,
                    }
                }
            }
            (t, fp as f64 / cases.len() as f64, hit.len() as f64 / total as f64)
        })
        .collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    out
}

fn c5_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut auroc_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let mut s: Vec<(f64, bool)> = (0..n).map(|_| (rng.random_range(0..8) as f64 / 8.0, rng.random::<bool>())).collect();
        s[0].1 = true;
        s[1].1 = false;
        auroc_err = auroc_err.max((auroc(&s).map_err(|e| e.to_string())? - brute_auroc(&s)).abs());
    }
    let mut froc_bad = 0;
    for _ in 0..20 {
        let n_pat = rng.random_range(1..5);
        let mut cases: Vec<CaseDetections> = (0..n_pat)
            .map(|i| {
                let n_gt = rng.random_range(0..4);
                let n_c = rng.random_range(0..6);
                let candidates = (0..n_c)
                    .map(|_| {
                        let score = rng.random_range(1..10) as f64 / 10.0;
                        let gt = (n_gt > 0 && rng.random::<bool>()).then(|| rng.random_range(0..n_gt));
                        matched(score, gt)
                    })
                    .collect();
                CaseDetections {
                    case_id: format!("p{i}"),
                    n_gt,
                    candidates,
                }
            })
            .collect();
        if cases.iter().all(|c| c.n_gt == 0) {
            cases[0].n_gt = 1;
        }
        let curve = froc(&cases).map_err(|e| e.to_string())?;
        let got: Vec<(f64, f64, f64)> = curve.points.iter().map(|p| (p.threshold, p.fp_per_patient, p.sensitivity)).collect();
        if got != brute_froc(&cases) {
            froc_bad += 1;
        }
    }
    let step = FrocCurve {
        points: vec![
            FrocPoint {
                threshold: 0.9,
                fp_per_patient: 0.05,
                sensitivity: 0.5,
            },
            FrocPoint {
                threshold: 0.4,
                fp_per_patient: 1.0,
                sensitivity: 1.0,
            },
        ],
        n_patients: 2,
        n_lesions: 2,
    };
    let step_pauc = pauc(&step, 0.1, 10.0).map_err(|e| e.to_string())?.normalized;
    check(
        auroc_err <= 1e-12 && froc_bad == 0 && step_pauc == 0.75,
        format!("AUROC max err {auroc_err:.1e} over 100 sets, FROC mismatches {froc_bad}/20, step pAUC {step_pauc}"),
    )
}

fn synthetic_scores(n: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pos = i % 2 == 0;
            let z: f64 = rng.sample(StandardNormal);
            (z + if pos { 1.0 } else { 0.0 }, pos)
        })
        .collect()
}

fn c6_bootstrap() -> Outcome {
    let s = synthetic_scores(60, 1);
    let a = bootstrap_auroc(&s, 1000, 21).map_err(|e| e.to_string())?;
    let b = bootstrap_auroc(&s, 1000, 21).map_err(|e| e.to_string())?;
    let same = a == b && a.mean.to_bits() == b.mean.to_bits() && a.ci_half_width.to_bits() == b.ci_half_width.to_bits();
    let constant = bootstrap_ci("const", 40, |_| Ok(0.42), 1000, 3).map_err(|e| e.to_string())?;
    let h25 = bootstrap_auroc(&synthetic_scores(25, 2), 1000, 7).map_err(|e| e.to_string())?.ci_half_width;
    let h100 = bootstrap_auroc(&synthetic_scores(100, 2), 1000, 7).map_err(|e| e.to_string())?.ci_half_width;
    // 1/sqrt(n) predicts h25 / h100 = 2; accept within a factor 2 of that.
    let ratio = h25 / h100;
    check(
        same && constant.ci_half_width == 0.0 && (1.0..=4.0).contains(&ratio),
        format!(
            "rerun bit-equal {same}, constant half width {}, h25/h100 = {ratio:.3}",
            constant.ci_half_width
        ),
    )
}

fn ellipsoid(grid: Grid, c: [f64; 3], r: [f64; 3]) -> BinaryMask {
    BinaryMask::from_fn(grid, |x, y, z| {
        let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
        (0..3).map(|a| (d[a] / r[a]).powi(2)).sum::<f64>() <= 1.0
    })
    .unwrap()
}

fn bbox_extent(m: &BinaryMask) -> [f64; 3] {
    let g = m.grid();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for z in 0..g.dims[2] {
        for y in 0..g.dims[1] {
            for x in 0..g.dims[0] {
                if m.at(x, y, z) {
                    for (a, v) in [x, y, z].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
            }
        }
    }
    [0, 1, 2].map(|a| (hi[a] - lo[a]) as f64 * g.spacing[a])
}

fn c7_alignment_closure() -> Outcome {
    let grid = Grid::with_spacing([40, 40, 12], [0.5, 0.5, 3.6]).unwrap();
    let a = ellipsoid(grid, [17.0, 18.0, 5.0], [8.0, 6.0, 3.0]);
    let identity = estimate_rigid(&a, &a, false).map_err(|e| e.to_string())?.is_identity();

    let shifted = ellipsoid(grid, [21.0, 16.0, 5.0], [8.0, 6.0, 3.0]);
    let map = estimate_rigid(&a, &shifted, false).map_err(|e| e.to_string())?;
    let trans_ok = map.translation == [2.0, -1.0, 0.0] && map.scale == [1.0; 3];
    let prior = PopulationPrior {
        map: Volume3D::from_fn(grid, |x, y, z| ((x * 7 + y * 3 + z * 11) % 17) as f64 / 16.0).unwrap(),
        mu: 0.01,
        n_cases: 1,
        variant: PriorVariant::Hybrid,
        case_ids: vec!["fixture".into()],
    };
    let moved = apply_rigid(&prior, &map, &grid).map_err(|e| e.to_string())?;
    let mut interior_bad = 0;
    for z in 0..12 {
        for y in 0..38 {
            for x in 0..36 {
                if moved.get(0, x + 4, y, z) != prior.map.get(0, x, y + 2, z) {
                    interior_bad += 1;
                }
            }
        }
    }

    let r = [8.0, 6.0, 2.0];
    let base = ellipsoid(grid, [19.5, 19.5, 5.5], r);
    let big = ellipsoid(grid, [19.5, 19.5, 5.5], r.map(|v| 1.2 * v));
    let s = estimate_rigid(&base, &big, false).map_err(|e| e.to_string())?.scale;
    let (eb, eg) = (bbox_extent(&base), bbox_extent(&big));
    let mut scale_ok = true;
    for ax in 0..3 {
        let oracle = eg[ax] / eb[ax];
        // Each center-to-center extent is off by at most one voxel.
        let tol = (1.0 + 1.2) * grid.spacing[ax] / eb[ax];
        scale_ok &= (s[ax] - oracle).abs() < 1e-12 && (s[ax] - 1.2).abs() <= tol;
    }
    check(
        identity && trans_ok && interior_bad == 0 && scale_ok,
        format!(
            "identity {identity}, translation {:?} mm, interior mismatches {interior_bad}, scale {:.3?}",
            map.translation, s
        ),
    )
}

fn c8_asymmetry() -> Outcome {
    let index = |left_bias: bool| {
        let spec = PhantomSpec {
            n_cases: 100,
            left_bias,
            ..Default::default()
        };
        let p = AnchoredPrior::build(&standard_cohort(&spec), 0.01).unwrap();
        asymmetry_index(&p.prior, Axis::X).unwrap()
    };
    let (sym, left) = (index(false), index(true));
    check(sym < 0.05 && left > 0.3, format!("hybrid prior: symmetric {sym:.4}, left-biased {left:.4}"))
}

fn c9_tta_symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for arch in Arch::ALL {
        let mut net = MicroNet::new(MicroNetConfig::for_arch(arch, 4), 3).unwrap();
        randomize(&mut net, &mut rng, 0.3);
        let raw = random_tensor([1, 4, 16, 16, 4], &mut rng);
        let sym = Tensor::new(
            raw.shape(),
            raw.data().iter().zip(raw.flip_x().data()).map(|(a, b)| 0.5 * (a + b)).collect(),
        )
        .unwrap();
        let y = predict_tta(&net, &sym).unwrap();
        let f = y.flip_x();
        worst = worst.max(y.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst <= 1e-6, format!("max |p − flip p| = {worst:.1e} over 4 architectures"))
}

fn c10_end_to_end() -> Outcome {
    let spec = PhantomSpec::default();
    let cases = standard_cohort(&spec);
    let (train_cases, test_cases) = cases.split_at(60);
    let prior = AnchoredPrior::build(train_cases, 0.01).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 10,
        ..Default::default()
    };
    let mut aucs = Vec::new();
    for p in [None, Some(&prior)] {
        let samples = training_samples(train_cases, p, false).map_err(|e| e.to_string())?;
        let net = MicroNet::new(MicroNetConfig::for_arch(Arch::Unet, samples[0].input.channels()), cfg.seed).unwrap();
        let run = train(net, &samples, &cfg).map_err(|e| e.to_string())?;
        let scores = test_cases
            .iter()
            .map(|c| {
                let x = network_input(c, p, false)?;
                Ok((patient_score(&predict_volume(&run.net, &x)?, PatientScore::Max), c.label))
            })
            .collect::<anatomical_prior::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        aucs.push(auroc(&scores).map_err(|e| e.to_string())?);
    }
    check(
        aucs[1] >= aucs[0],
        format!("test AUROC baseline {:.4}, hybrid prior {:.4} ({} epochs)", aucs[0], aucs[1], cfg.epochs),
    )
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, base, out);
        } else {
            out.push((p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
}

fn c11_cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{
  "phantom": {"n_cases": 16},
  "n_train": 10,
  "training": {"epochs": 1},
  "evaluation": {"bootstrap_reps": 100},
  "paths": {"prior": "prior_hybrid.nii", "predictions": null},
  "render": {"prediction": "predictions/case_0010.nii"}
}"#,
    )
    .unwrap();
    let commands = ["phantom", "build-prior", "train", "eval", "diagnose-prior", "render"];
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        for cmd in commands {
            let status = Proc::new(env!("CARGO_BIN_EXE_anaprior"))
                .args([cmd, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .args(["--threads", "1"])
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{cmd} exited with {status}"));
            }
        }
        let mut files = Vec::new();
        collect_files(&out, &out, &mut files);
        trees.push(files);
    }
    let differing: Vec<&str> = trees[0]
        .iter()
        .zip(&trees[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    check(
        trees[0].len() == trees[1].len() && differing.is_empty(),
        format!("{} files across {} commands, differing: {:?}", trees[0].len(), commands.len(), differing),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("prior correctness", Duration::from_secs(10), c1_prior_correctness),
        ("mu=0 reduction", Duration::from_secs(1), c2_mu_zero_reduction),
        ("gradient fidelity", Duration::from_secs(60), c3_gradient_fidelity),
        ("focal-loss values", Duration::MAX, c4_focal_values),
        ("metric oracles", Duration::MAX, c5_metric_oracles),
        ("bootstrap", Duration::MAX, c6_bootstrap),
        ("alignment closure", Duration::MAX, c7_alignment_closure),
        ("asymmetry diagnostic", Duration::MAX, c8_asymmetry),
        ("TTA symmetry", Duration::MAX, c9_tta_symmetry),
        ("end-to-end prior vs baseline", Duration::from_secs(600), c10_end_to_end),
        ("CLI determinism", Duration::MAX, c11_cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let (tag, detail) = match timed(budget, f) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
