//! Patient-level ROC, lesion-level FROC with partial area, and bootstrap
//! confidence intervals.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesions::CaseDetections;
use crate::prior::pairwise_sum;
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientScore {
    #[default]
    Max,
    /// Mean of the k largest voxel values.
    TopK(usize),
}

pub fn patient_score(prob: &Volume3D, rule: PatientScore) -> f64 {
    match rule {
        PatientScore::Max => prob.data().iter().copied().fold(0.0, f64::max),
        PatientScore::TopK(k) => {
            let mut v = prob.data().to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            let k = k.clamp(1, v.len());
            v[..k].iter().sum::<f64>() / k as f64
        }
    }
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic, ties
/// counted one half.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "AUROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::Parameter(format!("non-finite score {}", s.0)));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Count, per positive, negatives strictly below plus half the tied ones,
    // in units of one half to stay in integers.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let tie_pos = sorted[i..j].iter().filter(|s| s.1).count() as u64;
        let tie_neg = (j - i) as u64 - tie_pos;
        twice_u += tie_pos * (2 * neg_below + tie_neg);
        neg_below += tie_neg;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub fp_per_patient: f64,
    pub sensitivity: f64,
}

/// One point per distinct candidate score, highest threshold first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub n_patients: usize,
    pub n_lesions: usize,
}

impl FrocCurve {
    /// Sensitivity at `fp`: the last point with `fp_per_patient ≤ fp`,
    /// the first point below the curve's range, 0 for an empty curve.
    pub fn sensitivity_at(&self, fp: f64) -> f64 {
        match self.points.iter().rposition(|p| p.fp_per_patient <= fp) {
            Some(k) => self.points[k].sensitivity,
            None => self.points.first().map_or(0.0, |p| p.sensitivity),
        }
    }
}

pub fn froc(cases: &[CaseDetections]) -> Result<FrocCurve> {
    let n_lesions: usize = cases.iter().map(|c| c.n_gt).sum();
    if n_lesions == 0 {
        return Err(Error::Degenerate("FROC needs at least one ground-truth lesion".into()));
    }
    if cases.is_empty() {
        return Err(Error::EmptyCohort);
    }
    // (score, case, gt) pooled over the cohort.
    let mut pooled: Vec<(f64, usize, Option<usize>)> = Vec::new();
    for (ci, c) in cases.iter().enumerate() {
        for m in &c.candidates {
            pooled.push((m.candidate.score, ci, if m.tp { m.gt } else { None }));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut seen: Vec<Vec<bool>> = cases.iter().map(|c| vec![false; c.n_gt]).collect();
    let (mut hits, mut fps) = (0usize, 0usize);
    let mut points = Vec::new();
    let n = cases.len() as f64;
    let mut i = 0;
    while i < pooled.len() {
        let s = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == s {
            let (_, ci, gt) = pooled[i];
            match gt {
                Some(k) => {
                    if !seen[ci][k] {
                        seen[ci][k] = true;
                        hits += 1;
                    }
                }
                None => fps += 1,
            }
            i += 1;
        }
        points.push(FrocPoint {
            threshold: s,
            fp_per_patient: fps as f64 / n,
            sensitivity: hits as f64 / n_lesions as f64,
        });
    }
    Ok(FrocCurve {
        points,
        n_patients: cases.len(),
        n_lesions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pauc {
    /// Divided by the log10 width of the FP range; lies in [0, 1].
    pub normalized: f64,
    /// Integral of sensitivity over log10(FP per patient).
    pub raw: f64,
}

/// Area under the step-interpolated FROC curve over `[fp_lo, fp_hi]` on a
/// log10 FP axis.
pub fn pauc(curve: &FrocCurve, fp_lo: f64, fp_hi: f64) -> Result<Pauc> {
    if !(fp_lo > 0.0 && fp_lo < fp_hi && fp_hi.is_finite()) {
        return Err(Error::Parameter(format!("pAUC range [{fp_lo}, {fp_hi}] is invalid")));
    }
    let mut cuts = vec![fp_lo];
    cuts.extend(
        curve
            .points
            .iter()
            .map(|p| p.fp_per_patient)
            .filter(|&f| f > fp_lo && f < fp_hi),
    );
    cuts.push(fp_hi);
    cuts.dedup();
    let mut raw = 0.0;
    for w in cuts.windows(2) {
        raw += curve.sensitivity_at(w[0]) * (w[1].log10() - w[0].log10());
    }
    let width = fp_hi.log10() - fp_lo.log10();
    Ok(Pauc {
        normalized: raw / width,
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub metric: String,
    pub mean: f64,
    /// Twice the replicate standard deviation.
    pub ci_half_width: f64,
    pub n_reps: usize,
    pub seed: u64,
    /// Degenerate resamples that were redrawn.
    pub redraws: usize,
}

/// Resample `n` patients with replacement `n_reps` times and evaluate
/// `metric` on each draw of indices. Replicate `r` uses ChaCha8 stream `r`,
/// so results do not depend on the worker count. A draw on which the metric
/// reports [`Error::Degenerate`] is redrawn.
pub fn bootstrap_ci<F>(name: &str, n: usize, metric: F, n_reps: usize, seed: u64) -> Result<BootstrapReport>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    if n_reps < 2 {
        return Err(Error::Parameter("bootstrap needs at least two replicates".into()));
    }
    // A replicate that alone exhausts this many redraws already exceeds the
    // half-degenerate budget.
    let cap = n_reps;
    let results: Vec<Result<(f64, usize)>> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut redraws = 0;
            let mut draw = vec![0usize; n];
            loop {
                for d in draw.iter_mut() {
                    *d = rng.random_range(0..n);
                }
                match metric(&draw) {
                    Ok(v) => return Ok((v, redraws)),
                    Err(Error::Degenerate(_)) if redraws < cap => redraws += 1,
                    Err(Error::Degenerate(_)) => {
                        return Err(Error::Instability {
                            degenerate: redraws + 1,
                            n_reps,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut values = Vec::with_capacity(n_reps);
    let mut redraws = 0;
    for r in results {
        let (v, k) = r?;
        values.push(v);
        redraws += k;
    }
    if redraws > n_reps {
        return Err(Error::Instability {
            degenerate: redraws,
            n_reps,
        });
    }
    let mean = pairwise_sum(&values) / n_reps as f64;
    let sd = if values.iter().all(|&v| v == values[0]) {
        0.0
    } else {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        (pairwise_sum(&dev) / (n_reps - 1) as f64).sqrt()
    };
    Ok(BootstrapReport {
        metric: name.to_string(),
        mean: if sd == 0.0 { values[0] } else { mean },
        ci_half_width: 2.0 * sd,
        n_reps,
        seed,
        redraws,
    })
}

/// Bootstrap of patient-level AUROC over `(score, label)` pairs.
pub fn bootstrap_auroc(scores: &[(f64, bool)], n_reps: usize, seed: u64) -> Result<BootstrapReport> {
    bootstrap_ci(
        "auroc",
        scores.len(),
        |idx| auroc(&idx.iter().map(|&i| scores[i]).collect::<Vec<_>>()),
        n_reps,
        seed,
    )
}

/// Bootstrap of normalized pAUC with patients as the resampling unit.
pub fn bootstrap_pauc(cases: &[CaseDetections], fp_lo: f64, fp_hi: f64, n_reps: usize, seed: u64) -> Result<BootstrapReport> {
    bootstrap_ci(
        "pauc",
        cases.len(),
        |idx| {
            let draw: Vec<CaseDetections> = idx.iter().map(|&i| cases[i].clone()).collect();
            Ok(pauc(&froc(&draw)?, fp_lo, fp_hi)?.normalized)
        },
        n_reps,
        seed,
    )
}

pub fn write_froc_csv(path: &Path, curve: &FrocCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &curve.points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// FROC on a log FP axis over `[fp_lo, fp_hi]`, with an optional band of
/// `(fp, low, high)` sensitivities drawn underneath.
pub fn plot_froc(
    path: &Path,
    curve: &FrocCurve,
    band: Option<&[(f64, f64, f64)]>,
    fp_lo: f64,
    fp_hi: f64,
) -> Result<()> {
    const W: u32 = 480;
    const H: u32 = 360;
    const MARGIN: u32 = 40;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let to_px = |fp: f64, s: f64| {
        let u = (fp.log10() - fp_lo.log10()) / (fp_hi.log10() - fp_lo.log10());
        let x = MARGIN as f64 + u.clamp(0.0, 1.0) * pw;
        let y = (H - MARGIN) as f64 - s.clamp(0.0, 1.0) * ph;
        (x.round() as u32, y.round() as u32)
    };
    let columns = W - 2 * MARGIN;
    let fp_of = |col: u32| 10f64.powf(fp_lo.log10() + (fp_hi.log10() - fp_lo.log10()) * col as f64 / columns as f64);
    if let Some(band) = band {
        for col in 0..=columns {
            let fp = fp_of(col);
            let k = band.iter().rposition(|b| b.0 <= fp).unwrap_or(0);
            if let Some(&(_, lo, hi)) = band.get(k) {
                let (x, y_lo) = to_px(fp, lo);
                let (_, y_hi) = to_px(fp, hi);
                for y in y_hi..=y_lo {
                    img.put_pixel(x, y, image::Rgb([200, 215, 240]));
                }
            }
        }
    }
    for x in MARGIN..=W - MARGIN {
        img.put_pixel(x, H - MARGIN, image::Rgb([0, 0, 0]));
    }
    for y in MARGIN..=H - MARGIN {
        img.put_pixel(MARGIN, y, image::Rgb([0, 0, 0]));
    }
    for decade in [0.1f64, 1.0, 10.0] {
        if decade >= fp_lo && decade <= fp_hi {
            let (x, _) = to_px(decade, 0.0);
            for y in H - MARGIN..H - MARGIN + 6 {
                img.put_pixel(x, y, image::Rgb([0, 0, 0]));
            }
        }
    }
    let mut prev: Option<u32> = None;
    for col in 0..=columns {
        let fp = fp_of(col);
        let (x, y) = to_px(fp, curve.sensitivity_at(fp));
        let (a, b) = match prev {
            Some(p) => (p.min(y), p.max(y)),
            None => (y, y),
        };
        for yy in a..=b {
            img.put_pixel(x, yy, image::Rgb([20, 60, 200]));
        }
        prev = Some(y);
    }
    img.save(path).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lesions::{LesionCandidate, MatchedCandidate};

    fn cand(score: f64, tp: bool, gt: Option<usize>) -> MatchedCandidate {
        MatchedCandidate {
            candidate: LesionCandidate {
                voxels: vec![0],
                score,
                peak: 0,
                centroid: [0.0; 3],
                volume_mm3: 1.0,
            },
            tp,
            gt,
        }
    }

    #[test]
    fn auroc_basics() {
        assert_eq!(auroc(&[(0.1, false), (0.9, true), (0.2, false), (0.8, true)]).unwrap(), 1.0);
        assert_eq!(auroc(&[(0.5, false), (0.5, true), (0.5, true)]).unwrap(), 0.5);
        assert!(matches!(auroc(&[(0.5, true)]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn patient_scores() {
        let g = crate::volume::Grid::with_spacing([4, 2, 1], [1.0; 3]).unwrap();
        let v = Volume3D::new(g, 1, vec![0.1, 0.83, 0.2, 0.5, 0.4, 0.3, 0.0, 0.6]).unwrap();
        assert_eq!(patient_score(&v, PatientScore::Max), 0.83);
        let top5 = (0.83 + 0.6 + 0.5 + 0.4 + 0.3) / 5.0;
        assert!((patient_score(&v, PatientScore::TopK(5)) - top5).abs() < 1e-15);
        assert_eq!(patient_score(&Volume3D::zeros(g, 1).unwrap(), PatientScore::Max), 0.0);
    }

    #[test]
    fn froc_single_hit() {
        let c = CaseDetections {
            case_id: "a".into(),
            n_gt: 1,
            candidates: vec![cand(0.9, true, Some(0))],
        };
        let f = froc(&[c]).unwrap();
        assert_eq!(f.points.len(), 1);
        assert_eq!((f.points[0].fp_per_patient, f.points[0].sensitivity), (0.0, 1.0));
        let empty = CaseDetections {
            case_id: "b".into(),
            n_gt: 2,
            candidates: vec![],
        };
        let f = froc(std::slice::from_ref(&empty)).unwrap();
        assert_eq!(f.sensitivity_at(5.0), 0.0);
        assert_eq!(pauc(&f, 0.1, 10.0).unwrap().normalized, 0.0);
        let none = CaseDetections { n_gt: 0, ..empty };
        assert!(matches!(froc(&[none]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pauc_step_fixture() {
        let curve = FrocCurve {
            points: vec![
                FrocPoint { threshold: 0.9, fp_per_patient: 0.0, sensitivity: 0.5 },
                FrocPoint { threshold: 0.5, fp_per_patient: 1.0, sensitivity: 1.0 },
            ],
            n_patients: 1,
            n_lesions: 2,
        };
        let p = pauc(&curve, 0.1, 10.0).unwrap();
        assert_eq!(p.normalized, 0.75);
        assert_eq!(p.raw, 1.5);
        let flat = FrocCurve {
            points: vec![FrocPoint { threshold: 0.5, fp_per_patient: 0.01, sensitivity: 1.0 }],
            n_patients: 1,
            n_lesions: 1,
        };
        assert_eq!(pauc(&flat, 0.1, 10.0).unwrap().normalized, 1.0);
    }

    #[test]
    fn bootstrap_constant_and_repeatable() {
        let r = bootstrap_ci("c", 10, |_| Ok(0.7), 200, 3).unwrap();
        assert_eq!((r.mean, r.ci_half_width), (0.7, 0.0));
        let scores: Vec<(f64, bool)> = (0..30).map(|i| ((i * 37 % 11) as f64, i % 3 == 0)).collect();
        let a = bootstrap_auroc(&scores, 300, 9).unwrap();
        let b = bootstrap_auroc(&scores, 300, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_half_width > 0.0);
    }

    #[test]
    fn bootstrap_reports_instability() {
        // Two patients, one positive: half of all draws are single-class.
        let r = bootstrap_auroc(&[(0.3, true), (0.1, false)], 400, 1);
        match r {
            Ok(rep) => assert!(rep.redraws <= 400),
            Err(e) => assert!(matches!(e, Error::Instability { .. })),
        }
        let always = bootstrap_ci("d", 5, |_| Err(Error::Degenerate("x".into())), 10, 0);
        assert!(matches!(always, Err(Error::Instability { .. })));
    }
}
