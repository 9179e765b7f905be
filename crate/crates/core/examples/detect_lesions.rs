//! Lesion candidates, FROC and pAUC for synthetic probability maps that
//! find most lesions and add occasional false blobs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use anatomical_prior::lesions::{detect_case, write_candidates_csv, DetectionProtocol};
use anatomical_prior::metrics::{froc, pauc};
use anatomical_prior::phantom::{generate_cohort, PhantomSpec};
use anatomical_prior::volume::Volume3D;

fn main() -> anatomical_prior::Result<()> {
    let spec = PhantomSpec {
        n_cases: 40,
        ..Default::default()
    };
    let cases = generate_cohort(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let protocol = DetectionProtocol::default();
    let mut detections = Vec::new();
    for case in &cases {
        let grid = *case.lesion.grid();
        let hit: f64 = if rng.random::<f64>() < 0.8 { rng.random_range(0.5..0.95) } else { 0.0 };
        let false_blob = (rng.random::<f64>() < 0.6).then(|| {
            let c = [rng.random_range(3.0..29.0), rng.random_range(3.0..29.0), rng.random_range(1.0..7.0)];
            (c, rng.random_range(0.5..0.95))
        });
        let noise: Vec<f64> = (0..grid.voxel_count()).map(|_| rng.random_range(0.0..0.3)).collect();
        let prob = Volume3D::from_fn(grid, |x, y, z| {
            let mut p = noise[grid.linear_index(x, y, z)];
            if case.lesion.at(x, y, z) {
                p = p.max(hit);
            }
            if let Some((c, score)) = false_blob {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (2.0 * (z as f64 - c[2])).powi(2);
                if d2 <= 6.25 {
                    p = p.max(score);
                }
            }
            p
        })?;
        detections.push(detect_case(&case.id, &prob, &case.lesion, &protocol)?);
    }
    let curve = froc(&detections)?;
    for fp in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
        println!("sensitivity at {fp:>4} FP/patient: {:.3}", curve.sensitivity_at(fp));
    }
    let area = pauc(&curve, 0.1, 10.0)?;
    println!("pAUC [0.1, 10]: normalized {:.4}, raw {:.4}", area.normalized, area.raw);
    let path = std::env::temp_dir().join("anaprior-candidates.csv");
    write_candidates_csv(&path, &detections)?;
    println!("candidates written to {}", path.display());
    Ok(())
}
