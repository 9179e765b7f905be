//! Seeded synthetic cohorts with ground-truth zonal and lesion masks.
//!
//! Each case is an ellipsoidal gland with a concentric inner ellipsoid as
//! the transitional zone (TZ); the peripheral zone (PZ) is the remaining
//! shell. A lesion, when present, is an ellipsoid lying entirely inside the
//! zone it was drawn from. Three channels loosely mimic bpMRI contrast:
//! T2-weighted (lesion darker), diffusion (lesion brighter) and ADC (lesion
//! darker). Optional benign mimics share the lesion's diffusion contrast but
//! sit outside the gland and are never labelled.
//!
//! Randomness: ChaCha8 from `rand_chacha` 0.9, keyed by
//! `ChaCha8Rng::seed_from_u64(seed)` with stream number `case_index`, so a
//! case depends only on `(spec, case_index)`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{read_volume, write_volume_as, BinaryMask, DType, Grid, Volume3D, VolumeFormat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_cases: usize,
    /// Probability that a case carries a lesion.
    pub lesion_rate: f64,
    /// Probability that a lesion is drawn in the PZ rather than the TZ.
    pub pz_fraction: f64,
    /// In-plane lesion radius range, voxels.
    pub lesion_radius: [f64; 2],
    /// Through-plane lesion radius, voxels.
    pub lesion_z_radius: f64,
    /// Gland semi-axes, voxels.
    pub gland_axes: [f64; 3],
    /// Relative jitter of the gland semi-axes.
    pub gland_axis_jitter: f64,
    /// Absolute jitter of the gland center, voxels per axis.
    pub gland_center_jitter: [f64; 3],
    /// TZ semi-axes as a fraction of the gland's (in-plane, through-plane).
    pub tz_ratio: [f64; 2],
    pub noise_std: f64,
    /// Additive lesion contrast for (T2W, DWI, ADC).
    pub lesion_contrast: [f64; 3],
    /// Probability of a benign diffusion-bright mimic outside the gland.
    pub mimic_rate: f64,
    /// Restrict lesions to the low-x half (left of midline).
    pub left_bias: bool,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [32, 32, 8],
            spacing: [0.5, 0.5, 3.6],
            n_cases: 100,
            lesion_rate: 0.5,
            pz_fraction: 0.75,
            lesion_radius: [2.5, 4.0],
            lesion_z_radius: 1.5,
            gland_axes: [12.5, 10.5, 3.0],
            gland_axis_jitter: 0.05,
            gland_center_jitter: [1.0, 1.0, 0.25],
            tz_ratio: [0.45, 0.67],
            noise_std: 0.1,
            lesion_contrast: [-0.35, 0.8, -0.45],
            mimic_rate: 0.3,
            left_bias: false,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<Grid> {
        Grid::with_spacing(self.dims, self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().map_err(|e| Error::Spec(e.to_string()))?;
        for (name, p) in [
            ("lesion_rate", self.lesion_rate),
            ("pz_fraction", self.pz_fraction),
            ("mimic_rate", self.mimic_rate),
            ("gland_axis_jitter", self.gland_axis_jitter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spec(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let [lo, hi] = self.lesion_radius;
        if !(lo >= 1.0 && hi >= lo) || !(self.lesion_z_radius >= 1.0) {
            return Err(Error::Spec("lesion radii must be >= 1 voxel with min <= max".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Spec("noise_std must be >= 0".into()));
        }
        if self.tz_ratio.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Spec("tz_ratio entries must lie in (0, 1)".into()));
        }
        for a in 0..3 {
            let center = (self.dims[a] as f64 - 1.0) / 2.0;
            let reach = self.gland_center_jitter[a] + self.gland_axes[a] * (1.0 + self.gland_axis_jitter);
            if center - reach < 0.0 || center + reach > (self.dims[a] - 1) as f64 {
                return Err(Error::Spec(format!(
                    "grid dims {:?} too small to contain the gland along axis {a}",
                    self.dims
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Tz,
    Pz,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    /// Channels: T2W, DWI, ADC.
    pub image: Volume3D,
    pub tz: BinaryMask,
    pub pz: BinaryMask,
    pub lesion: BinaryMask,
    pub label: bool,
    pub lesion_zone: Option<Zone>,
}

impl PhantomCase {
    pub fn gland(&self) -> BinaryMask {
        self.tz.union(&self.pz).expect("zonal masks share a grid")
    }
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn ellipsoid_contains(d: [f64; 3], r: [f64; 3]) -> bool {
    (d[0] / r[0]).powi(2) + (d[1] / r[1]).powi(2) + (d[2] / r[2]).powi(2) <= 1.0
}

fn lesion_offsets(r: f64, rz: f64) -> Vec<[i64; 3]> {
    let (ri, rzi) = (r.floor() as i64, rz.floor() as i64);
    let mut out = Vec::new();
    for dz in -rzi..=rzi {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ellipsoid_contains([dx as f64, dy as f64, dz as f64], [r, r, rz]) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Integer centers whose full blob lies inside `allowed`.
fn valid_centers(grid: &Grid, allowed: &[bool], offsets: &[[i64; 3]], x_limit: Option<i64>) -> Vec<usize> {
    let dims = grid.dims.map(|d| d as i64);
    (0..grid.voxel_count())
        .filter(|&i| allowed[i])
        .filter(|&i| {
            let c = grid.coords(i).map(|v| v as i64);
            offsets.iter().all(|o| {
                let p = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                (0..3).all(|a| p[a] >= 0 && p[a] < dims[a])
                    && x_limit.is_none_or(|lim| p[0] < lim)
                    && allowed[grid.linear_index(p[0] as usize, p[1] as usize, p[2] as usize)]
            })
        })
        .collect()
}

fn place_blob(
    grid: &Grid,
    allowed: &[bool],
    radius: f64,
    z_radius: f64,
    x_limit: Option<i64>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut r = radius;
    loop {
        let offsets = lesion_offsets(r, z_radius.min(r));
        let centers = valid_centers(grid, allowed, &offsets, x_limit);
        if !centers.is_empty() {
            let c = grid.coords(centers[rng.random_range(0..centers.len())]);
            return Some(
                offsets
                    .iter()
                    .map(|o| {
                        grid.linear_index(
                            (c[0] as i64 + o[0]) as usize,
                            (c[1] as i64 + o[1]) as usize,
                            (c[2] as i64 + o[2]) as usize,
                        )
                    })
                    .collect(),
            );
        }
        if r <= 1.0 {
            return None;
        }
        r = (r - 0.5).max(1.0);
    }
}

/// Generate case `index` of the cohort described by `spec`.
pub fn generate_case(spec: &PhantomSpec, index: usize) -> Result<PhantomCase> {
    spec.validate()?;
    let grid = spec.grid()?;
    let mut rng = case_rng(spec.seed, index);
    let n = grid.voxel_count();

    let mut center = [0.0; 3];
    let mut axes = [0.0; 3];
    for a in 0..3 {
        let j = spec.gland_center_jitter[a];
        center[a] = (spec.dims[a] as f64 - 1.0) / 2.0 + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        let k = spec.gland_axis_jitter;
        axes[a] = spec.gland_axes[a] * (1.0 + if k > 0.0 { rng.random_range(-k..=k) } else { 0.0 });
    }
    let tz_axes = [axes[0] * spec.tz_ratio[0], axes[1] * spec.tz_ratio[0], axes[2] * spec.tz_ratio[1]];

    let mut in_tz = vec![false; n];
    let mut in_pz = vec![false; n];
    for (i, (tz, pz)) in in_tz.iter_mut().zip(in_pz.iter_mut()).enumerate() {
        let c = grid.coords(i);
        let d = [0, 1, 2].map(|a| c[a] as f64 - center[a]);
        if ellipsoid_contains(d, axes) {
            if ellipsoid_contains(d, tz_axes) {
                *tz = true;
            } else {
                *pz = true;
            }
        }
    }

    let has_lesion = rng.random::<f64>() < spec.lesion_rate;
    let mut lesion = vec![false; n];
    let mut lesion_zone = None;
    if has_lesion {
        let zone = if rng.random::<f64>() < spec.pz_fraction { Zone::Pz } else { Zone::Tz };
        let [lo, hi] = spec.lesion_radius;
        let radius = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let allowed = match zone {
            Zone::Pz => &in_pz,
            Zone::Tz => &in_tz,
        };
        let x_limit = spec.left_bias.then_some((spec.dims[0] / 2) as i64);
        let voxels = place_blob(&grid, allowed, radius, spec.lesion_z_radius, x_limit, &mut rng)
            .ok_or_else(|| Error::Spec(format!("no room for a lesion in the {zone:?} of case {index}")))?;
        for i in voxels {
            lesion[i] = true;
        }
        lesion_zone = Some(zone);
    }

    let mut mimic = vec![false; n];
    if rng.random::<f64>() < spec.mimic_rate {
        // keep a one-voxel margin from the gland
        let margin: Vec<bool> = (0..n)
            .map(|i| {
                let c = grid.coords(i);
                let d = [0, 1, 2].map(|a| c[a] as f64 - center[a]);
                !ellipsoid_contains(d, [axes[0] + 1.5, axes[1] + 1.5, axes[2] + 1.0])
            })
            .collect();
        let [lo, hi] = spec.lesion_radius;
        let radius = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        if let Some(voxels) = place_blob(&grid, &margin, radius.min(2.5), 1.0, None, &mut rng) {
            for i in voxels {
                mimic[i] = true;
            }
        }
    }

    // base intensities: (background, TZ, PZ) per channel
    const BASE: [[f64; 3]; 3] = [[0.3, 0.55, 0.8], [0.2, 0.3, 0.3], [0.6, 0.65, 0.8]];
    let mut data = vec![0.0; 3 * n];
    for ch in 0..3 {
        for i in 0..n {
            let tissue = if in_pz[i] { 2 } else if in_tz[i] { 1 } else { 0 };
            let mut v = BASE[ch][tissue];
            if lesion[i] || (mimic[i] && ch != 0) {
                v += spec.lesion_contrast[ch];
            }
            let noise: f64 = rng.sample(StandardNormal);
            // stored at float32 precision so on-disk cohorts match memory
            data[ch * n + i] = (v + spec.noise_std * noise) as f32 as f64;
        }
    }

    Ok(PhantomCase {
        id: case_id(index),
        image: Volume3D::new(grid, 3, data)?,
        tz: BinaryMask::from_bools(grid, &in_tz)?,
        pz: BinaryMask::from_bools(grid, &in_pz)?,
        lesion: BinaryMask::from_bools(grid, &lesion)?,
        label: has_lesion,
        lesion_zone,
    })
}

/// Generate the whole cohort; output is identical for any thread count.
pub fn generate_cohort(spec: &PhantomSpec) -> Result<Vec<PhantomCase>> {
    spec.validate()?;
    if spec.n_cases == 0 {
        return Err(Error::EmptyCohort);
    }
    (0..spec.n_cases)
        .into_par_iter()
        .map(|i| generate_case(spec, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n_cases: usize,
    pub positive_cases: usize,
    pub case_prevalence: f64,
    pub lesion_voxels: usize,
    pub total_voxels: usize,
    /// Lesion voxels over all voxels.
    pub positive_fraction: f64,
    /// Background-to-lesion voxel ratio (the "1:k" in k), if any lesion voxels.
    pub imbalance_ratio: Option<f64>,
    pub pz_lesions: usize,
    pub tz_lesions: usize,
    pub pz_lesion_fraction: Option<f64>,
}

pub fn cohort_stats(cases: &[PhantomCase]) -> CohortStats {
    let mut stats = CohortStats {
        n_cases: cases.len(),
        positive_cases: 0,
        case_prevalence: 0.0,
        lesion_voxels: 0,
        total_voxels: 0,
        positive_fraction: 0.0,
        imbalance_ratio: None,
        pz_lesions: 0,
        tz_lesions: 0,
        pz_lesion_fraction: None,
    };
    for case in cases {
        let lesion_voxels = case.lesion.count();
        stats.lesion_voxels += lesion_voxels;
        stats.total_voxels += case.lesion.grid().voxel_count();
        if lesion_voxels > 0 {
            stats.positive_cases += 1;
            let in_pz = case.lesion.indices().filter(|&i| case.pz.contains(i)).count();
            if 2 * in_pz >= lesion_voxels {
                stats.pz_lesions += 1;
            } else {
                stats.tz_lesions += 1;
            }
        }
    }
    if !cases.is_empty() {
        stats.case_prevalence = stats.positive_cases as f64 / cases.len() as f64;
    }
    if stats.total_voxels > 0 {
        stats.positive_fraction = stats.lesion_voxels as f64 / stats.total_voxels as f64;
    }
    if stats.lesion_voxels > 0 {
        stats.imbalance_ratio =
            Some((stats.total_voxels - stats.lesion_voxels) as f64 / stats.lesion_voxels as f64);
    }
    let lesions = stats.pz_lesions + stats.tz_lesions;
    if lesions > 0 {
        stats.pz_lesion_fraction = Some(stats.pz_lesions as f64 / lesions as f64);
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: bool,
    pub image: String,
    pub tz: String,
    pub pz: String,
    pub lesion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub spec: PhantomSpec,
    pub stats: CohortStats,
    pub cases: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Write every case as NIfTI volumes plus `manifest.json`.
pub fn write_cohort(dir: &Path, spec: &PhantomSpec, cases: &[PhantomCase]) -> Result<CohortManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cases.len());
    for case in cases {
        let name = |suffix: &str| format!("{}_{suffix}.nii", case.id);
        let entry = ManifestEntry {
            id: case.id.clone(),
            label: case.label,
            image: name("image"),
            tz: name("tz"),
            pz: name("pz"),
            lesion: name("lesion"),
        };
        write_volume_as(&case.image, dir.join(&entry.image), VolumeFormat::Nifti1, DType::Float32)?;
        for (mask, file) in [(&case.tz, &entry.tz), (&case.pz, &entry.pz), (&case.lesion, &entry.lesion)] {
            write_volume_as(mask.volume(), dir.join(file), VolumeFormat::Nifti1, DType::UInt8)?;
        }
        entries.push(entry);
    }
    let manifest = CohortManifest {
        spec: spec.clone(),
        stats: cohort_stats(cases),
        cases: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CohortManifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingPath(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load a cohort written by [`write_cohort`].
pub fn read_cohort(dir: &Path) -> Result<Vec<PhantomCase>> {
    let manifest = read_manifest(dir)?;
    manifest
        .cases
        .iter()
        .map(|e| {
            let mask = |f: &str| BinaryMask::from_volume(read_volume(dir.join(f), VolumeFormat::Nifti1)?);
            let tz = mask(&e.tz)?;
            let pz = mask(&e.pz)?;
            let lesion = mask(&e.lesion)?;
            let lesion_zone = if lesion.is_empty() {
                None
            } else if lesion.indices().filter(|&i| pz.contains(i)).count() * 2 >= lesion.count() {
                Some(Zone::Pz)
            } else {
                Some(Zone::Tz)
            };
            Ok(PhantomCase {
                id: e.id.clone(),
                image: read_volume(dir.join(&e.image), VolumeFormat::Nifti1)?,
                tz,
                pz,
                lesion,
                label: e.label,
                lesion_zone,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> PhantomSpec {
        PhantomSpec {
            n_cases: n,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn zonal_invariants_hold() {
        for case in generate_cohort(&small(40)).unwrap() {
            assert!(case.tz.intersection(&case.pz).unwrap().is_empty());
            let gland = case.gland();
            assert!(case.lesion.indices().all(|i| gland.contains(i)));
            if let Some(zone) = case.lesion_zone {
                let zone_mask = if zone == Zone::Pz { &case.pz } else { &case.tz };
                assert!(case.lesion.indices().all(|i| zone_mask.contains(i)));
            }
            assert_eq!(case.label, !case.lesion.is_empty());
            assert_eq!(case.image.channels(), 3);
        }
    }

    #[test]
    fn lesion_rate_zero_gives_negative_cohort() {
        let spec = PhantomSpec {
            lesion_rate: 0.0,
            ..small(20)
        };
        let cases = generate_cohort(&spec).unwrap();
        assert!(cases.iter().all(|c| !c.label && c.lesion.is_empty()));
        assert_eq!(cohort_stats(&cases).positive_fraction, 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_cohort(&small(6)).unwrap();
        let b = generate_cohort(&small(6)).unwrap();
        assert_eq!(a, b);
        let other = generate_cohort(&PhantomSpec { seed: 8, ..small(6) }).unwrap();
        assert_ne!(a, other);
        assert_eq!(generate_case(&small(6), 4).unwrap(), a[4]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(generate_cohort(&small(0)), Err(Error::EmptyCohort)));
        let tiny = PhantomSpec {
            dims: [16, 16, 8],
            ..small(1)
        };
        assert!(matches!(generate_case(&tiny, 0), Err(Error::Spec(_))));
        let bad = PhantomSpec {
            pz_fraction: 1.5,
            ..small(1)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn left_bias_keeps_lesions_left() {
        let spec = PhantomSpec {
            left_bias: true,
            lesion_rate: 1.0,
            ..small(20)
        };
        for case in generate_cohort(&spec).unwrap() {
            assert!(case.lesion.indices().all(|i| case.lesion.grid().coords(i)[0] < 16));
        }
    }

    #[test]
    fn handmade_stats() {
        let g = Grid::with_spacing([10, 10, 10], [1.0; 3]).unwrap();
        let lesion = BinaryMask::from_fn(g, |x, y, z| x < 10 && y == 0 && z == 0).unwrap();
        let case = PhantomCase {
            id: "h".into(),
            image: Volume3D::zeros(g, 3).unwrap(),
            tz: BinaryMask::empty(g).unwrap(),
            pz: lesion.clone(),
            lesion,
            label: true,
            lesion_zone: Some(Zone::Pz),
        };
        let s = cohort_stats(&[case]);
        assert_eq!(s.positive_fraction, 0.01);
        assert_eq!(s.pz_lesions, 1);
    }

    #[test]
    fn cohort_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small(3);
        let cases = generate_cohort(&spec).unwrap();
        let manifest = write_cohort(dir.path(), &spec, &cases).unwrap();
        assert_eq!(manifest.cases.len(), 3);
        let back = read_cohort(dir.path()).unwrap();
        for (a, b) in cases.iter().zip(&back) {
            assert_eq!(a.tz, b.tz);
            assert_eq!(a.lesion, b.lesion);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert_eq!(x, y);
            }
        }
    }
}
