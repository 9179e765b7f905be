//! Per-case prevalence maps and the population prior built from them.
//!
//! Each case contributes a map whose voxels take one of four values:
//! 1 inside a lesion, 3μ in the peripheral zone, μ in the transitional zone
//! and 0 elsewhere. The population prior is the voxelwise mean of these maps
//! over a cohort.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{read_volume, write_volume_as, Axis, BinaryMask, DType, Volume3D, VolumeFormat};

/// Largest admissible μ: keeps 3μ below 1.
pub const MU_MAX: f64 = 0.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorVariant {
    /// μ = 0: mean lesion annotation.
    Prevalence,
    /// μ = 0.01: lesions blended with zonal anatomy.
    Hybrid,
    /// μ = 0.33: close to a weighted mean of the zonal masks.
    Zonal,
    Custom,
}

impl PriorVariant {
    pub fn from_mu(mu: f64) -> Self {
        match mu {
            0.0 => PriorVariant::Prevalence,
            0.01 => PriorVariant::Hybrid,
            0.33 => PriorVariant::Zonal,
            _ => PriorVariant::Custom,
        }
    }

    pub fn preset_mu(self) -> Option<f64> {
        match self {
            PriorVariant::Prevalence => Some(0.0),
            PriorVariant::Hybrid => Some(0.01),
            PriorVariant::Zonal => Some(0.33),
            PriorVariant::Custom => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorVariant::Prevalence => "prevalence",
            PriorVariant::Hybrid => "hybrid",
            PriorVariant::Zonal => "zonal",
            PriorVariant::Custom => "custom",
        }
    }
}

pub fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..=MU_MAX).contains(&mu) {
        return Err(Error::Parameter(format!("mu = {mu} outside [0, {MU_MAX}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceMap {
    pub map: Volume3D,
    pub mu: f64,
    pub case_id: String,
}

/// Prevalence map of one case. Lesion voxels take precedence over zones;
/// voxels in neither zone (including gland voxels missed by both zonal
/// masks) are 0.
pub fn prevalence_map(
    tz: &BinaryMask,
    pz: &BinaryMask,
    lesion: &BinaryMask,
    mu: f64,
    case_id: impl Into<String>,
) -> Result<PrevalenceMap> {
    check_mu(mu)?;
    let grid = *tz.grid();
    if pz.grid() != &grid || lesion.grid() != &grid {
        return Err(Error::GridMismatch("zonal and lesion masks must share one grid".into()));
    }
    let n = grid.voxel_count();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let (in_tz, in_pz) = (tz.contains(i), pz.contains(i));
        if in_tz && in_pz {
            return Err(Error::InvalidZonalMask(format!(
                "voxel {:?} is in both TZ and PZ",
                grid.coords(i)
            )));
        }
        data.push(if lesion.contains(i) {
            1.0
        } else if in_pz {
            3.0 * mu
        } else if in_tz {
            mu
        } else {
            0.0
        });
    }
    Ok(PrevalenceMap {
        map: Volume3D::new(grid, 1, data)?,
        mu,
        case_id: case_id.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPrior {
    pub map: Volume3D,
    pub mu: f64,
    pub n_cases: usize,
    pub variant: PriorVariant,
    pub case_ids: Vec<String>,
}

/// Pairwise summation; the result does not depend on how callers partition
/// the work, only on the input order.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Voxelwise mean of prevalence maps that share one grid and one μ.
pub fn aggregate_prior(maps: &[PrevalenceMap]) -> Result<PopulationPrior> {
    let first = maps.first().ok_or(Error::EmptyCohort)?;
    let grid = *first.map.grid();
    for m in maps {
        if m.mu != first.mu {
            return Err(Error::Parameter(format!(
                "mixed mu in cohort: {} and {}",
                first.mu, m.mu
            )));
        }
        if m.map.grid() != &grid || m.map.channels() != 1 {
            return Err(Error::GridMismatch(format!(
                "case {} is not on the reference grid",
                m.case_id
            )));
        }
    }
    let n_cases = maps.len();
    let data: Vec<f64> = (0..grid.voxel_count())
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || Vec::with_capacity(n_cases),
            |column, i| {
                column.clear();
                column.extend(maps.iter().map(|m| m.map.data()[i]));
                (pairwise_sum(column) / n_cases as f64).clamp(0.0, 1.0)
            },
        )
        .collect();
    Ok(PopulationPrior {
        map: Volume3D::new(grid, 1, data)?,
        mu: first.mu,
        n_cases,
        variant: PriorVariant::from_mu(first.mu),
        case_ids: maps.iter().map(|m| m.case_id.clone()).collect(),
    })
}

/// Left/right imbalance `|Σ_left − Σ_right| / Σ_total` across the plane
/// orthogonal to `axis`. With an odd extent the middle plane belongs to
/// neither half (it still counts toward the total).
pub fn asymmetry_index(prior: &PopulationPrior, axis: Axis) -> Result<f64> {
    asymmetry_of(&prior.map, axis)
}

pub fn asymmetry_of(map: &Volume3D, axis: Axis) -> Result<f64> {
    let g = map.grid();
    let a = axis.index();
    let n = g.dims[a];
    let (mut left, mut right, mut total) = (0.0, 0.0, 0.0);
    for (i, &v) in map.channel(0).iter().enumerate() {
        let k = g.coords(i)[a];
        total += v;
        if 2 * k + 1 < n {
            left += v;
        } else if 2 * k + 1 > n {
            right += v;
        }
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("prior has zero total mass".into()));
    }
    Ok(((left - right).abs() / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorProvenance {
    pub variant: PriorVariant,
    pub mu: f64,
    pub n_cases: usize,
    pub case_ids: Vec<String>,
    pub volume: String,
}

impl PopulationPrior {
    /// Provenance sidecar path for a prior volume at `path`.
    pub fn provenance_path(path: &Path) -> PathBuf {
        path.with_extension("prior.json")
    }

    /// Write the volume (float32 for `.nii`, float64 for raw) and its
    /// provenance sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let format = VolumeFormat::from_path(path)?;
        let dtype = match format {
            VolumeFormat::Nifti1 => DType::Float32,
            VolumeFormat::RawSidecar => DType::Float64,
        };
        write_volume_as(&self.map, path, format, dtype)?;
        let provenance = PriorProvenance {
            variant: self.variant,
            mu: self.mu,
            n_cases: self.n_cases,
            case_ids: self.case_ids.clone(),
            volume: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let side = Self::provenance_path(path);
        fs::write(&side, serde_json::to_string_pretty(&provenance)?).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let map = read_volume(path, VolumeFormat::from_path(path)?)?;
        let side = Self::provenance_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let p: PriorProvenance = serde_json::from_str(&text)?;
        check_mu(p.mu)?;
        if p.n_cases == 0 {
            return Err(Error::EmptyCohort);
        }
        Ok(PopulationPrior {
            map,
            mu: p.mu,
            n_cases: p.n_cases,
            variant: p.variant,
            case_ids: p.case_ids,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::with_spacing([4, 1, 1], [0.5, 0.5, 3.6]).unwrap()
    }

    fn mask(bits: [bool; 4]) -> BinaryMask {
        BinaryMask::from_bools(grid(), &bits).unwrap()
    }

    // voxel 0: background, 1: TZ, 2: PZ, 3: PZ + lesion
    fn masks() -> (BinaryMask, BinaryMask, BinaryMask) {
        (
            mask([false, true, false, false]),
            mask([false, false, true, true]),
            mask([false, false, false, true]),
        )
    }

    #[test]
    fn piecewise_values() {
        let (tz, pz, m) = masks();
        let p = prevalence_map(&tz, &pz, &m, 0.01, "c").unwrap();
        assert_eq!(p.map.data(), &[0.0, 0.01, 0.03, 1.0]);
        let p = prevalence_map(&tz, &pz, &m, 0.33, "c").unwrap();
        assert_eq!(p.map.data()[1], 0.33);
        assert!((p.map.data()[2] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn lesion_in_tz_is_one() {
        let tz = mask([true, true, false, false]);
        let pz = mask([false, false, true, false]);
        let m = mask([true, false, false, false]);
        let p = prevalence_map(&tz, &pz, &m, 0.2, "c").unwrap();
        assert_eq!(p.map.data(), &[1.0, 0.2, 0.6000000000000001, 0.0]);
    }

    #[test]
    fn rejects_overlap_and_bad_mu() {
        let (tz, _, m) = masks();
        assert!(matches!(
            prevalence_map(&tz, &tz, &m, 0.01, "c"),
            Err(Error::InvalidZonalMask(_))
        ));
        let (tz, pz, m) = masks();
        assert!(matches!(prevalence_map(&tz, &pz, &m, 0.5, "c"), Err(Error::Parameter(_))));
        assert!(prevalence_map(&tz, &pz, &m, -0.1, "c").is_err());
    }

    #[test]
    fn aggregate_basics() {
        let (tz, pz, m) = masks();
        let p = prevalence_map(&tz, &pz, &m, 0.01, "a").unwrap();
        let single = aggregate_prior(std::slice::from_ref(&p)).unwrap();
        assert_eq!(single.map, p.map);
        assert_eq!(single.variant, PriorVariant::Hybrid);

        let empty = BinaryMask::empty(grid()).unwrap();
        let full = mask([true; 4]);
        let zero = prevalence_map(&empty, &empty, &empty, 0.0, "z").unwrap();
        let one = prevalence_map(&empty, &empty, &full, 0.0, "o").unwrap();
        let pr = aggregate_prior(&[zero.clone(), one]).unwrap();
        assert_eq!(pr.map.data(), &[0.5; 4]);
        assert_eq!(pr.n_cases, 2);

        assert!(matches!(aggregate_prior(&[]), Err(Error::EmptyCohort)));
        let other = prevalence_map(&empty, &empty, &empty, 0.01, "x").unwrap();
        assert!(matches!(aggregate_prior(&[zero, other]), Err(Error::Parameter(_))));
    }

    #[test]
    fn asymmetry_fixtures() {
        let g = Grid::with_spacing([5, 2, 1], [1.0; 3]).unwrap();
        let sym = Volume3D::from_fn(g, |x, y, _| [1.0, 2.0, 7.0, 2.0, 1.0][x] + y as f64).unwrap();
        assert!(asymmetry_of(&sym, Axis::X).unwrap() < 1e-12);
        let left = Volume3D::from_fn(g, |x, _, _| if x < 2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(asymmetry_of(&left, Axis::X).unwrap(), 1.0);
        let zero = Volume3D::zeros(g, 1).unwrap();
        assert!(matches!(asymmetry_of(&zero, Axis::X), Err(Error::Degenerate(_))));
    }

    #[test]
    fn persists_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let (tz, pz, m) = masks();
        let p = prevalence_map(&tz, &pz, &m, 0.01, "a").unwrap();
        let prior = aggregate_prior(&[p]).unwrap();
        let path = dir.path().join("prior.raw");
        prior.write(&path).unwrap();
        assert_eq!(PopulationPrior::read(&path).unwrap(), prior);
        assert!(matches!(
            PopulationPrior::read(&dir.path().join("nope.nii")),
            Err(Error::MissingPath(_))
        ));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<u8>, Vec<bool>)> {
        (
            proptest::collection::vec(0u8..3, 12),
            proptest::collection::vec(any::<bool>(), 12),
        )
    }

    fn build(zones: &[u8], lesion: &[bool], mu: f64) -> PrevalenceMap {
        let g = Grid::with_spacing([3, 2, 2], [1.0; 3]).unwrap();
        let tz: Vec<bool> = zones.iter().map(|&z| z == 1).collect();
        let pz: Vec<bool> = zones.iter().map(|&z| z == 2).collect();
        prevalence_map(
            &BinaryMask::from_bools(g, &tz).unwrap(),
            &BinaryMask::from_bools(g, &pz).unwrap(),
            &BinaryMask::from_bools(g, lesion).unwrap(),
            mu,
            "p",
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn value_set_is_closed(case in arb_case(), mu in 0.0..=0.33f64) {
            let p = build(&case.0, &case.1, mu);
            prop_assert!(p.map.data().iter().all(|&v| v == 0.0 || v == mu || v == 3.0 * mu || v == 1.0));
        }

        #[test]
        fn aggregate_is_permutation_invariant(cases in proptest::collection::vec(arb_case(), 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let maps: Vec<_> = cases.iter().map(|c| build(&c.0, &c.1, 0.01)).collect();
            let mut shuffled = maps.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_prior(&maps).unwrap();
            let b = aggregate_prior(&shuffled).unwrap();
            for (x, y) in a.map.data().iter().zip(b.map.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn prior_is_monotone_in_mu(cases in proptest::collection::vec(arb_case(), 1..6), lo in 0.0..0.33f64, hi in 0.0..0.33f64) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let at = |mu| {
                let maps: Vec<_> = cases.iter().map(|c| build(&c.0, &c.1, mu)).collect();
                aggregate_prior(&maps).unwrap()
            };
            let (a, b) = (at(lo), at(hi));
            for (x, y) in a.map.data().iter().zip(b.map.data()) {
                prop_assert!(x <= y);
            }
        }
    }
}
