//! Case standardization and prior fusion shared by training, evaluation and
//! the command line.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::align::{apply_rigid, estimate_rigid, fuse_channels, reference_gland, RigidMap};
use crate::error::{Error, Result};
use crate::micronet::{predict_tta, MicroNet, Tensor, TrainSample};
use crate::phantom::PhantomCase;
use crate::prior::{aggregate_prior, prevalence_map, PopulationPrior};
use crate::volume::{read_volume, write_volume_as, BinaryMask, DType, Volume3D, VolumeFormat};

fn crop_mask(mask: &BinaryMask, crop: [usize; 3]) -> Result<BinaryMask> {
    BinaryMask::from_volume(mask.volume().center_crop(crop)?)
}

/// A case cropped to the standard grid with z-scored image channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardCase {
    pub id: String,
    pub image: Volume3D,
    pub tz: BinaryMask,
    pub pz: BinaryMask,
    pub lesion: BinaryMask,
    pub label: bool,
}

impl StandardCase {
    pub fn gland(&self) -> BinaryMask {
        self.tz.union(&self.pz).expect("zonal masks share a grid")
    }
}

pub fn standardize(case: &PhantomCase, crop: [usize; 3]) -> Result<StandardCase> {
    Ok(StandardCase {
        id: case.id.clone(),
        image: case.image.center_crop(crop)?.znormalize()?,
        tz: crop_mask(&case.tz, crop)?,
        pz: crop_mask(&case.pz, crop)?,
        lesion: crop_mask(&case.lesion, crop)?,
        label: case.label,
    })
}

pub fn standardize_all(cases: &[PhantomCase], crop: [usize; 3]) -> Result<Vec<StandardCase>> {
    cases.par_iter().map(|c| standardize(c, crop)).collect()
}

/// A population prior together with the gland it is anchored to.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredPrior {
    pub prior: PopulationPrior,
    pub reference: BinaryMask,
}

impl AnchoredPrior {
    pub fn build(cases: &[StandardCase], mu: f64) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::EmptyCohort);
        }
        let maps = cases
            .par_iter()
            .map(|c| prevalence_map(&c.tz, &c.pz, &c.lesion, mu, &c.id))
            .collect::<Result<Vec<_>>>()?;
        let glands: Vec<BinaryMask> = cases.iter().map(StandardCase::gland).collect();
        Ok(AnchoredPrior {
            prior: aggregate_prior(&maps)?,
            reference: reference_gland(&glands)?,
        })
    }

    /// Reference gland file stored next to a prior at `path`.
    pub fn reference_path(path: &Path) -> PathBuf {
        path.with_extension("reference.nii")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.prior.write(path)?;
        write_volume_as(
            self.reference.volume(),
            Self::reference_path(path),
            VolumeFormat::Nifti1,
            DType::UInt8,
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let prior = PopulationPrior::read(path)?;
        let ref_path = Self::reference_path(path);
        if !ref_path.exists() {
            return Err(Error::MissingPath(ref_path));
        }
        let reference = BinaryMask::from_volume(read_volume(&ref_path, VolumeFormat::Nifti1)?)?;
        if !reference.grid().same_lattice(prior.map.grid()) {
            return Err(Error::GridMismatch("prior and reference gland grids differ".into()));
        }
        Ok(AnchoredPrior { prior, reference })
    }

    /// Map from the reference gland onto `gland`.
    pub fn map_to(&self, gland: &BinaryMask, use_rotation: bool) -> Result<RigidMap> {
        estimate_rigid(&self.reference, gland, use_rotation)
    }

    /// Prior resampled into the space of a case with the given gland.
    pub fn aligned(&self, gland: &BinaryMask, use_rotation: bool) -> Result<Volume3D> {
        let map = self.map_to(gland, use_rotation)?;
        apply_rigid(&self.prior, &map, gland.grid())
    }
}

/// Network input for a case: its image, with the aligned prior appended as
/// a fourth channel when a prior is given.
pub fn network_input(case: &StandardCase, prior: Option<&AnchoredPrior>, use_rotation: bool) -> Result<Volume3D> {
    match prior {
        None => Ok(case.image.clone()),
        Some(p) => fuse_channels(&case.image, &p.aligned(&case.gland(), use_rotation)?),
    }
}

pub fn training_samples(
    cases: &[StandardCase],
    prior: Option<&AnchoredPrior>,
    use_rotation: bool,
) -> Result<Vec<TrainSample>> {
    cases
        .par_iter()
        .map(|c| {
            Ok(TrainSample {
                input: network_input(c, prior, use_rotation)?,
                target: c.lesion.clone(),
            })
        })
        .collect()
}

/// Flip-averaged probability map for one network input.
pub fn predict_volume(net: &MicroNet, input: &Volume3D) -> Result<Volume3D> {
    let x = Tensor::from_volumes(&[input])?;
    predict_tta(net, &x)?.to_volume(0, *input.grid())
}
