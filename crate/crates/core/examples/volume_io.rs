//! Write a phantom case as NIfTI-1 and as raw + JSON sidecar, read both
//! back and compare.

use anatomical_prior::phantom::{generate_case, PhantomSpec};
use anatomical_prior::volume::{read_volume, write_volume_as, DType, VolumeFormat};

fn main() -> anatomical_prior::Result<()> {
    let case = generate_case(&PhantomSpec::default(), 0)?;
    let dir = std::env::temp_dir().join("anaprior-volume-io");
    std::fs::create_dir_all(&dir).map_err(|e| anatomical_prior::Error::Io { path: dir.clone(), source: e })?;
    let targets = [
        (dir.join("image.nii"), VolumeFormat::Nifti1, DType::Float32),
        (dir.join("image.raw"), VolumeFormat::RawSidecar, DType::Float64),
    ];
    for (path, format, dtype) in targets {
        write_volume_as(&case.image, &path, format, dtype)?;
        let back = read_volume(&path, format)?;
        let err = back
            .data()
            .iter()
            .zip(case.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "{:<40} {:?} {:?} channels {} spacing {:?} max error {err:.2e}",
            path.display(),
            format,
            dtype,
            back.channels(),
            back.spacing()
        );
    }
    write_volume_as(case.lesion.volume(), dir.join("lesion.nii"), VolumeFormat::Nifti1, DType::UInt8)?;
    println!("lesion mask: {} voxels", case.lesion.count());
    Ok(())
}
