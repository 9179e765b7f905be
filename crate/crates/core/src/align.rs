//! Prior-to-case correspondence and early fusion.
//!
//! A [`RigidMap`] carries the reference space onto a case:
//! `x_case = R · S · (x_ref − c) + c + t`, where `c` is the reference gland
//! centroid. Scaling happens about `c`, then the rotation, then the
//! translation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{pairwise_sum, PopulationPrior};
use crate::volume::{BinaryMask, Grid, Interpolation, Volume3D};

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidMap {
    /// mm
    pub translation: [f64; 3],
    pub scale: [f64; 3],
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
    /// Pivot for scale and rotation (reference centroid, mm).
    pub center: [f64; 3],
}

impl RigidMap {
    pub fn identity() -> Self {
        RigidMap {
            translation: [0.0; 3],
            scale: [1.0; 3],
            rotation: flatten(&IDENTITY),
            center: [0.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == [0.0; 3] && self.scale == [1.0; 3] && self.rotation == flatten(&IDENTITY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Parameter(format!("scales must be > 0, got {:?}", self.scale)));
        }
        let r = self.rotation_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::Parameter("rotation is not orthonormal".into()));
                }
            }
        }
        if (det(&r) - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        let r = &self.rotation;
        [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]
    }

    /// Reference-space point → case-space point.
    pub fn forward(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation_matrix();
        let s = [0, 1, 2].map(|a| self.scale[a] * (p[a] - self.center[a]));
        [0, 1, 2].map(|i| {
            (0..3).map(|k| r[i][k] * s[k]).sum::<f64>() + self.center[i] + self.translation[i]
        })
    }

    /// Case-space point → reference-space point.
    pub fn inverse(&self, q: [f64; 3]) -> [f64; 3] {
        let r = self.rotation_matrix();
        let d = [0, 1, 2].map(|a| q[a] - self.center[a] - self.translation[a]);
        [0, 1, 2].map(|i| {
            let rotated: f64 = (0..3).map(|k| r[k][i] * d[k]).sum();
            self.center[i] + rotated / self.scale[i]
        })
    }
}

fn flatten(m: &Mat3) -> [f64; 9] {
    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
}

fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn physical_points(mask: &BinaryMask) -> Vec<[f64; 3]> {
    let g = mask.grid();
    mask.indices()
        .map(|i| {
            let c = g.coords(i);
            g.to_physical([c[0] as f64, c[1] as f64, c[2] as f64])
        })
        .collect()
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    [0, 1, 2].map(|a| {
        let column: Vec<f64> = points.iter().map(|p| p[a]).collect();
        pairwise_sum(&column) / n
    })
}

/// Center-to-center bounding box extent in mm.
fn extent(mask: &BinaryMask) -> [f64; 3] {
    let (lo, hi) = mask.bounding_box().expect("nonempty mask");
    let s = mask.grid().spacing;
    [0, 1, 2].map(|a| (hi[a] - lo[a]) as f64 * s[a])
}

/// Symmetric 3×3 eigendecomposition by cyclic Jacobi rotations. Columns of
/// the returned matrix are eigenvectors.
fn jacobi_eigen(mut a: Mat3) -> ([f64; 3], Mat3) {
    let mut v = IDENTITY;
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off < 1e-15 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let (vkp, vkq) = (v[k][p], v[k][q]);
                v[k][p] = c * vkp - s * vkq;
                v[k][q] = s * vkp + c * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Principal axes as a rotation whose column `i` is the eigenvector most
/// aligned with coordinate axis `i`, signed so that component is positive.
fn principal_frame(points: &[[f64; 3]], c: [f64; 3]) -> Mat3 {
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let (_, vecs) = jacobi_eigen(cov);
    let columns: Vec<[f64; 3]> = (0..3).map(|j| [vecs[0][j], vecs[1][j], vecs[2][j]]).collect();
    let mut used = [false; 3];
    let mut frame = [[0.0; 3]; 3];
    for axis in 0..3 {
        let (best, _) = columns
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, col)| (j, col[axis].abs()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        used[best] = true;
        let col = columns[best];
        let sign = if col[axis] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..3 {
            frame[k][axis] = sign * col[k];
        }
    }
    if det(&frame) < 0.0 {
        for row in frame.iter_mut() {
            row[2] = -row[2];
        }
    }
    frame
}

/// Estimate the map carrying `reference_gland` onto `case_gland`:
/// translation between centroids, per-axis scale as the ratio of bounding
/// box extents and, when requested, a principal-axes rotation.
pub fn estimate_rigid(
    reference_gland: &BinaryMask,
    case_gland: &BinaryMask,
    use_rotation: bool,
) -> Result<RigidMap> {
    if reference_gland.is_empty() || case_gland.is_empty() {
        return Err(Error::Degenerate("gland mask is empty".into()));
    }
    let ref_points = physical_points(reference_gland);
    let case_points = physical_points(case_gland);
    let c_ref = centroid(&ref_points);
    let c_case = centroid(&case_points);
    let (e_ref, e_case) = (extent(reference_gland), extent(case_gland));
    let mut scale = [1.0; 3];
    for a in 0..3 {
        if e_ref[a] == 0.0 || e_case[a] == 0.0 {
            return Err(Error::DegenerateGeometry(format!("gland has zero extent along axis {a}")));
        }
        scale[a] = e_case[a] / e_ref[a];
    }
    let rotation = if use_rotation {
        let f_ref = principal_frame(&ref_points, c_ref);
        let f_case = principal_frame(&case_points, c_case);
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| f_case[i][k] * f_ref[j][k]).sum();
            }
        }
        r
    } else {
        IDENTITY
    };
    let map = RigidMap {
        translation: [0, 1, 2].map(|a| c_case[a] - c_ref[a]),
        scale,
        rotation: flatten(&rotation),
        center: c_ref,
    };
    map.validate()?;
    Ok(map)
}

/// Resample the prior into case space on `target`, clamped to [0, 1].
pub fn apply_rigid(prior: &PopulationPrior, map: &RigidMap, target: &Grid) -> Result<Volume3D> {
    map.validate()?;
    let out = prior
        .map
        .resample_mapped(target, Interpolation::Trilinear, 0.0, |p| map.inverse(p))?;
    out.map(|v| v.clamp(0.0, 1.0))
}

/// Append the aligned prior as the last channel of `image`.
pub fn fuse_channels(image: &Volume3D, aligned_prior: &Volume3D) -> Result<Volume3D> {
    if image.grid() != aligned_prior.grid() {
        return Err(Error::GridMismatch(format!(
            "image grid {:?} vs prior grid {:?}",
            image.grid(),
            aligned_prior.grid()
        )));
    }
    if aligned_prior.channels() != 1 {
        return Err(Error::Shape("aligned prior must have one channel".into()));
    }
    Volume3D::stack(&[image, aligned_prior])
}

/// Majority-vote gland over a cohort on one grid; serves as the reference
/// gland the population prior is anchored to.
pub fn reference_gland(glands: &[BinaryMask]) -> Result<BinaryMask> {
    let first = glands.first().ok_or(Error::EmptyCohort)?;
    let grid = *first.grid();
    if glands.iter().any(|g| g.grid() != &grid) {
        return Err(Error::GridMismatch("gland masks must share one grid".into()));
    }
    let bits: Vec<bool> = (0..grid.voxel_count())
        .map(|i| 2 * glands.iter().filter(|g| g.contains(i)).count() >= glands.len())
        .collect();
    BinaryMask::from_bools(grid, &bits)
}
