use serde::{Deserialize, Serialize};

use super::{Grid, Volume3D};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Trilinear,
    Nearest,
}

/// Coordinates this close to an integer are treated as lying on it, so that
/// pure integer shifts reproduce values exactly despite mm round-off.
const SNAP: f64 = 1e-9;

#[inline]
fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        r
    } else {
        u
    }
}

impl Volume3D {
    /// Sample channel `c` at a continuous voxel coordinate. Returns `None`
    /// outside `[0, n - 1]` on any axis.
    pub fn sample(&self, c: usize, voxel: [f64; 3], mode: Interpolation) -> Option<f64> {
        let dims = self.dims();
        let u = voxel.map(snap);
        for a in 0..3 {
            if !(u[a] >= 0.0 && u[a] <= (dims[a] - 1) as f64) {
                return None;
            }
        }
        let n = self.grid().voxel_count();
        let values = &self.data()[c * n..(c + 1) * n];
        let g = self.grid();
        match mode {
            Interpolation::Nearest => {
                let i = u.map(|v| v.round() as usize);
                Some(values[g.linear_index(i[0], i[1], i[2])])
            }
            Interpolation::Trilinear => {
                let i0 = u.map(|v| v.floor() as usize);
                let mut i1 = [0usize; 3];
                let mut t = [0.0; 3];
                for a in 0..3 {
                    i1[a] = (i0[a] + 1).min(dims[a] - 1);
                    t[a] = u[a] - i0[a] as f64;
                }
                let mut acc = 0.0;
                for (dz, wz) in [(i0[2], 1.0 - t[2]), (i1[2], t[2])] {
                    if wz == 0.0 {
                        continue;
                    }
                    for (dy, wy) in [(i0[1], 1.0 - t[1]), (i1[1], t[1])] {
                        if wy == 0.0 {
                            continue;
                        }
                        for (dx, wx) in [(i0[0], 1.0 - t[0]), (i1[0], t[0])] {
                            if wx == 0.0 {
                                continue;
                            }
                            acc += wx * wy * wz * values[g.linear_index(dx, dy, dz)];
                        }
                    }
                }
                Some(acc)
            }
        }
    }

    /// Resample onto `target` by sampling at the physical position of every
    /// target voxel center; samples outside the source grid become 0.
    pub fn resample(&self, target: &Grid, mode: Interpolation) -> Result<Volume3D> {
        self.resample_with_fill(target, mode, 0.0)
    }

    pub fn resample_with_fill(&self, target: &Grid, mode: Interpolation, fill: f64) -> Result<Volume3D> {
        target.validate()?;
        self.resample_mapped(target, mode, fill, |p| p)
    }

    /// Resample onto `target`, where `to_source` maps a target physical
    /// position (mm) to the physical position to read in `self`.
    pub fn resample_mapped(
        &self,
        target: &Grid,
        mode: Interpolation,
        fill: f64,
        to_source: impl Fn([f64; 3]) -> [f64; 3],
    ) -> Result<Volume3D> {
        target.validate()?;
        let [nx, ny, nz] = target.dims;
        let mut data = vec![fill; target.voxel_count() * self.channels()];
        let n = target.voxel_count();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = target.to_physical([x as f64, y as f64, z as f64]);
                    let u = self.grid().to_voxel(to_source(p));
                    let i = target.linear_index(x, y, z);
                    for c in 0..self.channels() {
                        if let Some(v) = self.sample(c, u, mode) {
                            data[c * n + i] = v;
                        }
                    }
                }
            }
        }
        Volume3D::new(*target, self.channels(), data)
    }
}
