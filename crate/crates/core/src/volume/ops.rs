use super::{Grid, Volume3D};
use crate::error::{Error, Result};

impl Volume3D {
    /// Per-channel z-score normalization (mean 0, population stdev 1).
    pub fn znormalize(&self) -> Result<Volume3D> {
        let n = self.grid().voxel_count();
        let mut data = Vec::with_capacity(self.data().len());
        for c in 0..self.channels() {
            let values = self.channel(c);
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            if !(std > 1e-12 * mean.abs().max(1.0)) {
                return Err(Error::Degenerate(format!(
                    "channel {c} is constant; cannot normalize"
                )));
            }
            data.extend(values.iter().map(|v| (v - mean) / std));
        }
        Volume3D::new(*self.grid(), self.channels(), data)
    }

    /// Central sub-block of size `target`. The start offset on each axis is
    /// `floor((n - target) / 2)`.
    pub fn center_crop(&self, target: [usize; 3]) -> Result<Volume3D> {
        let dims = self.dims();
        for a in 0..3 {
            if target[a] == 0 || target[a] > dims[a] {
                return Err(Error::Size(format!(
                    "crop target {target:?} does not fit inside {dims:?}"
                )));
            }
        }
        let offset = crop_offset(dims, target);
        let spacing = self.spacing();
        let origin = self.origin();
        let grid = Grid::new(
            target,
            spacing,
            [
                origin[0] + offset[0] as f64 * spacing[0],
                origin[1] + offset[1] as f64 * spacing[1],
                origin[2] + offset[2] as f64 * spacing[2],
            ],
        )?;
        let mut data = Vec::with_capacity(grid.voxel_count() * self.channels());
        for c in 0..self.channels() {
            for z in 0..target[2] {
                for y in 0..target[1] {
                    for x in 0..target[0] {
                        data.push(self.get(c, x + offset[0], y + offset[1], z + offset[2]));
                    }
                }
            }
        }
        Volume3D::new(grid, self.channels(), data)
    }
}

pub(crate) fn crop_offset(dims: [usize; 3], target: [usize; 3]) -> [usize; 3] {
    [
        (dims[0] - target[0]) / 2,
        (dims[1] - target[1]) / 2,
        (dims[2] - target[2]) / 2,
    ]
}
