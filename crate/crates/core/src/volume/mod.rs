//! Regular 3D scalar grids with physical metadata.
//!
//! Voxel data is stored channel-major with `x` varying fastest:
//! `data[((c * nz + z) * ny + y) * nx + x]`. This matches the on-disk order
//! of NIfTI-1, so IO is a straight copy.

mod io;
mod ops;
mod resample;

pub use io::{read_volume, write_volume, write_volume_as, DType, VolumeFormat};
pub use resample::Interpolation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis of a volume grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Sampling lattice: voxel counts, voxel size in mm and the physical
/// position of voxel (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Grid {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with the given dims and spacing and origin at zero.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Size(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Size(format!(
                "grid spacing must be finite and > 0, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Size(format!("grid origin must be finite, got {:?}", self.origin)));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Volume of a single voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Physical position (mm) of a voxel center.
    pub fn to_physical(&self, voxel: [f64; 3]) -> [f64; 3] {
        [
            self.origin[0] + voxel[0] * self.spacing[0],
            self.origin[1] + voxel[1] * self.spacing[1],
            self.origin[2] + voxel[2] * self.spacing[2],
        ]
    }

    /// Continuous voxel coordinate of a physical position.
    pub fn to_voxel(&self, point: [f64; 3]) -> [f64; 3] {
        [
            (point[0] - self.origin[0]) / self.spacing[0],
            (point[1] - self.origin[1]) / self.spacing[1],
            (point[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn same_lattice(&self, other: &Grid) -> bool {
        self == other
    }
}

/// A multi-channel scalar volume. Immutable after construction; every
/// constructor checks that values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    channels: usize,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: Grid, channels: usize, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if channels == 0 {
            return Err(Error::Size("channel count must be >= 1".into()));
        }
        let expected = grid.voxel_count() * channels;
        if data.len() != expected {
            return Err(Error::Size(format!(
                "data length {} does not match {} voxels x {} channels",
                data.len(),
                grid.voxel_count(),
                channels
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Volume3D {
            grid,
            channels,
            data,
        })
    }

    pub fn zeros(grid: Grid, channels: usize) -> Result<Self> {
        Self::filled(grid, channels, 0.0)
    }

    pub fn filled(grid: Grid, channels: usize, value: f64) -> Result<Self> {
        Self::new(grid, channels, vec![value; grid.voxel_count() * channels.max(1)])
    }

    /// Single-channel volume whose value at `(x, y, z)` is `f(x, y, z)`.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let [nx, ny, nz] = grid.dims;
        let mut data = Vec::with_capacity(grid.voxel_count());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, 1, data)
    }

    /// Stack single- or multi-channel volumes on a shared grid.
    pub fn stack(parts: &[&Volume3D]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Size("cannot stack zero volumes".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for part in parts {
            if part.grid != first.grid {
                return Err(Error::GridMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    part.grid, first.grid
                )));
            }
            data.extend_from_slice(&part.data);
            channels += part.channels;
        }
        Self::new(first.grid, channels, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.grid.origin
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copy of channel `c` as its own single-channel volume.
    pub fn channel_volume(&self, c: usize) -> Result<Volume3D> {
        if c >= self.channels {
            return Err(Error::Size(format!(
                "channel {c} out of range for {} channels",
                self.channels
            )));
        }
        Volume3D::new(self.grid, 1, self.channel(c).to_vec())
    }

    /// Channels `[start, end)` as a new volume.
    pub fn channel_range(&self, start: usize, end: usize) -> Result<Volume3D> {
        if start >= end || end > self.channels {
            return Err(Error::Size(format!(
                "channel range {start}..{end} invalid for {} channels",
                self.channels
            )));
        }
        let n = self.grid.voxel_count();
        Volume3D::new(self.grid, end - start, self.data[start * n..end * n].to_vec())
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.grid.voxel_count() + self.grid.linear_index(x, y, z)]
    }

    /// Apply `f` to every value, re-validating finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Volume3D> {
        Volume3D::new(self.grid, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Same values on a grid with a different origin/spacing but equal dims.
    pub fn with_grid(&self, grid: Grid) -> Result<Volume3D> {
        if grid.dims != self.grid.dims {
            return Err(Error::GridMismatch("with_grid requires identical dims".into()));
        }
        Volume3D::new(grid, self.channels, self.data.clone())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mirror along one axis (exact index permutation).
    pub fn flip(&self, axis: Axis) -> Volume3D {
        let [nx, ny, nz] = self.grid.dims;
        let n = self.grid.voxel_count();
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let (sx, sy, sz) = match axis {
                            Axis::X => (nx - 1 - x, y, z),
                            Axis::Y => (x, ny - 1 - y, z),
                            Axis::Z => (x, y, nz - 1 - z),
                        };
                        data[c * n + self.grid.linear_index(x, y, z)] =
                            self.data[c * n + self.grid.linear_index(sx, sy, sz)];
                    }
                }
            }
        }
        Volume3D {
            grid: self.grid,
            channels: self.channels,
            data,
        }
    }
}

/// Single-channel volume restricted to the values 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Volume3D);

impl BinaryMask {
    pub fn from_volume(volume: Volume3D) -> Result<Self> {
        if volume.channels != 1 {
            return Err(Error::Size(format!(
                "binary mask needs 1 channel, got {}",
                volume.channels
            )));
        }
        if let Some(index) = volume.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Parameter(format!(
                "mask value {} at index {index} is not 0 or 1",
                volume.data[index]
            )));
        }
        Ok(BinaryMask(volume))
    }

    pub fn empty(grid: Grid) -> Result<Self> {
        Ok(BinaryMask(Volume3D::zeros(grid, 1)?))
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        Ok(BinaryMask(Volume3D::from_fn(grid, |x, y, z| {
            if f(x, y, z) {
                1.0
            } else {
                0.0
            }
        })?))
    }

    pub fn from_bools(grid: Grid, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(BinaryMask(Volume3D::new(grid, 1, data)?))
    }

    /// Voxels where `volume >= threshold` (channel 0).
    pub fn threshold(volume: &Volume3D, threshold: f64) -> Result<Self> {
        let data = volume
            .channel(0)
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect();
        Ok(BinaryMask(Volume3D::new(*volume.grid(), 1, data)?))
    }

    pub fn grid(&self) -> &Grid {
        self.0.grid()
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.0.data[index] != 0.0
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        self.contains(self.0.grid.linear_index(x, y, z))
    }

    pub fn count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Linear indices of foreground voxels in scan order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
    }

    fn combine(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.grid() != other.grid() {
            return Err(Error::GridMismatch("mask grids differ".into()));
        }
        let bits: Vec<bool> = (0..self.grid().voxel_count())
            .map(|i| op(self.contains(i), other.contains(i)))
            .collect();
        BinaryMask::from_bools(*self.grid(), &bits)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.combine(other, |a, b| a && b)
    }

    pub fn flip(&self, axis: Axis) -> BinaryMask {
        BinaryMask(self.0.flip(axis))
    }

    /// Centroid in voxel coordinates, `None` for an empty mask.
    pub fn centroid_voxel(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for i in self.indices() {
            let c = self.grid().coords(i);
            for a in 0..3 {
                acc[a] += c[a] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| acc.map(|v| v / n as f64))
    }

    /// Inclusive voxel bounding box `(min, max)`.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for i in self.indices() {
            let c = self.grid().coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }
}
