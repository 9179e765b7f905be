use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Grid, Volume3D};

/// Dense f64 tensor with logical shape `[batch, channel, x, y, z]`.
///
/// Memory order is batch, channel, z, y, x (x fastest), so each
/// `(batch, channel)` slab has the same layout as a [`Volume3D`] channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub(crate) fn from_raw(shape: [usize; 5], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// Batch of volumes sharing one grid and channel count.
    pub fn from_volumes(volumes: &[&Volume3D]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let [nx, ny, nz] = first.dims();
        let mut data = Vec::with_capacity(volumes.len() * first.data().len());
        for v in volumes {
            if v.dims() != first.dims() || v.channels() != first.channels() {
                return Err(Error::Shape("batch volumes differ in shape".into()));
            }
            data.extend_from_slice(v.data());
        }
        Ok(Tensor::from_raw([volumes.len(), first.channels(), nx, ny, nz], data))
    }

    pub fn from_masks(masks: &[&BinaryMask]) -> Result<Self> {
        let vols: Vec<&Volume3D> = masks.iter().map(|m| m.volume()).collect();
        Self::from_volumes(&vols)
    }

    /// Batch item `b` as a volume on `grid`.
    pub fn to_volume(&self, b: usize, grid: Grid) -> Result<Volume3D> {
        if grid.dims != [self.shape[2], self.shape[3], self.shape[4]] {
            return Err(Error::Shape("grid dims differ from tensor spatial dims".into()));
        }
        let per = self.item_len();
        Volume3D::new(grid, self.shape[1], self.data[b * per..(b + 1) * per].to_vec())
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    fn item_len(&self) -> usize {
        self.shape[1] * self.spatial_len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Contiguous values of one `(batch, channel)` slab.
    pub fn slab(&self, b: usize, c: usize) -> &[f64] {
        let s = self.spatial_len();
        let start = (b * self.shape[1] + c) * s;
        &self.data[start..start + s]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mirror along x (the left/right axis).
    pub fn flip_x(&self) -> Tensor {
        let nx = self.shape[2];
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(nx) {
            row.reverse();
        }
        Tensor::from_raw(self.shape, out)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        Tensor::from_raw(self.shape, self.data.iter().map(|v| v * k).collect())
    }
}
