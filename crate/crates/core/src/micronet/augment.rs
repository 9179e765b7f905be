use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Axis, BinaryMask, Interpolation, Volume3D};

/// Ranges for the random in-plane (axial) transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Maximum shift as a fraction of the in-plane extent.
    pub translation: f64,
    /// Maximum relative change of scale.
    pub scaling: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rotation_deg: 7.5,
            translation: 0.05,
            scaling: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            rotation_deg: 0.0,
            translation: 0.0,
            scaling: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && self.rotation_deg >= 0.0
            && self.translation >= 0.0
            && (0.0..1.0).contains(&self.scaling);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("augmentation ranges invalid: {self:?}")))
        }
    }
}

/// A concrete in-plane transform: optional left/right flip followed by a
/// rotation, isotropic in-plane scaling and shift about the grid center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InPlaneTransform {
    pub flip: bool,
    pub angle_deg: f64,
    /// Shift as a fraction of the in-plane extent along x and y.
    pub shift: [f64; 2],
    pub scale: f64,
}

impl InPlaneTransform {
    pub fn identity() -> Self {
        InPlaneTransform {
            flip: false,
            angle_deg: 0.0,
            shift: [0.0; 2],
            scale: 1.0,
        }
    }

    pub fn rotation(angle_deg: f64) -> Self {
        InPlaneTransform {
            angle_deg,
            ..Self::identity()
        }
    }

    /// Draws flip, angle, shift x, shift y and scale in that order, always
    /// consuming five values.
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let flip = rng.random::<f64>() < cfg.flip_prob;
        let mut sym = |r: f64| (2.0 * rng.random::<f64>() - 1.0) * r;
        let angle_deg = sym(cfg.rotation_deg);
        let shift = [sym(cfg.translation), sym(cfg.translation)];
        let scale = 1.0 + sym(cfg.scaling);
        InPlaneTransform {
            flip,
            angle_deg,
            shift,
            scale,
        }
    }

    fn is_rigid_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.shift == [0.0; 2] && self.scale == 1.0
    }

    fn resample(&self, v: &Volume3D, mode: Interpolation) -> Result<Volume3D> {
        let v = if self.flip { v.flip(Axis::X) } else { v.clone() };
        if self.is_rigid_identity() {
            return Ok(v);
        }
        let g = *v.grid();
        let [nx, ny, nz] = g.dims;
        let c = g.to_physical([(nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0, (nz - 1) as f64 / 2.0]);
        let extent = [nx as f64 * g.spacing[0], ny as f64 * g.spacing[1]];
        let t = [self.shift[0] * extent[0], self.shift[1] * extent[1]];
        let (s, cs) = self.angle_deg.to_radians().sin_cos();
        let k = 1.0 / self.scale;
        // Output point p reads the source at c + R(-θ)(p - c - t) / scale.
        v.resample_mapped(&g, mode, 0.0, |p| {
            let dx = p[0] - c[0] - t[0];
            let dy = p[1] - c[1] - t[1];
            [c[0] + k * (cs * dx + s * dy), c[1] + k * (-s * dx + cs * dy), p[2]]
        })
    }

    /// Image (trilinear) and mask (nearest) under the same transform.
    pub fn apply(&self, input: &Volume3D, target: &BinaryMask) -> Result<(Volume3D, BinaryMask)> {
        if !input.grid().same_lattice(target.grid()) {
            return Err(Error::GridMismatch("augmentation input and target grids differ".into()));
        }
        let image = self.resample(input, Interpolation::Trilinear)?;
        let mask = BinaryMask::from_volume(self.resample(target.volume(), Interpolation::Nearest)?)?;
        Ok((image, mask))
    }

    pub fn apply_image(&self, input: &Volume3D) -> Result<Volume3D> {
        self.resample(input, Interpolation::Trilinear)
    }
}

/// Random joint augmentation of a fused input and its target mask.
pub fn augment(
    input: &Volume3D,
    target: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Volume3D, BinaryMask)> {
    InPlaneTransform::sample(cfg, rng).apply(input, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::with_spacing([32, 32, 4], [0.5, 0.5, 3.6]).unwrap()
    }

    fn smooth(g: Grid) -> Volume3D {
        Volume3D::from_fn(g, |x, y, z| {
            let (u, v) = (x as f64 / 31.0, y as f64 / 31.0);
            (3.0 * u).sin() * (2.0 * v).cos() + 0.1 * z as f64
        })
        .unwrap()
    }

    fn blob(g: Grid, c: [usize; 2], r: usize) -> BinaryMask {
        BinaryMask::from_fn(g, |x, y, _| {
            let (dx, dy) = (x as isize - c[0] as isize, y as isize - c[1] as isize);
            (dx * dx + dy * dy) as usize <= r * r
        })
        .unwrap()
    }

    #[test]
    fn zero_ranges_are_identity() {
        let g = grid();
        let (v, m) = (smooth(g), blob(g, [16, 16], 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = augment(&v, &m, &AugmentConfig::none(), &mut rng).unwrap();
        assert_eq!(a, v);
        assert_eq!(b, m);
    }

    #[test]
    fn double_flip_is_identity() {
        let g = grid();
        let (v, m) = (smooth(g), blob(g, [10, 20], 3));
        let t = InPlaneTransform {
            flip: true,
            ..InPlaneTransform::identity()
        };
        let (a, b) = t.apply(&v, &m).unwrap();
        assert_ne!(b, m);
        let (a2, b2) = t.apply(&a, &b).unwrap();
        assert_eq!(a2, v);
        assert_eq!(b2, m);
    }

    #[test]
    fn rotation_round_trip_on_interior() {
        let g = grid();
        let v = smooth(g);
        let there = InPlaneTransform::rotation(7.5).apply_image(&v).unwrap();
        let back = InPlaneTransform::rotation(-7.5).apply_image(&there).unwrap();
        for z in 0..4 {
            for y in 6..26 {
                for x in 6..26 {
                    assert!((back.get(0, x, y, z) - v.get(0, x, y, z)).abs() < 1e-2);
                }
            }
        }
    }

    #[test]
    fn rotation_direction_is_counter_clockwise() {
        let g = Grid::with_spacing([33, 33, 1], [1.0, 1.0, 1.0]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, _| x == 26 && y == 16).unwrap();
        let t = InPlaneTransform::rotation(90.0);
        let (_, r) = t.apply(&Volume3D::zeros(g, 1).unwrap(), &m).unwrap();
        assert!(r.at(16, 26, 0));
        assert_eq!(r.count(), 1);
    }

    #[test]
    fn interior_lesion_survives_random_transforms() {
        let g = grid();
        let (v, m) = (smooth(g), blob(g, [16, 15], 3));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (_, b) = augment(&v, &m, &AugmentConfig::default(), &mut rng).unwrap();
            let ratio = b.count() as f64 / m.count() as f64;
            assert!(ratio > 0.6 && ratio < 1.5, "ratio {ratio}");
        }
    }
}
