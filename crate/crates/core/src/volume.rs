//! Dense 3D grids, overlap metrics and volume measurement.
//!
//! Every grid is linearized row-major with `x` varying fastest:
//! `index = x + dx * (y + dy * z)`. Voxel `(x, y, z)` has its center at
//! `(x + 0.5, y + 0.5, z + 0.5)` in continuous grid coordinates, so the grid
//! occupies `[0, dx] x [0, dy] x [0, dz]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::invalid(format!(
                "grid dims must be positive, got ({x}, {y}, {z})"
            )));
        }
        Ok(Self { x, y, z })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.x * self.y * self.z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.x * (y + self.y * z)
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.x, self.y, self.z)
    }

    fn check_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch {
                left: self.as_tuple(),
                right: other.as_tuple(),
            });
        }
        Ok(())
    }
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3D {
    dims: Dims,
    data: Vec<f32>,
    voxel_volume: f64,
}

impl Image3D {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::with_voxel_volume(dims, data, 1.0)
    }

    pub fn with_voxel_volume(dims: Dims, data: Vec<f32>, voxel_volume: f64) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image intensities"));
        }
        if !(voxel_volume.is_finite() && voxel_volume > 0.0) {
            return Err(Error::invalid(format!(
                "voxel volume must be > 0, got {voxel_volume}"
            )));
        }
        Ok(Self {
            dims,
            data,
            voxel_volume,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
            voxel_volume: 1.0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_volume
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Multiplies every intensity by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::with_voxel_volume(
            self.dims,
            self.data.iter().map(|v| v * factor).collect(),
            self.voxel_volume,
        )
    }
}

/// Binary voxel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3D {
    dims: Dims,
    data: Vec<u8>,
}

impl Mask3D {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    data.push(u8::from(f(x, y, z)));
                }
            }
        }
        Self { dims, data }
    }

    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0; dims.len()],
        }
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![1; dims.len()],
        }
    }

    /// Center-sampled digitization of a sphere: a voxel belongs to it iff its
    /// center lies within `radius` of `center`.
    pub fn sphere(dims: Dims, center: [f64; 3], radius: f64) -> Self {
        let r2 = radius * radius;
        Self::from_fn(dims, |x, y, z| {
            let dx = x as f64 + 0.5 - center[0];
            let dy = y as f64 + 0.5 - center[1];
            let dz = z as f64 + 0.5 - center[2];
            dx * dx + dy * dy + dz * dz <= r2
        })
    }

    /// Voxels with intensity strictly above `threshold`.
    pub fn threshold(image: &Image3D, threshold: f64) -> Self {
        Self {
            dims: image.dims(),
            data: image
                .data()
                .iter()
                .map(|&v| u8::from(f64::from(v) > threshold))
                .collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.dims.index(x, y, z)] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// True when every voxel set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask3D) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapParams {
    /// Penalty on false positives.
    pub alpha: f64,
    /// Penalty on false negatives.
    pub beta: f64,
    pub smooth: f64,
}

impl OverlapParams {
    pub const DEFAULT_SMOOTH: f64 = 1e-6;

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            smooth: Self::DEFAULT_SMOOTH,
        }
    }

    pub fn with_smooth(mut self, smooth: f64) -> Self {
        self.smooth = smooth;
        self
    }
}

/// Confusion counts of a prediction against a reference mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(pred: &Mask3D, truth: &Mask3D) -> Result<Self> {
        pred.dims.check_same(&truth.dims)?;
        let mut c = Confusion::default();
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    pub fn tversky(&self, params: &OverlapParams) -> f64 {
        let tp = self.tp as f64;
        (tp + params.smooth)
            / (tp + params.alpha * self.fp as f64 + params.beta * self.fn_ as f64 + params.smooth)
    }
}

pub fn volume(mask: &Mask3D, voxel_volume: f64) -> f64 {
    mask.count() as f64 * voxel_volume
}

/// Dice overlap. Two empty masks agree perfectly (1.0).
pub fn dice(a: &Mask3D, b: &Mask3D) -> Result<f64> {
    let c = Confusion::of(a, b)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * c.tp as f64 / denom as f64)
}

/// `(TP + s) / (TP + alpha*FP + beta*FN + s)`.
pub fn tversky_index(pred: &Mask3D, truth: &Mask3D, params: &OverlapParams) -> Result<f64> {
    Ok(Confusion::of(pred, truth)?.tversky(params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_mask(dims: Dims, origin: (usize, usize, usize), side: usize) -> Mask3D {
        Mask3D::from_fn(dims, |x, y, z| {
            (origin.0..origin.0 + side).contains(&x)
                && (origin.1..origin.1 + side).contains(&y)
                && (origin.2..origin.2 + side).contains(&z)
        })
    }

    #[test]
    fn volume_of_trivial_masks() {
        assert_eq!(volume(&Mask3D::empty(Dims::cube(4).unwrap()), 1.0), 0.0);
        assert_eq!(volume(&Mask3D::full(Dims::cube(2).unwrap()), 1.0), 8.0);
        assert_eq!(volume(&Mask3D::full(Dims::cube(2).unwrap()), 0.5), 4.0);
    }

    #[test]
    fn sphere_matches_brute_force_count() {
        let dims = Dims::cube(32).unwrap();
        let mut oracle = 0usize;
        for i in 0..32 {
            for j in 0..32 {
                for k in 0..32 {
                    let d = |v: usize| v as f64 + 0.5 - 16.0;
                    if d(i).powi(2) + d(j).powi(2) + d(k).powi(2) <= 25.0 {
                        oracle += 1;
                    }
                }
            }
        }
        let m = Mask3D::sphere(dims, [16.0, 16.0, 16.0], 5.0);
        assert_eq!(m.count(), oracle);
        // Frozen from the loop above; guards the voxel-center convention.
        assert_eq!(oracle, 552);
    }

    #[test]
    fn dice_cases() {
        let dims = Dims::cube(6).unwrap();
        let a = cube_mask(dims, (0, 0, 0), 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let far = cube_mask(dims, (4, 4, 4), 2);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        // shift by one along x: overlap is a 1x2x2 slab
        let b = cube_mask(dims, (1, 0, 0), 2);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(
            dice(&Mask3D::empty(dims), &Mask3D::empty(dims)).unwrap(),
            1.0
        );
        assert_eq!(dice(&a, &Mask3D::empty(dims)).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Mask3D::empty(Dims::cube(2).unwrap());
        let b = Mask3D::empty(Dims::cube(3).unwrap());
        assert!(matches!(dice(&a, &b), Err(Error::DimensionMismatch { .. })));
        let p = OverlapParams::new(0.5, 0.5);
        assert!(tversky_index(&a, &b, &p).is_err());
    }

    #[test]
    fn tversky_direct_evaluation() {
        // TP = 4, FP = 2, FN = 0
        let dims = Dims::new(8, 1, 1).unwrap();
        let truth = Mask3D::new(dims, vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
        let pred = Mask3D::new(dims, vec![1, 1, 1, 1, 1, 1, 0, 0]).unwrap();
        let t = tversky_index(
            &pred,
            &truth,
            &OverlapParams::new(0.2, 0.8).with_smooth(0.0),
        )
        .unwrap();
        assert!((t - 4.0 / 4.4).abs() < 1e-12);
        assert!((t - 0.9091).abs() < 1e-4);

        let same = tversky_index(
            &truth,
            &truth,
            &OverlapParams::new(0.9, 0.1).with_smooth(0.0),
        )
        .unwrap();
        assert_eq!(same, 1.0);
    }

    #[test]
    fn smaller_fp_penalty_scores_higher_when_only_fp() {
        let dims = Dims::new(8, 1, 1).unwrap();
        let truth = Mask3D::new(dims, vec![1, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        let pred = Mask3D::new(dims, vec![1, 1, 1, 1, 1, 0, 0, 0]).unwrap();
        let lax = tversky_index(&pred, &truth, &OverlapParams::new(0.2, 0.8)).unwrap();
        let even = tversky_index(&pred, &truth, &OverlapParams::new(0.5, 0.5)).unwrap();
        assert!(lax > even);
    }

    #[test]
    fn rejects_invalid_grids() {
        let dims = Dims::cube(2).unwrap();
        assert!(Mask3D::new(dims, vec![0; 7]).is_err());
        assert!(Mask3D::new(dims, vec![2; 8]).is_err());
        assert!(Image3D::new(dims, vec![0.0; 9]).is_err());
        let mut data = vec![0.0; 8];
        data[3] = f32::NAN;
        assert!(matches!(Image3D::new(dims, data), Err(Error::NonFinite(_))));
        assert!(Dims::new(0, 1, 1).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let dims = Dims::new(3, 1, 1).unwrap();
        let img = Image3D::new(dims, vec![0.5, 1.0, 1.5]).unwrap();
        assert_eq!(Mask3D::threshold(&img, 1.0).data(), &[0, 0, 1]);
    }
}
