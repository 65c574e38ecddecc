//! Per-pixel maps: depth, surface normals and occlusion masks.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Dense depth in metres. Invalid pixels hold [`DepthMap::INVALID`]; any
/// non-finite or non-positive value is treated as invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub const INVALID: f64 = 0.0;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn is_valid_depth(d: f64) -> bool {
        d.is_finite() && d > 0.0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        Self::is_valid_depth(self.get(x, y))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| Self::is_valid_depth(d)).count()
    }
}

/// Unit surface normals in the camera frame. A zero vector marks a pixel
/// without a normal; it contributes nothing to the normal regulariser.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<Vector3<f64>>,
}

const NORMAL_TOL: f64 = 1e-6;

impl NormalMap {
    /// Validates that every non-zero vector has unit norm within 1e-6.
    pub fn new(width: usize, height: usize, data: Vec<Vector3<f64>>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "normal map {width}x{height} needs {} vectors, got {}",
                width * height,
                data.len()
            )));
        }
        for (pixel, n) in data.iter().enumerate() {
            let norm = n.norm();
            if !norm.is_finite() || (norm != 0.0 && (norm - 1.0).abs() > NORMAL_TOL) {
                return Err(Error::InvalidNormal { pixel, norm });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, normal: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            data: vec![normal.normalize(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[Vector3<f64>] {
        &self.data
    }
}

/// Binary regularisation mask: `true` keeps the pixel's pairwise terms,
/// `false` disables them (occlusion boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn all_ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn all_zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel occlusion-boundary probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProbMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl BoundaryProbMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "boundary map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange(format!("boundary probability {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_check_lengths() {
        assert!(DepthMap::new(2, 2, vec![1.0; 3]).is_err());
        assert!(OcclusionMask::new(2, 2, vec![true; 5]).is_err());
        assert!(NormalMap::new(1, 1, vec![Vector3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(NormalMap::new(1, 1, vec![Vector3::zeros()]).is_ok());
    }

    #[test]
    fn invalid_depths() {
        let d = DepthMap::new(4, 1, vec![1.0, 0.0, f64::NAN, -2.0]).unwrap();
        assert_eq!(d.valid_count(), 1);
        assert!(d.is_valid(0, 0));
        assert!(!d.is_valid(2, 0));
    }
}
