//! Plane-sweep photometric cost volume over the keyframe's depth bins.

use image::RgbImage;

use crate::error::{check_dims, Error, Result};
use crate::geometry::{DepthBinning, Intrinsics, Pose};
use crate::volume::{normalize_ray, ProbabilityVolume};

/// Single-channel floating point image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "gray image {width}x{height} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValues("gray image".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample; the caller guarantees `0 ≤ u ≤ W−1`, `0 ≤ v ≤ H−1`.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Luminance conversion followed by global zero-mean, unit-variance
/// normalisation. A constant image maps to all zeros.
pub fn normalize_image(rgb: &RgbImage) -> GrayImage {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut values: Vec<f64> = rgb
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        values.fill(0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    GrayImage {
        width: w,
        height: h,
        values,
    }
}

/// Accumulated squared patch errors per pixel and depth bin, with the number
/// of reference frames that produced a valid sample for each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoCostVolume {
    width: usize,
    height: usize,
    binning: DepthBinning,
    cost: Vec<f64>,
    sample_count: Vec<u32>,
}

/// Projections this close outside the image (round-off on border pixels)
/// still count as inside.
pub(crate) const EDGE_SLACK: f64 = 1e-9;

const PATCH: [(isize, isize); 9] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (0, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl PhotoCostVolume {
    pub fn new(width: usize, height: usize, binning: &DepthBinning) -> Self {
        let n = width * height * binning.k_count();
        Self {
            width,
            height,
            binning: binning.clone(),
            cost: vec![0.0; n],
            sample_count: vec![0; n],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn binning(&self) -> &DepthBinning {
        &self.binning
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn sample_count(&self) -> &[u32] {
        &self.sample_count
    }

    /// Builds a volume from raw entries (mostly useful for tests and IO).
    pub fn from_parts(
        width: usize,
        height: usize,
        binning: &DepthBinning,
        cost: Vec<f64>,
        sample_count: Vec<u32>,
    ) -> Result<Self> {
        let n = width * height * binning.k_count();
        if cost.len() != n || sample_count.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "cost volume needs {n} entries, got {} costs and {} counts",
                cost.len(),
                sample_count.len()
            )));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::NonFiniteValues("costs must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            binning: binning.clone(),
            cost,
            sample_count,
        })
    }

    /// Adds another volume's entries (costs and counts) to this one.
    pub fn add(&mut self, other: &PhotoCostVolume) -> Result<()> {
        check_dims("cost volume add", self.dims(), other.dims())?;
        if self.binning != other.binning {
            return Err(Error::DimensionMismatch("cost volumes use different binnings".into()));
        }
        for (c, o) in self.cost.iter_mut().zip(&other.cost) {
            *c += o;
        }
        for (c, o) in self.sample_count.iter_mut().zip(&other.sample_count) {
            *c += o;
        }
        Ok(())
    }

    /// Warps every keyframe pixel into `reference` at every bin midpoint and
    /// adds the 3×3 SSD between the keyframe patch and the bilinearly
    /// sampled reference patch. Samples whose patch leaves the reference
    /// image, or that land behind the reference camera, are skipped.
    ///
    /// `ref_from_kf` maps keyframe camera coordinates to reference camera
    /// coordinates.
    pub fn accumulate(
        &mut self,
        keyframe: &GrayImage,
        reference: &GrayImage,
        ref_from_kf: &Pose,
        intrinsics: &Intrinsics,
    ) -> Result<()> {
        check_dims("keyframe", self.dims(), keyframe.dims())?;
        check_dims("reference", self.dims(), reference.dims())?;
        check_dims("intrinsics", self.dims(), intrinsics.dims())?;

        let (w, h) = (self.width, self.height);
        let k_count = self.binning.k_count();
        let rotation = ref_from_kf.rotation();
        let t = ref_from_kf.translation();
        let max_u = (w - 1) as f64;
        let max_v = (h - 1) as f64;

        let mut kf_patch = [0.0; 9];
        let mut offsets = [(0.0, 0.0); 9];
        for y in 0..h {
            for x in 0..w {
                // Border pixels replicate the edge of the keyframe.
                for (slot, &(dx, dy)) in PATCH.iter().enumerate() {
                    let px = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let py = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    kf_patch[slot] = keyframe.get(px, py);
                    offsets[slot] = (px as f64 - x as f64, py as f64 - y as f64);
                }
                let ray = rotation * intrinsics.ray(x as f64, y as f64);
                let base = (y * w + x) * k_count;
                for (k, &depth) in self.binning.midpoints().iter().enumerate() {
                    let p = ray * depth + t;
                    let Some((u, v, _)) = intrinsics.project_checked(&p) else {
                        continue;
                    };
                    let in_bounds = offsets.iter().all(|&(ox, oy)| {
                        let (su, sv) = (u + ox, v + oy);
                        su >= -EDGE_SLACK && su <= max_u + EDGE_SLACK && sv >= -EDGE_SLACK && sv <= max_v + EDGE_SLACK
                    });
                    if !in_bounds {
                        continue;
                    }
                    let mut ssd = 0.0;
                    for (slot, &(ox, oy)) in offsets.iter().enumerate() {
                        let (su, sv) = ((u + ox).clamp(0.0, max_u), (v + oy).clamp(0.0, max_v));
                        let r = kf_patch[slot] - reference.sample_bilinear(su, sv);
                        ssd += r * r;
                    }
                    self.cost[base + k] += ssd;
                    self.sample_count[base + k] += 1;
                }
            }
        }
        Ok(())
    }

    /// Converts mean costs into a per-pixel depth distribution.
    pub fn to_probability(&self, conversion: CostConversion) -> ProbabilityVolume {
        let k = self.binning.k_count();
        let mut probs = vec![0.0; self.cost.len()];
        let mut mean = vec![0.0; k];
        for ((out, cost), count) in probs
            .chunks_exact_mut(k)
            .zip(self.cost.chunks_exact(k))
            .zip(self.sample_count.chunks_exact(k))
        {
            mean_costs(cost, count, &mut mean);
            if count.iter().all(|&c| c == 0) {
                out.fill(1.0 / k as f64);
                continue;
            }
            let max = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = mean.iter().cloned().fold(f64::INFINITY, f64::min);
            match conversion {
                CostConversion::ShiftLinear => {
                    let eps = 1e-6 * (max - min + 1e-12);
                    for (o, c) in out.iter_mut().zip(&mean) {
                        *o = max - c + eps;
                    }
                }
                CostConversion::Softmax { temperature } => {
                    for (o, c) in out.iter_mut().zip(&mean) {
                        *o = (-(c - min) / temperature).exp();
                    }
                }
            }
            normalize_ray(out);
        }
        ProbabilityVolume::from_weights(self.width, self.height, &self.binning, probs)
            .expect("conversion yields valid weights")
    }
}

/// Mean cost per bin. Bins that no frame observed take the average of the
/// observed bins so they neither win nor lose the ray.
fn mean_costs(cost: &[f64], count: &[u32], mean: &mut [f64]) {
    let mut observed_sum = 0.0;
    let mut observed = 0usize;
    for ((m, &c), &n) in mean.iter_mut().zip(cost).zip(count) {
        *m = c / n.max(1) as f64;
        if n > 0 {
            observed_sum += *m;
            observed += 1;
        }
    }
    if observed > 0 && observed < mean.len() {
        let fill = observed_sum / observed as f64;
        for (m, &n) in mean.iter_mut().zip(count) {
            if n == 0 {
                *m = fill;
            }
        }
    }
}

/// How mean photometric costs become probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum CostConversion {
    /// `p_k ∝ max_j c̄_j − c̄_k + ε`.
    #[default]
    ShiftLinear,
    /// `p_k ∝ exp(−c̄_k / temperature)`.
    Softmax { temperature: f64 },
}


/// Functional form of [`PhotoCostVolume::accumulate`].
pub fn accumulate_cost(
    mut cost_vol: PhotoCostVolume,
    keyframe: &GrayImage,
    reference: &GrayImage,
    ref_from_kf: &Pose,
    intrinsics: &Intrinsics,
) -> Result<PhotoCostVolume> {
    cost_vol.accumulate(keyframe, reference, ref_from_kf, intrinsics)?;
    Ok(cost_vol)
}

pub fn cost_to_probability(cost_vol: &PhotoCostVolume, conversion: CostConversion) -> ProbabilityVolume {
    cost_vol.to_probability(conversion)
}
