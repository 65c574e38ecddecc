//! Per-pixel discrete depth distributions ("probability volumes").
//!
//! Storage is row-major over pixels and bin-major within a pixel, so the
//! distribution of pixel `i` is the contiguous slice `probs[i*K..(i+1)*K]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::geometry::DepthBinning;
use crate::maps::DepthMap;

/// Tolerance on per-pixel sums enforced by [`ProbabilityVolume::validate`].
pub const SUM_TOL: f64 = 1e-9;

/// Floor applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    width: usize,
    height: usize,
    binning: DepthBinning,
    probs: Vec<f64>,
}

impl ProbabilityVolume {
    /// Every bin of every pixel set to `1/K`.
    pub fn uniform(width: usize, height: usize, binning: &DepthBinning) -> Self {
        let k = binning.k_count();
        Self {
            width,
            height,
            binning: binning.clone(),
            probs: vec![1.0 / k as f64; width * height * k],
        }
    }

    /// Wraps raw probabilities after checking the volume invariants.
    pub fn from_probs(
        width: usize,
        height: usize,
        binning: &DepthBinning,
        probs: Vec<f64>,
    ) -> Result<Self> {
        let expected = width * height * binning.k_count();
        if probs.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "volume {width}x{height}x{} needs {expected} values, got {}",
                binning.k_count(),
                probs.len()
            )));
        }
        let vol = Self {
            width,
            height,
            binning: binning.clone(),
            probs,
        };
        vol.validate()?;
        Ok(vol)
    }

    /// Builds a volume from unnormalised non-negative weights, normalising
    /// each ray. Rays with zero total mass become uniform.
    pub fn from_weights(
        width: usize,
        height: usize,
        binning: &DepthBinning,
        mut weights: Vec<f64>,
    ) -> Result<Self> {
        let k = binning.k_count();
        if weights.len() != width * height * k {
            return Err(Error::DimensionMismatch(format!(
                "volume {width}x{height}x{k} needs {} values, got {}",
                width * height * k,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFiniteValues("weights must be finite and non-negative".into()));
        }
        weights.chunks_exact_mut(k).for_each(normalize_ray);
        Ok(Self {
            width,
            height,
            binning: binning.clone(),
            probs: weights,
        })
    }

    /// Checks non-negativity and unit sums (within [`SUM_TOL`]).
    pub fn validate(&self) -> Result<()> {
        for (pixel, ray) in self.rays().enumerate() {
            if ray.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::NonFiniteValues(format!(
                    "pixel {pixel} has a negative or non-finite probability"
                )));
            }
            let sum: f64 = ray.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::UnnormalizedRay { pixel, sum });
            }
        }
        Ok(())
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

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn binning(&self) -> &DepthBinning {
        &self.binning
    }

    pub fn k_count(&self) -> usize {
        self.binning.k_count()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn ray(&self, pixel: usize) -> &[f64] {
        let k = self.k_count();
        &self.probs[pixel * k..(pixel + 1) * k]
    }

    #[inline]
    pub fn ray_at(&self, x: usize, y: usize) -> &[f64] {
        self.ray(y * self.width + x)
    }

    pub fn rays(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.k_count())
    }

    /// Overwrites one pixel's distribution, normalising it.
    pub fn set_ray(&mut self, pixel: usize, weights: &[f64]) -> Result<()> {
        let k = self.k_count();
        if weights.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "ray needs {k} bins, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFiniteValues(format!("ray for pixel {pixel}")));
        }
        let ray = &mut self.probs[pixel * k..(pixel + 1) * k];
        ray.copy_from_slice(weights);
        normalize_ray(ray);
        Ok(())
    }

    fn check_compatible(&self, other: &ProbabilityVolume) -> Result<()> {
        check_dims("fuse", self.dims(), other.dims())?;
        if self.binning != other.binning {
            return Err(Error::DimensionMismatch("volumes use different binnings".into()));
        }
        Ok(())
    }

    /// Renormalised elementwise product of two volumes.
    pub fn fuse(&self, other: &ProbabilityVolume) -> Result<ProbabilityVolume> {
        let mut out = self.clone();
        out.fuse_in_place(other)?;
        Ok(out)
    }

    /// In-place variant of [`ProbabilityVolume::fuse`].
    pub fn fuse_in_place(&mut self, other: &ProbabilityVolume) -> Result<()> {
        self.check_compatible(other)?;
        let k = self.k_count();
        for (ray, evidence) in self.probs.chunks_exact_mut(k).zip(other.probs.chunks_exact(k)) {
            for (p, q) in ray.iter_mut().zip(evidence) {
                *p *= q;
            }
            normalize_ray(ray);
        }
        Ok(())
    }

    /// Depth at the most probable bin's midpoint. Ties go to the nearer bin.
    pub fn argmax_depth(&self) -> DepthMap {
        let mids = self.binning.midpoints();
        let data = self.rays().map(|ray| mids[argmax(ray)]).collect();
        DepthMap::new(self.width, self.height, data).expect("dimensions agree")
    }

    /// Per-pixel expectation over bin midpoints.
    pub fn expected_depth(&self) -> DepthMap {
        let mids = self.binning.midpoints();
        let data = self
            .rays()
            .map(|ray| ray.iter().zip(mids).map(|(p, m)| p * m).sum())
            .collect();
        DepthMap::new(self.width, self.height, data).expect("dimensions agree")
    }

    /// Ordinal loss of this volume against ground truth, summed over valid
    /// ground-truth pixels.
    pub fn ordinal_loss(&self, gt_depth: &DepthMap) -> Result<f64> {
        check_dims("ordinal loss", self.dims(), gt_depth.dims())?;
        let mut total = 0.0;
        for (ray, &gt) in self.rays().zip(gt_depth.data()) {
            if DepthMap::is_valid_depth(gt) {
                total += ordinal_loss_ray(ray, self.binning.bin_of(gt));
            }
        }
        Ok(total)
    }
}

/// Ordinal loss of a single ray whose true bin is `truth`.
pub fn ordinal_loss_ray(ray: &[f64], truth: usize) -> f64 {
    let mut loss = 0.0;
    // head = P(k* < k) = Σ_{j<k} p_j, tail = P(k* ≥ k) = 1 − head.
    let mut head = 0.0;
    let total: f64 = ray.iter().sum();
    for (k, p) in ray.iter().enumerate() {
        let tail = total - head;
        if k <= truth {
            loss -= tail.max(LOG_FLOOR).ln();
        } else {
            loss -= head.max(LOG_FLOOR).ln();
        }
        head += p;
    }
    loss
}

/// Index of the largest entry; the first (nearest) one wins ties.
#[inline]
pub fn argmax(ray: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in ray.iter().enumerate().skip(1) {
        if p > ray[best] {
            best = k;
        }
    }
    best
}

/// Normalises a ray to unit sum; a ray with no mass becomes uniform.
pub(crate) fn normalize_ray(ray: &mut [f64]) {
    let sum: f64 = ray.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        let inv = 1.0 / sum;
        ray.iter_mut().for_each(|p| *p *= inv);
    } else {
        let u = 1.0 / ray.len() as f64;
        ray.iter_mut().for_each(|p| *p = u);
    }
}

/// Parameters of the synthetic prior used in place of network output.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    /// Standard deviation of the main bump, in bins.
    pub sigma_bins: f64,
    /// Mixture weight of the uniform component.
    pub uniform_floor: f64,
    /// Per-pixel probability of adding a spurious second mode.
    pub spurious_mode_prob: f64,
    /// Offset of the spurious mode from the true bin, in bins.
    pub spurious_offset_bins: i64,
    /// Share of the non-uniform mass given to the spurious mode when present.
    pub spurious_weight: f64,
    pub seed: u64,
}

impl Default for PriorModel {
    fn default() -> Self {
        Self {
            sigma_bins: 2.0,
            uniform_floor: 0.2,
            spurious_mode_prob: 0.3,
            spurious_offset_bins: 8,
            spurious_weight: 0.6,
            seed: 0,
        }
    }
}

impl PriorModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_bins > 0.0
            && (0.0..1.0).contains(&self.uniform_floor)
            && (0.0..=1.0).contains(&self.spurious_mode_prob)
            && (0.0..=1.0).contains(&self.spurious_weight);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior model {self:?}")))
        }
    }
}

fn add_bump(out: &mut [f64], center: usize, sigma: f64, weight: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut bump: Vec<f64> = (0..out.len())
        .map(|k| {
            let dk = k as f64 - center as f64;
            (-dk * dk * inv).exp()
        })
        .collect();
    // the centre term is exp(0) = 1, so the sum is never zero
    normalize_ray(&mut bump);
    for (o, b) in out.iter_mut().zip(bump) {
        *o += weight * b;
    }
}

/// Synthesises a network-like prior volume from ground-truth depth.
pub fn synth_prior(
    gt_depth: &DepthMap,
    model: &PriorModel,
    binning: &DepthBinning,
) -> Result<ProbabilityVolume> {
    model.validate()?;
    let k = binning.k_count();
    let (width, height) = gt_depth.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut probs = vec![0.0; width * height * k];
    for (ray, &gt) in probs.chunks_exact_mut(k).zip(gt_depth.data()) {
        let spurious = rng.random::<f64>() < model.spurious_mode_prob;
        if !DepthMap::is_valid_depth(gt) {
            ray.fill(1.0 / k as f64);
            continue;
        }
        let center = binning.bin_of(gt);
        if spurious && model.spurious_weight > 0.0 {
            let off = model.spurious_offset_bins;
            let up = center as i64 + off;
            let alt = if (0..k as i64).contains(&up) { up } else { center as i64 - off };
            let alt = alt.clamp(0, k as i64 - 1) as usize;
            add_bump(ray, center, model.sigma_bins, 1.0 - model.spurious_weight);
            add_bump(ray, alt, model.sigma_bins, model.spurious_weight);
        } else {
            add_bump(ray, center, model.sigma_bins, 1.0);
        }
        let floor = model.uniform_floor / k as f64;
        for p in ray.iter_mut() {
            *p = (1.0 - model.uniform_floor) * *p + floor;
        }
        normalize_ray(ray);
    }
    Ok(ProbabilityVolume {
        width,
        height,
        binning: binning.clone(),
        probs,
    })
}
