//! Keyframe-to-keyframe propagation of depth distributions through an
//! occupancy representation.
//!
//! A depth distribution along a ray becomes per-voxel occupancy
//! probabilities (voxels in front of the surface are free, the surface
//! voxel is occupied, voxels behind it are unknown at ½). Occupancy lives
//! in 3-D, so it can be resampled in another camera and turned back into a
//! depth distribution with a first-hit product.

use crate::error::{check_dims, Error, Result};
use crate::geometry::{DepthBinning, Intrinsics, Pose};
use crate::photometric::EDGE_SLACK;
use crate::volume::{normalize_ray, ProbabilityVolume};

/// Occupancy assigned to voxels with no source data.
pub const DEFAULT_OCCUPANCY: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVolume {
    width: usize,
    height: usize,
    binning: DepthBinning,
    occ: Vec<f64>,
}

impl OccupancyVolume {
    pub fn new(width: usize, height: usize, binning: &DepthBinning, occ: Vec<f64>) -> Result<Self> {
        if occ.len() != width * height * binning.k_count() {
            return Err(Error::DimensionMismatch(format!(
                "occupancy volume needs {} values, got {}",
                width * height * binning.k_count(),
                occ.len()
            )));
        }
        if let Some(bad) = occ.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange(format!("occupancy {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            binning: binning.clone(),
            occ,
        })
    }

    pub fn filled(width: usize, height: usize, binning: &DepthBinning, value: f64) -> Self {
        Self {
            width,
            height,
            binning: binning.clone(),
            occ: vec![value; width * height * binning.k_count()],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn binning(&self) -> &DepthBinning {
        &self.binning
    }

    pub fn values(&self) -> &[f64] {
        &self.occ
    }

    pub fn ray(&self, pixel: usize) -> &[f64] {
        let k = self.binning.k_count();
        &self.occ[pixel * k..(pixel + 1) * k]
    }

    #[inline]
    fn at(&self, x: usize, y: usize, k: usize) -> f64 {
        self.occ[(y * self.width + x) * self.binning.k_count() + k]
    }
}

/// `occ_k = Σ_j p_j · C(k, j)` with `C = 0` for `k < j`, `1` for `k = j`
/// and `½` for `k > j`.
pub fn depth_to_occupancy(vol: &ProbabilityVolume) -> OccupancyVolume {
    let k = vol.k_count();
    let mut occ = vec![0.0; vol.probs().len()];
    for (out, ray) in occ.chunks_exact_mut(k).zip(vol.rays()) {
        // running mass of bins strictly in front of k
        let mut in_front = 0.0;
        for (o, &p) in out.iter_mut().zip(ray) {
            *o = (p + 0.5 * in_front).min(1.0);
            in_front += p;
        }
    }
    OccupancyVolume {
        width: vol.width(),
        height: vol.height(),
        binning: vol.binning().clone(),
        occ,
    }
}

/// `p_k ∝ occ_k · Π_{j<k} (1 − occ_j)`, normalised per ray; rays with no
/// mass become uniform.
pub fn occupancy_to_depth(occ: &OccupancyVolume) -> ProbabilityVolume {
    let k = occ.binning.k_count();
    let mut probs = vec![0.0; occ.occ.len()];
    for (out, ray) in probs.chunks_exact_mut(k).zip(occ.occ.chunks_exact(k)) {
        let mut free = 1.0;
        for (p, &o) in out.iter_mut().zip(ray) {
            *p = free * o;
            free *= 1.0 - o;
        }
        normalize_ray(out);
    }
    ProbabilityVolume::from_weights(occ.width, occ.height, &occ.binning, probs)
        .expect("first-hit weights are valid")
}

/// Resamples `occ` (expressed in the old camera) into a new camera.
///
/// Each new voxel centre is transformed into the old camera; if it lands
/// inside the old image and depth range the old occupancy is sampled
/// bilinearly across pixels and nearest in log-depth, otherwise it gets
/// `default_occ`.
pub fn warp_occupancy(
    occ: &OccupancyVolume,
    new_from_old: &Pose,
    intrinsics: &Intrinsics,
    default_occ: f64,
) -> Result<OccupancyVolume> {
    check_dims("intrinsics", occ.dims(), intrinsics.dims())?;
    if !(0.0..=1.0).contains(&default_occ) {
        return Err(Error::OutOfRange(format!("default occupancy {default_occ}")));
    }
    let (w, h) = occ.dims();
    let binning = &occ.binning;
    let k_count = binning.k_count();
    let old_from_new = new_from_old.inverse();
    let rotation = old_from_new.rotation();
    let t = old_from_new.translation();
    let max_u = (w - 1) as f64;
    let max_v = (h - 1) as f64;

    let mut out = vec![default_occ; occ.occ.len()];
    for y in 0..h {
        for x in 0..w {
            let ray = rotation * intrinsics.ray(x as f64, y as f64);
            let base = (y * w + x) * k_count;
            for (k, &depth) in binning.midpoints().iter().enumerate() {
                let p = ray * depth + t;
                let Some((u, v, z)) = intrinsics.project_checked(&p) else {
                    continue;
                };
                if !(-EDGE_SLACK..=max_u + EDGE_SLACK).contains(&u)
                    || !(-EDGE_SLACK..=max_v + EDGE_SLACK).contains(&v)
                {
                    continue;
                }
                let (u, v) = (u.clamp(0.0, max_u), v.clamp(0.0, max_v));
                let Some(bin) = binning.bin_in_range(z) else {
                    continue;
                };
                let x0 = (u.floor() as usize).min(w - 1);
                let y0 = (v.floor() as usize).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let fx = u - x0 as f64;
                let fy = v - y0 as f64;
                let top = occ.at(x0, y0, bin) * (1.0 - fx) + occ.at(x1, y0, bin) * fx;
                let bottom = occ.at(x0, y1, bin) * (1.0 - fx) + occ.at(x1, y1, bin) * fx;
                out[base + k] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
            }
        }
    }
    Ok(OccupancyVolume {
        width: w,
        height: h,
        binning: binning.clone(),
        occ: out,
    })
}

/// Initial volume for a new keyframe: the network prior fused with the old
/// keyframe's distribution warped into the new camera.
pub fn propagate_keyframe(
    old_kf_vol: &ProbabilityVolume,
    network_prior: &ProbabilityVolume,
    new_from_old: &Pose,
    intrinsics: &Intrinsics,
) -> Result<ProbabilityVolume> {
    let warped = warp_occupancy(
        &depth_to_occupancy(old_kf_vol),
        new_from_old,
        intrinsics,
        DEFAULT_OCCUPANCY,
    )?;
    network_prior.fuse(&occupancy_to_depth(&warped))
}
