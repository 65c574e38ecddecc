//! Pairwise regularisation energies on depth maps.
//!
//! The normal term penalises the component of the 3-D step between a pixel
//! and its right/lower neighbour along the pixel's surface normal; an
//! occlusion mask switches a pixel's two terms off. The total-variation
//! term is the smoothed (Charbonnier) baseline. Both return exact analytic
//! gradients with respect to every depth.

use nalgebra::Vector3;

use crate::error::{check_dims, Result};
use crate::geometry::Intrinsics;
use crate::maps::{BoundaryProbMap, DepthMap, NormalMap, OcclusionMask};

/// Boundary probability above which the regulariser is switched off.
pub const DEFAULT_BOUNDARY_THRESHOLD: f64 = 0.4;

/// Smoothing constant of the total-variation energy.
pub const TV_EPSILON: f64 = 1e-6;

/// `b_i = 0` where the boundary probability is strictly above `threshold`.
pub fn mask_from_boundary_prob(prob_map: &BoundaryProbMap, threshold: f64) -> OcclusionMask {
    let (w, h) = prob_map.dims();
    let data = prob_map.data().iter().map(|&p| p <= threshold).collect();
    OcclusionMask::new(w, h, data).expect("dimensions agree")
}

/// Normal-alignment energy and its gradient.
pub fn normal_energy_and_grad(
    depth: &DepthMap,
    normals: &NormalMap,
    mask: &OcclusionMask,
    intrinsics: &Intrinsics,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(depth, normals, mask, intrinsics)?;
    let mut grad = vec![0.0; depth.data().len()];
    let energy = normal_energy_into(depth.data(), normals, mask, intrinsics, 1.0, &mut grad);
    Ok((energy, grad))
}

pub(crate) fn check_inputs(
    depth: &DepthMap,
    normals: &NormalMap,
    mask: &OcclusionMask,
    intrinsics: &Intrinsics,
) -> Result<()> {
    check_dims("normals", depth.dims(), normals.dims())?;
    check_dims("occlusion mask", depth.dims(), mask.dims())?;
    check_dims("intrinsics", depth.dims(), intrinsics.dims())
}

/// Adds `scale · ∂E/∂d` into `grad` and returns `E` (unscaled).
pub(crate) fn normal_energy_into(
    depth: &[f64],
    normals: &NormalMap,
    mask: &OcclusionMask,
    intrinsics: &Intrinsics,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let (w, h) = normals.dims();
    let mut energy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.data()[i] {
                continue;
            }
            let n = normals.data()[i];
            let ni_ri = n.dot(&intrinsics.ray(x as f64, y as f64));
            let mut pair = |j: usize, rj: Vector3<f64>| {
                let nj_rj = n.dot(&rj);
                let e = ni_ri * depth[i] - nj_rj * depth[j];
                energy += e * e;
                grad[i] += scale * 2.0 * e * ni_ri;
                grad[j] -= scale * 2.0 * e * nj_rj;
            };
            if x + 1 < w {
                pair(i + 1, intrinsics.ray((x + 1) as f64, y as f64));
            }
            if y + 1 < h {
                pair(i + w, intrinsics.ray(x as f64, (y + 1) as f64));
            }
        }
    }
    energy
}

/// Smoothed total variation `Σ_i √(Δx² + Δy² + ε²)` and its gradient.
/// Missing neighbours at the right and bottom borders contribute a zero
/// difference.
pub fn tv_energy_and_grad(depth: &DepthMap) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; depth.data().len()];
    let energy = tv_energy_into(depth.data(), depth.width(), depth.height(), 1.0, &mut grad);
    (energy, grad)
}

pub(crate) fn tv_energy_into(
    depth: &[f64],
    w: usize,
    h: usize,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let eps2 = TV_EPSILON * TV_EPSILON;
    let mut energy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = if x + 1 < w { depth[i + 1] - depth[i] } else { 0.0 };
            let dy = if y + 1 < h { depth[i + w] - depth[i] } else { 0.0 };
            let s = (dx * dx + dy * dy + eps2).sqrt();
            energy += s;
            let gx = scale * dx / s;
            let gy = scale * dy / s;
            if x + 1 < w {
                grad[i + 1] += gx;
                grad[i] -= gx;
            }
            if y + 1 < h {
                grad[i + w] += gy;
                grad[i] -= gy;
            }
        }
    }
    energy
}

/// Normals estimated from a depth map by crossing the backprojected
/// right and down differences. Normals face the camera (`n·P < 0`). Pixels
/// whose neighbourhood contains invalid depth get a zero normal.
pub fn normals_from_depth(depth: &DepthMap, intrinsics: &Intrinsics) -> NormalMap {
    let (w, h) = depth.dims();
    let point = |x: usize, y: usize| {
        let d = depth.get(x, y);
        DepthMap::is_valid_depth(d).then(|| intrinsics.backproject(x as f64, y as f64, d))
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let normal = (|| {
                let p = point(x, y)?;
                let (xa, xb) = if x + 1 < w { (x, x + 1) } else { (x.checked_sub(1)?, x) };
                let (ya, yb) = if y + 1 < h { (y, y + 1) } else { (y.checked_sub(1)?, y) };
                let right = point(xb, y)? - point(xa, y)?;
                let down = point(x, yb)? - point(x, ya)?;
                let n = right.cross(&down);
                let norm = n.norm();
                if norm < 1e-300 {
                    return None;
                }
                let n = n / norm;
                Some(if n.dot(&p) > 0.0 { -n } else { n })
            })();
            data.push(normal.unwrap_or_else(Vector3::zeros));
        }
    }
    NormalMap::new(w, h, data).expect("normals are unit or zero")
}

/// Synthetic occlusion-boundary probabilities: 1 on both sides of any
/// 4-neighbour depth jump larger than `relative_jump` of the nearer depth,
/// 0 elsewhere. Invalid pixels count as boundaries.
pub fn boundary_prob_from_depth(depth: &DepthMap, relative_jump: f64) -> BoundaryProbMap {
    let (w, h) = depth.dims();
    let mut prob = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let a = depth.get(x, y);
            if !DepthMap::is_valid_depth(a) {
                prob[i] = 1.0;
                continue;
            }
            let mut mark = |j: usize| {
                let b = depth.data()[j];
                if !DepthMap::is_valid_depth(b) || (a - b).abs() > relative_jump * a.min(b) {
                    prob[i] = 1.0;
                    prob[j] = 1.0;
                }
            };
            if x + 1 < w {
                mark(i + 1);
            }
            if y + 1 < h {
                mark(i + w);
            }
        }
    }
    BoundaryProbMap::new(w, h, prob).expect("probabilities are 0 or 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intrinsics(w: usize, h: usize) -> Intrinsics {
        Intrinsics::new(10.0, 11.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    /// Depth of the plane n·X = offset along each pixel ray.
    fn plane_depth(k: &Intrinsics, n: Vector3<f64>, offset: f64) -> DepthMap {
        DepthMap::from_fn(k.width, k.height, |x, y| offset / n.dot(&k.ray(x as f64, y as f64)))
    }

    #[test]
    fn mask_threshold_is_strict() {
        let probs = BoundaryProbMap::new(3, 1, vec![0.0, 0.4, 0.41]).unwrap();
        let m = mask_from_boundary_prob(&probs, DEFAULT_BOUNDARY_THRESHOLD);
        assert_eq!(m.data(), &[true, true, false]);
        let ones = BoundaryProbMap::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(mask_from_boundary_prob(&ones, 0.4).count_ones(), 0);
        let zeros = BoundaryProbMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(mask_from_boundary_prob(&zeros, 0.4).count_ones(), 4);
        assert!(BoundaryProbMap::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn plane_with_true_normals_has_zero_energy() {
        let k = intrinsics(12, 9);
        let n = Vector3::new(0.3, -0.2, -1.0).normalize();
        let d = plane_depth(&k, n, -2.0);
        assert!(d.data().iter().all(|&v| v > 0.0));
        let normals = NormalMap::filled(12, 9, n);
        let (e, g) = normal_energy_and_grad(&d, &normals, &OcclusionMask::all_ones(12, 9), &k).unwrap();
        assert!(e < 1e-10);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn zero_mask_gives_zero_energy() {
        let k = intrinsics(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = DepthMap::from_fn(6, 5, |_, _| 1.0 + rng.random::<f64>());
        let normals = NormalMap::filled(6, 5, Vector3::new(0.1, 0.2, -1.0));
        let (e, g) = normal_energy_and_grad(&d, &normals, &OcclusionMask::all_zeros(6, 5), &k).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masking_a_pixel_removes_exactly_its_terms() {
        let (w, h) = (5, 4);
        let k = intrinsics(w, h);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = DepthMap::from_fn(w, h, |_, _| 1.0 + rng.random::<f64>());
        let normals = NormalMap::new(
            w,
            h,
            (0..w * h)
                .map(|_| Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, -1.0).normalize())
                .collect(),
        )
        .unwrap();
        let full = OcclusionMask::all_ones(w, h);
        let (e_full, _) = normal_energy_and_grad(&d, &normals, &full, &k).unwrap();
        let (x, y) = (2, 1);
        let i = y * w + x;
        let mut masked = full.clone();
        masked.data_mut()[i] = false;
        let (e_masked, _) = normal_energy_and_grad(&d, &normals, &masked, &k).unwrap();
        // the pixel's own two terms, evaluated directly
        let n = normals.get(x, y);
        let p = |x: usize, y: usize| k.backproject(x as f64, y as f64, d.get(x, y));
        let own = n.dot(&(p(x, y) - p(x + 1, y))).powi(2) + n.dot(&(p(x, y) - p(x, y + 1))).powi(2);
        assert!(((e_full - e_masked) - own).abs() < 1e-12);
    }

    #[test]
    fn tv_constant_map() {
        let d = DepthMap::filled(7, 5, 2.5);
        let (e, g) = tv_energy_and_grad(&d);
        assert!((e - 35.0 * TV_EPSILON).abs() < 1e-18);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tv_linear_ramp() {
        // d = 1 + 0.3 x on a single row: W−1 interior terms of |slope|.
        let w = 10;
        let d = DepthMap::from_fn(w, 1, |x, _| 1.0 + 0.3 * x as f64);
        let (e, _) = tv_energy_and_grad(&d);
        let expected = 0.3 * (w - 1) as f64;
        assert!((e - expected).abs() < w as f64 * TV_EPSILON);
    }

    #[test]
    fn frontoparallel_normals() {
        let k = intrinsics(8, 6);
        let n = normals_from_depth(&DepthMap::filled(8, 6, 3.0), &k);
        for v in n.data() {
            assert!((v - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn slanted_plane_normals() {
        let k = intrinsics(10, 8);
        let truth = Vector3::new(0.4, 0.25, -1.0).normalize();
        let d = plane_depth(&k, truth, -3.0);
        let n = normals_from_depth(&d, &k);
        for v in n.data() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
            assert!((v - truth).norm() < 1e-4);
        }
    }

    #[test]
    fn boundary_detection_marks_both_sides() {
        let d = DepthMap::from_fn(6, 1, |x, _| if x < 3 { 1.0 } else { 2.0 });
        let b = boundary_prob_from_depth(&d, 0.1);
        assert_eq!(b.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
