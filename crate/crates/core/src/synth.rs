//! Ray-cast synthetic scenes with exact depth and poses.
//!
//! The default scene is a slanted textured wall with a rotated textured box
//! in front of it. Texture is a solid (3-D) value noise evaluated at the
//! surface point, so it is view independent and every rendered frame is
//! photo-consistent with every other.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::dataset_io::{write_tum_sequence, SyntheticFrame};
use crate::error::Result;
use crate::geometry::{Intrinsics, Pose};
use crate::maps::DepthMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    /// Unit normal, world frame.
    pub normal: Vector3<f64>,
    /// Points satisfy `normal · X = offset`.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    /// World-from-box rotation.
    pub rotation: Matrix3<f64>,
}

impl OrientedBox {
    /// Ray parameter of the first hit in front of the origin, with the
    /// face normal (world frame).
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let rt = self.rotation.transpose();
        let o = rt * (origin - self.center);
        let d = rt * dir;
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > self.half_extents[a] {
                    return None;
                }
                continue;
            }
            let t1 = (-self.half_extents[a] - o[a]) / d[a];
            let t2 = (self.half_extents[a] - o[a]) / d[a];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if lo > t_near {
                t_near = lo;
                axis = a;
            }
            t_far = t_far.min(hi);
        }
        if t_near > t_far || t_near <= 0.0 {
            return None;
        }
        let mut n = Vector3::zeros();
        n[axis] = -d[axis].signum();
        Some((t_near, self.rotation * n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub wall: Plane,
    pub boxes: Vec<OrientedBox>,
    pub texture_seed: u64,
    /// Size of the finest texture cell in metres.
    pub texture_scale: f64,
}

impl Default for Scene {
    fn default() -> Self {
        let normal = Vector3::new(0.25, -0.12, -1.0).normalize();
        Self {
            wall: Plane {
                normal,
                offset: normal.dot(&Vector3::new(0.0, 0.0, 3.2)),
            },
            boxes: vec![OrientedBox {
                center: Vector3::new(-0.2, 0.15, 2.0),
                half_extents: Vector3::new(0.32, 0.28, 0.3),
                rotation: *Rotation3::from_euler_angles(0.15, 0.5, 0.0).matrix(),
            }],
            texture_seed: 17,
            texture_scale: 0.025,
        }
    }
}

struct Hit {
    depth_t: f64,
    point: Vector3<f64>,
    normal: Vector3<f64>,
}

impl Scene {
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        let denom = self.wall.normal.dot(dir);
        if denom.abs() > 1e-15 {
            let t = (self.wall.offset - self.wall.normal.dot(origin)) / denom;
            if t > 0.0 {
                best = Some((t, self.wall.normal));
            }
        }
        for b in &self.boxes {
            if let Some((t, n)) = b.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            }
        }
        best.map(|(t, normal)| Hit {
            depth_t: t,
            point: origin + dir * t,
            normal,
        })
    }

    fn shade(&self, hit: &Hit) -> [f64; 3] {
        let light = Vector3::new(-0.3, -0.6, -0.75).normalize();
        let lambert = 0.55 + 0.45 * hit.normal.dot(&light).abs();
        let p = hit.point / self.texture_scale;
        let coarse = value_noise(&(p * 0.25), self.texture_seed);
        let mid = value_noise(&(p * 0.5), self.texture_seed ^ 0x9e37);
        let fine = value_noise(&p, self.texture_seed ^ 0x51ed);
        let base = 0.45 * coarse + 0.35 * mid + 0.2 * fine;
        let tint = value_noise(&(p * 0.1), self.texture_seed ^ 0x7f4a);
        let rgb = [
            base * (0.8 + 0.4 * tint),
            base,
            base * (1.2 - 0.4 * tint),
        ];
        rgb.map(|c| (255.0 * lambert * c).clamp(0.0, 255.0))
    }

    /// Renders colour (2×2 supersampled) and exact z-depth at pixel centres
    /// for a camera-from-world pose.
    pub fn render(&self, pose: &Pose, intrinsics: &Intrinsics) -> (RgbImage, DepthMap) {
        let origin = pose.center();
        let to_world = pose.rotation().transpose();
        let (w, h) = intrinsics.dims();
        let depth = DepthMap::from_fn(w, h, |x, y| {
            let dir = to_world * intrinsics.ray(x as f64, y as f64);
            // dir has unit camera-z, so the ray parameter is the depth
            self.cast(&origin, &dir).map_or(DepthMap::INVALID, |hit| hit.depth_t)
        });
        const OFFSETS: [f64; 2] = [-0.25, 0.25];
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let mut acc = [0.0; 3];
            for oy in OFFSETS {
                for ox in OFFSETS {
                    let dir = to_world * intrinsics.ray(x as f64 + ox, y as f64 + oy);
                    if let Some(hit) = self.cast(&origin, &dir) {
                        let c = self.shade(&hit);
                        for i in 0..3 {
                            acc[i] += c[i] / 4.0;
                        }
                    }
                }
            }
            Rgb(acc.map(|c| c.round().clamp(0.0, 255.0) as u8))
        });
        (rgb, depth)
    }
}

fn hash3(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((y as u64).wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add((z as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h ^= h >> 31;
    h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth lattice value noise in `[0, 1]`.
fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let cell = p.map(f64::floor);
    let f = p - cell;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (cell.x as i64, cell.y as i64, cell.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wx = if dx == 1 { s.x } else { 1.0 - s.x };
                let wy = if dy == 1 { s.y } else { 1.0 - s.y };
                let wz = if dz == 1 { s.z } else { 1.0 - s.z };
                acc += wx * wy * wz * hash3(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

/// A rendered frame with its ground truth.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Camera-from-world.
    pub pose: Pose,
}

/// Camera path: per-frame translation of the camera centre and yaw
/// increment, starting at the world origin looking down +z.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: usize,
    pub step: Vector3<f64>,
    pub yaw_step: f64,
}

impl Trajectory {
    /// Short sideways sweep: every frame overlaps the first one.
    pub fn sweep(frames: usize) -> Self {
        Self {
            frames,
            step: Vector3::new(0.03, -0.004, 0.01),
            yaw_step: -0.004,
        }
    }

    /// Longer sweep that leaves the first view, so a second keyframe is
    /// created partway through.
    pub fn two_keyframe(frames: usize) -> Self {
        Self {
            frames,
            step: Vector3::new(0.07, -0.006, 0.015),
            yaw_step: -0.012,
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        (0..self.frames)
            .map(|i| {
                let center = self.step * i as f64;
                let yaw = self.yaw_step * i as f64;
                // world-from-camera rotation about the camera's y axis
                let world_from_camera =
                    Pose::from_axis_angle(&Vector3::y(), yaw, center);
                world_from_camera.inverse()
            })
            .collect()
    }
}

/// TUM Freiburg 1 calibration at the 256×192 working resolution.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::tum_freiburg1()
        .resized(256, 192)
        .expect("resized calibration is valid")
}

/// Renders every pose of `trajectory`.
pub fn render_sequence(scene: &Scene, trajectory: &Trajectory, intrinsics: &Intrinsics) -> Vec<RenderedFrame> {
    trajectory
        .poses()
        .into_iter()
        .map(|pose| {
            let (rgb, depth) = scene.render(&pose, intrinsics);
            RenderedFrame { rgb, depth, pose }
        })
        .collect()
}

/// Writes rendered frames as a TUM-layout dataset at 30 Hz timestamps.
pub fn write_dataset(
    dir: impl AsRef<std::path::Path>,
    frames: &[RenderedFrame],
    intrinsics: &Intrinsics,
) -> Result<()> {
    let records: Vec<SyntheticFrame<'_>> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| SyntheticFrame {
            timestamp: 1.0 + i as f64 / 30.0,
            rgb: &f.rgb,
            depth: Some(&f.depth),
            pose: f.pose,
        })
        .collect();
    write_tum_sequence(dir, &records, intrinsics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_is_camera_z_and_within_range() {
        let scene = Scene::default();
        let k = default_intrinsics();
        let pose = Pose::identity();
        let (_, depth) = scene.render(&pose, &k);
        assert_eq!(depth.valid_count(), 256 * 192);
        let (lo, hi) = depth
            .data()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        assert!(lo > 1.0 && hi < 6.0, "{lo}..{hi}");
        // wall pixel far from the box: backprojected point satisfies the plane equation
        let (x, y) = (250, 5);
        let p = k.backproject(x as f64, y as f64, depth.get(x, y));
        assert!((scene.wall.normal.dot(&p) - scene.wall.offset).abs() < 1e-9);
    }

    #[test]
    fn box_occludes_wall() {
        let scene = Scene::default();
        let k = default_intrinsics();
        let (_, depth) = scene.render(&Pose::identity(), &k);
        let center = k.project(&scene.boxes[0].center).unwrap();
        let d = depth.get(center.0 as usize, center.1 as usize);
        assert!(d < 2.0, "box front face should be nearer than its centre, got {d}");
    }

    #[test]
    fn rendering_is_deterministic_and_textured() {
        let scene = Scene::default();
        let k = default_intrinsics();
        let (a, _) = scene.render(&Pose::identity(), &k);
        let (b, _) = scene.render(&Pose::identity(), &k);
        assert_eq!(a, b);
        let g = crate::photometric::normalize_image(&a);
        let n = g.values().len() as f64;
        let var = g.values().iter().map(|v| v * v).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 1e-6);
    }
}
