//! TUM RGB-D sequences and the binary interchange formats.
//!
//! # Binary layouts
//!
//! All integers and floats are little-endian.
//!
//! | file    | header                                                                | payload per pixel        |
//! |---------|-----------------------------------------------------------------------|--------------------------|
//! | `PVOL1` | magic (5 B), width u32, height u32, k_count u32, d_min f64, d_max f64 | `k_count` × f32, bin-major |
//! | `NRML1` | magic (5 B), width u32, height u32                                    | 3 × f32 (x, y, z)        |
//! | `OBND1` | magic (5 B), width u32, height u32                                    | 1 × f32 in `[0, 1]`      |
//!
//! Pixels are stored row-major.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{DepthBinning, Intrinsics, Pose};
use crate::maps::{BoundaryProbMap, DepthMap, NormalMap};
use crate::volume::ProbabilityVolume;

/// TUM depth PNG scale: stored value = depth in metres × 5000.
pub const TUM_DEPTH_SCALE: f64 = 5000.0;

pub const DEFAULT_ASSOCIATION_TOLERANCE: f64 = 0.02;

/// Per-ray sum deviation accepted (and corrected) when loading priors.
pub const PRIOR_SUM_TOL: f64 = 1e-4;

/// Norm deviation accepted (and corrected) when loading normals.
pub const NORMAL_NORM_TOL: f64 = 1e-4;

pub const PRIOR_MAGIC: &[u8; 5] = b"PVOL1";
pub const NORMALS_MAGIC: &[u8; 5] = b"NRML1";
pub const BOUNDARY_MAGIC: &[u8; 5] = b"OBND1";

/// One associated frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: Option<PathBuf>,
    /// Camera-from-world.
    pub pose: Pose,
}

impl FrameRecord {
    /// File stem of the RGB image, used to name per-frame outputs.
    pub fn stem(&self) -> String {
        self.rgb_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{:.6}", self.timestamp))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceIndex {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
    /// Calibration from an optional `camera.txt` (`fx fy cx cy width height`).
    pub intrinsics: Option<Intrinsics>,
}

impl SequenceIndex {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn parse_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                None
            } else {
                Some((i + 1, line.split_whitespace().map(str::to_string).collect()))
            }
        })
        .collect())
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("expected a number, found {field:?}"),
    })
}

/// `timestamp filename` lists (rgb.txt, depth.txt), sorted by time with
/// duplicate timestamps dropped.
fn read_file_list(path: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let root = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (line, fields) in parse_lines(path)? {
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected `timestamp filename`".into(),
            });
        }
        out.push((parse_f64(path, line, &fields[0])?, root.join(&fields[1])));
    }
    sort_dedup(&mut out);
    Ok(out)
}

fn sort_dedup<T>(v: &mut Vec<(f64, T)>) {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v.dedup_by(|a, b| a.0 == b.0);
}

/// Parses `tx ty tz qx qy qz qw` (world-from-camera) into a
/// camera-from-world pose.
pub fn pose_from_tum(t: [f64; 3], q: [f64; 4]) -> Result<Pose> {
    let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
    if quat.norm().is_nan() || quat.norm() <= 1e-12 {
        return Err(Error::InvalidPose(format!("degenerate quaternion {q:?}")));
    }
    let world_from_camera = Pose::from_quaternion(&UnitQuaternion::from_quaternion(quat), Vector3::from(t));
    Ok(world_from_camera.inverse())
}

/// Inverse of [`pose_from_tum`]: `([tx, ty, tz], [qx, qy, qz, qw])`.
pub fn pose_to_tum(camera_from_world: &Pose) -> ([f64; 3], [f64; 4]) {
    let world_from_camera = camera_from_world.inverse();
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*world_from_camera.rotation());
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    let t = world_from_camera.translation();
    ([t.x, t.y, t.z], [q.i, q.j, q.k, q.w])
}

fn read_groundtruth(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (line, fields) in parse_lines(path)? {
        if fields.len() < 8 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected `timestamp tx ty tz qx qy qz qw`".into(),
            });
        }
        let v: Vec<f64> = fields[..8]
            .iter()
            .map(|f| parse_f64(path, line, f))
            .collect::<Result<_>>()?;
        let pose = pose_from_tum([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]]).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        out.push((v[0], pose));
    }
    sort_dedup(&mut out);
    Ok(out)
}

/// Nearest entry of a time-sorted list within `tolerance` seconds.
fn nearest<T>(sorted: &[(f64, T)], t: f64, tolerance: f64) -> Option<&T> {
    let idx = sorted.partition_point(|(s, _)| *s < t);
    let candidates = [idx.checked_sub(1), Some(idx)];
    candidates
        .into_iter()
        .flatten()
        .filter_map(|i| sorted.get(i))
        .map(|(s, v)| ((s - t).abs(), v))
        .filter(|(dt, _)| *dt <= tolerance)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| v)
}

fn read_camera_file(path: &Path) -> Result<Intrinsics> {
    let lines = parse_lines(path)?;
    let (line, fields) = lines.first().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty camera file".into(),
    })?;
    if fields.len() < 6 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            msg: "expected `fx fy cx cy width height`".into(),
        });
    }
    let v: Vec<f64> = fields[..6]
        .iter()
        .map(|f| parse_f64(path, *line, f))
        .collect::<Result<_>>()?;
    Intrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
}

/// Reads a TUM RGB-D directory and associates every RGB frame with the
/// nearest ground-truth pose (and depth frame, when `depth.txt` exists)
/// within `association_tolerance` seconds. Frames without a pose are
/// skipped.
pub fn load_tum_sequence(dir_path: impl AsRef<Path>, association_tolerance: f64) -> Result<SequenceIndex> {
    let root = dir_path.as_ref();
    let rgb = read_file_list(&root.join("rgb.txt"))?;
    let poses = read_groundtruth(&root.join("groundtruth.txt"))?;
    let depth_list = root.join("depth.txt");
    let depths = if depth_list.exists() {
        read_file_list(&depth_list)?
    } else {
        Vec::new()
    };
    let camera = root.join("camera.txt");
    let intrinsics = if camera.exists() {
        Some(read_camera_file(&camera)?)
    } else {
        None
    };

    let frames: Vec<FrameRecord> = rgb
        .into_iter()
        .filter_map(|(timestamp, rgb_path)| {
            let pose = *nearest(&poses, timestamp, association_tolerance)?;
            Some(FrameRecord {
                timestamp,
                rgb_path,
                depth_path: nearest(&depths, timestamp, association_tolerance).cloned(),
                pose,
            })
        })
        .collect();
    if frames.is_empty() {
        return Err(Error::EmptyAssociation(association_tolerance));
    }
    Ok(SequenceIndex {
        root: root.to_path_buf(),
        frames,
        intrinsics,
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?)
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(open_image(path.as_ref())?.to_rgb8())
}

/// Reads a 16-bit TUM depth PNG (0 = invalid).
pub fn load_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let img = open_image(path.as_ref())?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            if p[0] == 0 {
                DepthMap::INVALID
            } else {
                p[0] as f64 / TUM_DEPTH_SCALE
            }
        })
        .collect();
    DepthMap::new(w, h, data)
}

/// Writes a 16-bit PNG at the TUM scale; invalid pixels become 0. Returns
/// the number of pixels clamped at 65535.
pub fn export_depth_png(depth: &DepthMap, path: impl AsRef<Path>) -> Result<usize> {
    let (w, h) = depth.dims();
    let mut clamped = 0;
    let data: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            if !DepthMap::is_valid_depth(d) {
                return 0;
            }
            let v = (d * TUM_DEPTH_SCALE).round();
            if v > u16::MAX as f64 {
                clamped += 1;
                u16::MAX
            } else {
                v as u16
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions");
    img.save(path.as_ref())?;
    if clamped > 0 {
        log::warn!("{clamped} depths clamped at 65535 in {}", path.as_ref().display());
    }
    Ok(clamped)
}

/// Area-averaging resample (box filter with fractional pixel coverage).
pub fn resample_rgb_area(src: &RgbImage, width: usize, height: usize) -> RgbImage {
    let (sw, sh) = (src.width() as usize, src.height() as usize);
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let spans = |n: usize, scale: f64, limit: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n)
            .map(|i| {
                let (a, b) = (i as f64 * scale, (i + 1) as f64 * scale);
                let mut cover = Vec::new();
                let mut j = a.floor() as usize;
                while (j as f64) < b && j < limit {
                    let lo = a.max(j as f64);
                    let hi = b.min((j + 1) as f64);
                    if hi > lo {
                        cover.push((j, hi - lo));
                    }
                    j += 1;
                }
                cover
            })
            .collect()
    };
    let xs = spans(width, sx, sw);
    let ys = spans(height, sy, sh);
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let mut acc = [0.0f64; 3];
        let mut total = 0.0;
        for &(yy, wy) in &ys[y as usize] {
            for &(xx, wx) in &xs[x as usize] {
                let p = src.get_pixel(xx as u32, yy as u32);
                let wgt = wx * wy;
                for c in 0..3 {
                    acc[c] += wgt * p[c] as f64;
                }
                total += wgt;
            }
        }
        image::Rgb(acc.map(|v| (v / total).round().clamp(0.0, 255.0) as u8))
    })
}

/// Depth resample that never mixes depths: each target pixel takes the
/// source pixel nearest its centre, or the nearest valid pixel within its
/// footprint when that one is invalid.
pub fn resample_depth_nearest_valid(src: &DepthMap, width: usize, height: usize) -> DepthMap {
    let (sw, sh) = src.dims();
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    DepthMap::from_fn(width, height, |x, y| {
        let cx = (x as f64 + 0.5) * sx - 0.5;
        let cy = (y as f64 + 0.5) * sy - 0.5;
        let nx = (cx.round().max(0.0) as usize).min(sw - 1);
        let ny = (cy.round().max(0.0) as usize).min(sh - 1);
        if src.is_valid(nx, ny) {
            return src.get(nx, ny);
        }
        let x0 = (x as f64 * sx).floor() as usize;
        let x1 = (((x + 1) as f64 * sx).ceil() as usize).min(sw);
        let y0 = (y as f64 * sy).floor() as usize;
        let y1 = (((y + 1) as f64 * sy).ceil() as usize).min(sh);
        let mut best = (f64::INFINITY, DepthMap::INVALID);
        for yy in y0..y1 {
            for xx in x0..x1 {
                if src.is_valid(xx, yy) {
                    let dist = (xx as f64 - cx).powi(2) + (yy as f64 - cy).powi(2);
                    if dist < best.0 {
                        best = (dist, src.get(xx, yy));
                    }
                }
            }
        }
        best.1
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::SizeMismatch {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Reads exactly `count` f32 values and requires nothing to follow.
    fn f32_payload(&mut self, count: usize) -> Result<Vec<f32>> {
        let expected = self.pos + count * 4;
        if self.bytes.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: self.bytes.len(),
            });
        }
        let payload = self.take(count * 4)?;
        Ok(payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn read_header<'a>(bytes: &'a [u8], magic: &[u8; 5]) -> Result<(Reader<'a>, usize, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let found = r.take(5).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(magic).into_owned(),
        found: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    Ok((r, w, h))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn push_header(out: &mut Vec<u8>, magic: &[u8; 5], w: usize, h: usize) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
}

pub fn encode_prior(vol: &ProbabilityVolume) -> Vec<u8> {
    let b = vol.binning();
    let mut out = Vec::with_capacity(33 + vol.probs().len() * 4);
    push_header(&mut out, PRIOR_MAGIC, vol.width(), vol.height());
    out.extend_from_slice(&(b.k_count() as u32).to_le_bytes());
    out.extend_from_slice(&b.d_min().to_le_bytes());
    out.extend_from_slice(&b.d_max().to_le_bytes());
    for &p in vol.probs() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

/// Parses a `PVOL1` buffer. Rays whose sum is off by at most
/// [`PRIOR_SUM_TOL`] are renormalised; anything worse is rejected.
pub fn decode_prior(bytes: &[u8]) -> Result<ProbabilityVolume> {
    let (mut r, w, h) = read_header(bytes, PRIOR_MAGIC)?;
    let k = r.u32()? as usize;
    let d_min = r.f64()?;
    let d_max = r.f64()?;
    let binning = DepthBinning::new(d_min, d_max, k)?;
    let raw = r.f32_payload(w * h * k)?;
    let mut probs: Vec<f64> = raw.into_iter().map(f64::from).collect();
    for (pixel, ray) in probs.chunks_exact_mut(k).enumerate() {
        if ray.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteValues(format!("prior ray at pixel {pixel}")));
        }
        if ray.iter().any(|&p| p < 0.0) {
            return Err(Error::OutOfRange(format!("negative probability at pixel {pixel}")));
        }
        let sum: f64 = ray.iter().sum();
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::UnnormalizedRay { pixel, sum });
        }
        ray.iter_mut().for_each(|p| *p /= sum);
    }
    ProbabilityVolume::from_probs(w, h, &binning, probs)
}

pub fn save_prior(vol: &ProbabilityVolume, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_prior(vol))
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    decode_prior(&read_file(path.as_ref())?)
}

const F32_UNIT_SLACK: f64 = 1e-6;

pub fn encode_normals(normals: &NormalMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + normals.data().len() * 12);
    push_header(&mut out, NORMALS_MAGIC, normals.width(), normals.height());
    for n in normals.data() {
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

/// Parses an `NRML1` buffer. Zero vectors mark missing normals; other
/// vectors must have unit norm within [`NORMAL_NORM_TOL`]. Vectors off by
/// more than single-precision rounding are renormalised, the rest are kept
/// as stored so that saving them again reproduces the file.
pub fn decode_normals(bytes: &[u8]) -> Result<NormalMap> {
    let (mut r, w, h) = read_header(bytes, NORMALS_MAGIC)?;
    let raw = r.f32_payload(w * h * 3)?;
    let mut data = Vec::with_capacity(w * h);
    for (pixel, c) in raw.chunks_exact(3).enumerate() {
        let n = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
        if !n.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValues(format!("normal at pixel {pixel}")));
        }
        let norm = n.norm();
        if norm == 0.0 || (norm - 1.0).abs() <= F32_UNIT_SLACK {
            data.push(n);
        } else if (norm - 1.0).abs() <= NORMAL_NORM_TOL {
            data.push(n / norm);
        } else {
            return Err(Error::InvalidNormal { pixel, norm });
        }
    }
    NormalMap::new(w, h, data)
}

pub fn save_normals(normals: &NormalMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_normals(normals))
}

pub fn load_normals(path: impl AsRef<Path>) -> Result<NormalMap> {
    decode_normals(&read_file(path.as_ref())?)
}

pub fn encode_boundary(map: &BoundaryProbMap) -> Vec<u8> {
    let (w, h) = map.dims();
    let mut out = Vec::with_capacity(13 + w * h * 4);
    push_header(&mut out, BOUNDARY_MAGIC, w, h);
    for &p in map.data() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn decode_boundary(bytes: &[u8]) -> Result<BoundaryProbMap> {
    let (mut r, w, h) = read_header(bytes, BOUNDARY_MAGIC)?;
    let raw = r.f32_payload(w * h)?;
    if raw.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteValues("boundary probabilities".into()));
    }
    BoundaryProbMap::new(w, h, raw.into_iter().map(f64::from).collect())
}

pub fn save_boundary(map: &BoundaryProbMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_boundary(map))
}

pub fn load_boundary(path: impl AsRef<Path>) -> Result<BoundaryProbMap> {
    decode_boundary(&read_file(path.as_ref())?)
}

/// A frame to be written by [`write_tum_sequence`].
pub struct SyntheticFrame<'a> {
    pub timestamp: f64,
    pub rgb: &'a RgbImage,
    pub depth: Option<&'a DepthMap>,
    /// Camera-from-world.
    pub pose: Pose,
}

/// Writes frames in the TUM directory layout (`rgb/`, `depth/`, `rgb.txt`,
/// `depth.txt`, `groundtruth.txt`) plus `camera.txt`.
pub fn write_tum_sequence(
    dir: impl AsRef<Path>,
    frames: &[SyntheticFrame<'_>],
    intrinsics: &Intrinsics,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("rgb"))?;
    fs::create_dir_all(dir.join("depth"))?;
    let mut rgb_list = String::from("# color images\n# timestamp filename\n");
    let mut depth_list = String::from("# depth maps\n# timestamp filename\n");
    let mut gt = String::from("# ground truth trajectory\n# timestamp tx ty tz qx qy qz qw\n");
    let mut seen = BTreeMap::new();
    for frame in frames {
        let name = format!("{:.6}", frame.timestamp);
        if seen.insert(name.clone(), ()).is_some() {
            return Err(Error::Config(format!("duplicate timestamp {name}")));
        }
        frame.rgb.save(dir.join("rgb").join(format!("{name}.png")))?;
        rgb_list.push_str(&format!("{name} rgb/{name}.png\n"));
        if let Some(depth) = frame.depth {
            export_depth_png(depth, dir.join("depth").join(format!("{name}.png")))?;
            depth_list.push_str(&format!("{name} depth/{name}.png\n"));
        }
        let (t, q) = pose_to_tum(&frame.pose);
        gt.push_str(&format!(
            "{name} {:.9} {:.9} {:.9} {:.12} {:.12} {:.12} {:.12}\n",
            t[0], t[1], t[2], q[0], q[1], q[2], q[3]
        ));
    }
    fs::write(dir.join("rgb.txt"), rgb_list)?;
    fs::write(dir.join("depth.txt"), depth_list)?;
    fs::write(dir.join("groundtruth.txt"), gt)?;
    fs::write(
        dir.join("camera.txt"),
        format!(
            "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
            intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy, intrinsics.width, intrinsics.height
        ),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    #[test]
    fn identity_quaternion() {
        let p = pose_from_tum([0.0; 3], [0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(*p.rotation(), Matrix3::identity());
        assert!(pose_from_tum([0.0; 3], [0.0; 4]).is_err());
    }

    #[test]
    fn tum_pose_round_trip() {
        let pose = Pose::from_axis_angle(&Vector3::new(0.2, 1.0, -0.3), 0.7, Vector3::new(0.5, -1.0, 2.0));
        let (t, q) = pose_to_tum(&pose);
        let back = pose_from_tum(t, q).unwrap();
        assert!((back.rotation() - pose.rotation()).amax() < 1e-12);
        assert!((back.translation() - pose.translation()).amax() < 1e-12);
        // the translation column of groundtruth.txt is the camera centre
        assert!((Vector3::from(t) - pose.center()).amax() < 1e-12);
    }

    #[test]
    fn nearest_respects_tolerance() {
        let list = vec![(1.0, 'a'), (2.0, 'b'), (3.0, 'c')];
        assert_eq!(nearest(&list, 2.01, 0.02), Some(&'b'));
        assert_eq!(nearest(&list, 1.95, 0.02), None);
        assert_eq!(nearest(&list, 0.99, 0.02), Some(&'a'));
        assert_eq!(nearest(&list, 3.5, 0.02), None);
    }

    #[test]
    fn area_resample_of_constant_image() {
        let img = RgbImage::from_pixel(640, 480, image::Rgb([10, 20, 30]));
        let out = resample_rgb_area(&img, 256, 192);
        assert_eq!(out.dimensions(), (256, 192));
        assert!(out.pixels().all(|p| p.0 == [10, 20, 30]));
    }

    #[test]
    fn area_resample_averages_blocks() {
        // 2x2 blocks → 1 pixel each
        let img = RgbImage::from_fn(4, 2, |x, _| image::Rgb([if x % 2 == 0 { 0 } else { 100 }; 3]));
        let out = resample_rgb_area(&img, 2, 1);
        assert!(out.pixels().all(|p| p.0 == [50; 3]));
    }

    #[test]
    fn depth_resample_never_mixes() {
        let src = DepthMap::from_fn(10, 10, |x, y| {
            if (x + y) % 3 == 0 {
                DepthMap::INVALID
            } else if x < 5 {
                1.0
            } else {
                3.0
            }
        });
        let out = resample_depth_nearest_valid(&src, 4, 4);
        assert!(out.data().iter().all(|&d| d == 1.0 || d == 3.0 || d == 0.0));
        assert!(out.valid_count() > 0);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let b = DepthBinning::new(0.1, 12.0, 4).unwrap();
        let bytes = encode_prior(&ProbabilityVolume::uniform(2, 2, &b));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_prior(&wrong), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_prior(&bytes[..bytes.len() - 1]), Err(Error::SizeMismatch { .. })));
        assert!(matches!(decode_prior(&bytes[..3]), Err(Error::BadMagic { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_prior(&long), Err(Error::SizeMismatch { .. })));
    }

    fn prior_bytes(ray: &[f32]) -> Vec<u8> {
        let mut out = Vec::new();
        push_header(&mut out, PRIOR_MAGIC, 1, 1);
        out.extend_from_slice(&(ray.len() as u32).to_le_bytes());
        out.extend_from_slice(&0.1f64.to_le_bytes());
        out.extend_from_slice(&12.0f64.to_le_bytes());
        for p in ray {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    #[test]
    fn prior_sum_tolerance() {
        let ok = decode_prior(&prior_bytes(&[0.50005, 0.5])).unwrap();
        assert!((ok.ray(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            decode_prior(&prior_bytes(&[0.6, 0.5])),
            Err(Error::UnnormalizedRay { .. })
        ));
        assert!(matches!(
            decode_prior(&prior_bytes(&[f32::NAN, 0.5])),
            Err(Error::NonFiniteValues(_))
        ));
    }

    #[test]
    fn normals_file_validation() {
        let mut bytes = Vec::new();
        push_header(&mut bytes, NORMALS_MAGIC, 2, 1);
        for v in [0.0f32, 0.0, -1.0, 0.0, 0.0, -2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_normals(&bytes), Err(Error::InvalidNormal { pixel: 1, .. })));
        let normals = NormalMap::filled(3, 2, Vector3::new(0.1, 0.2, -1.0));
        let back = decode_normals(&encode_normals(&normals)).unwrap();
        assert_eq!(encode_normals(&back), encode_normals(&normals));
    }

    #[test]
    fn boundary_round_trip_and_range() {
        let map = BoundaryProbMap::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_boundary(&map);
        assert_eq!(decode_boundary(&bytes).unwrap(), map);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_boundary(&bad), Err(Error::OutOfRange(_))));
    }
}
