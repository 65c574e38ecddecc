use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use nalgebra::{UnitQuaternion, Vector3};

use probfuse::dataset_io::{
    export_depth_png, load_boundary, load_depth_png, load_normals, load_prior, load_tum_sequence, pose_to_tum,
    save_boundary, save_normals, save_prior, write_tum_sequence, SyntheticFrame, PRIOR_MAGIC,
};
use probfuse::{BoundaryProbMap, DepthBinning, DepthMap, Intrinsics, NormalMap, Pose, ProbabilityVolume};

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn tiny_png(path: &Path) {
    RgbImage::from_pixel(4, 3, Rgb([10, 20, 30])).save(path).unwrap();
}

fn tum_fixture(dir: &Path, rgb_times: &[f64], pose_times: &[f64]) {
    fs::create_dir_all(dir.join("rgb")).unwrap();
    let mut rgb = String::from("# color images\n# file: 'x'\n# timestamp filename\n");
    for t in rgb_times {
        let name = format!("rgb/{t:.6}.png");
        tiny_png(&dir.join(&name));
        rgb.push_str(&format!("{t:.6} {name}\n"));
    }
    write(&dir.join("rgb.txt"), &rgb);
    let mut gt = String::from("# ground truth trajectory\n# timestamp tx ty tz qx qy qz qw\n");
    for (i, t) in pose_times.iter().enumerate() {
        gt.push_str(&format!("{t:.4} {} 0.5 -0.25 0 0 0 1\n", i as f64 * 0.1));
    }
    write(&dir.join("groundtruth.txt"), &gt);
}

#[test]
fn three_exact_records() {
    let tmp = tempfile::tempdir().unwrap();
    tum_fixture(tmp.path(), &[1.0, 1.1, 1.2], &[1.0, 1.1, 1.2]);
    let seq = load_tum_sequence(tmp.path(), 0.02).unwrap();
    assert_eq!(seq.len(), 3);
    assert!(seq.frames.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    assert!(seq.frames.iter().all(|f| f.depth_path.is_none()));
    // world-from-camera translation (0.1, 0.5, −0.25), identity rotation
    let centre = seq.frames[1].pose.center();
    assert!((centre - Vector3::new(0.1, 0.5, -0.25)).norm() < 1e-12);
    let t = seq.frames[1].pose.translation();
    assert!((t - Vector3::new(-0.1, -0.5, 0.25)).norm() < 1e-12);
    assert_eq!(seq.frames[0].stem(), "1.000000");
}

#[test]
fn frames_far_from_any_pose_are_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    tum_fixture(tmp.path(), &[1.0, 1.1, 1.2], &[1.0, 1.05, 1.25]);
    let seq = load_tum_sequence(tmp.path(), 0.02).unwrap();
    let kept: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
    assert_eq!(kept, vec![1.0]);
}

#[test]
fn loader_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let err = load_tum_sequence(tmp.path(), 0.02).unwrap_err();
    assert_eq!(err.kind(), "missing-file");
    tum_fixture(tmp.path(), &[1.0], &[5.0]);
    let err = load_tum_sequence(tmp.path(), 0.02).unwrap_err();
    assert_eq!(err.kind(), "empty-association");
    write(&tmp.path().join("groundtruth.txt"), "1.0 0 0 zero 0 0 0 1\n");
    let err = load_tum_sequence(tmp.path(), 0.02).unwrap_err();
    assert_eq!(err.kind(), "parse-error");
    assert!(err.to_string().contains("groundtruth.txt:1:"), "{err}");
}

#[test]
fn depth_association_and_camera_file() {
    let tmp = tempfile::tempdir().unwrap();
    tum_fixture(tmp.path(), &[1.0, 1.1], &[1.0, 1.1]);
    fs::create_dir_all(tmp.path().join("depth")).unwrap();
    let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_pixel(4, 3, Luma([5000]));
    depth.save(tmp.path().join("depth/a.png")).unwrap();
    write(&tmp.path().join("depth.txt"), "1.01 depth/a.png\n");
    write(&tmp.path().join("camera.txt"), "# fx fy cx cy w h\n4.0 4.0 1.5 1.0 4 3\n");
    let seq = load_tum_sequence(tmp.path(), 0.02).unwrap();
    assert!(seq.frames[0].depth_path.is_some());
    assert!(seq.frames[1].depth_path.is_none());
    assert_eq!(seq.intrinsics.unwrap().dims(), (4, 3));
    let d = load_depth_png(seq.frames[0].depth_path.as_ref().unwrap()).unwrap();
    assert!(d.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn depth_png_export_values() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.png");
    let depth = DepthMap::new(4, 1, vec![1.0, 0.0, 13.2, 0.00011]).unwrap();
    let clamped = export_depth_png(&depth, &path).unwrap();
    assert_eq!(clamped, 1);
    let img = image::open(&path).unwrap().into_luma16();
    let raw: Vec<u16> = img.pixels().map(|p| p[0]).collect();
    assert_eq!(raw, vec![5000, 0, 65535, 1]);
    let back = load_depth_png(&path).unwrap();
    assert_eq!(back.data()[0], 1.0);
    assert!(!back.is_valid(1, 0));
}

#[test]
fn file_round_trips_on_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let b = DepthBinning::new(0.2, 8.0, 5).unwrap();
    let weights: Vec<f64> = (0..6 * 5).map(|i| ((i * 37) % 11) as f64 + 0.5).collect();
    let vol = ProbabilityVolume::from_weights(3, 2, &b, weights).unwrap();
    let p = tmp.path().join("v.pvol");
    save_prior(&vol, &p).unwrap();
    let first = fs::read(&p).unwrap();
    assert_eq!(&first[..5], PRIOR_MAGIC);
    assert_eq!(first.len(), 5 + 4 * 3 + 16 + 6 * 5 * 4);
    let loaded = load_prior(&p).unwrap();
    loaded.validate().unwrap();
    assert_eq!(loaded.binning(), &b);
    save_prior(&loaded, &p).unwrap();
    assert_eq!(fs::read(&p).unwrap(), first);

    let n = NormalMap::filled(3, 2, Vector3::new(0.0, 0.6, -0.8));
    let np = tmp.path().join("n.nrml");
    save_normals(&n, &np).unwrap();
    let bytes = fs::read(&np).unwrap();
    save_normals(&load_normals(&np).unwrap(), &np).unwrap();
    assert_eq!(fs::read(&np).unwrap(), bytes);

    let bp = tmp.path().join("b.obnd");
    let bmap = BoundaryProbMap::new(3, 2, vec![0.0, 0.25, 0.375, 0.5, 0.75, 1.0]).unwrap();
    save_boundary(&bmap, &bp).unwrap();
    assert_eq!(load_boundary(&bp).unwrap(), bmap);
}

fn raw_prior(sum_of_first: f32) -> Vec<u8> {
    let mut bytes = PRIOR_MAGIC.to_vec();
    for v in [1u32, 1, 2] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&0.1f64.to_le_bytes());
    bytes.extend_from_slice(&12.0f64.to_le_bytes());
    bytes.extend_from_slice(&(sum_of_first - 0.5).to_le_bytes());
    bytes.extend_from_slice(&0.5f32.to_le_bytes());
    bytes
}

#[test]
fn prior_tolerance_truncation_and_magic() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("x.pvol");
    fs::write(&p, raw_prior(1.00005)).unwrap();
    let vol = load_prior(&p).unwrap();
    assert!((vol.ray(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    fs::write(&p, raw_prior(1.001)).unwrap();
    assert_eq!(load_prior(&p).unwrap_err().kind(), "unnormalized-ray");
    let mut truncated = raw_prior(1.0);
    truncated.pop();
    fs::write(&p, truncated).unwrap();
    assert_eq!(load_prior(&p).unwrap_err().kind(), "size-mismatch");
    let mut wrong = raw_prior(1.0);
    wrong[4] = b'9';
    fs::write(&p, wrong).unwrap();
    assert_eq!(load_prior(&p).unwrap_err().kind(), "bad-magic");
}

#[test]
fn written_sequences_load_back() {
    let tmp = tempfile::tempdir().unwrap();
    let intr = Intrinsics::new(5.0, 5.0, 2.0, 1.5, 5, 4).unwrap();
    let rgb = RgbImage::from_pixel(5, 4, Rgb([1, 2, 3]));
    let depth = DepthMap::filled(5, 4, 2.0);
    let poses: Vec<Pose> = (0..3)
        .map(|i| {
            let q = UnitQuaternion::from_euler_angles(0.1 * i as f64, -0.2, 0.05);
            Pose::from_quaternion(&q, Vector3::new(0.3, -0.1 * i as f64, 1.0))
        })
        .collect();
    let frames: Vec<SyntheticFrame<'_>> = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| SyntheticFrame {
            timestamp: 2.0 + i as f64 / 30.0,
            rgb: &rgb,
            depth: Some(&depth),
            pose: *pose,
        })
        .collect();
    write_tum_sequence(tmp.path(), &frames, &intr).unwrap();
    let seq = load_tum_sequence(tmp.path(), 0.02).unwrap();
    assert_eq!(seq.len(), 3);
    assert_eq!(seq.intrinsics.unwrap(), intr);
    for (rec, pose) in seq.frames.iter().zip(&poses) {
        let (t0, q0) = pose_to_tum(pose);
        let (t1, q1) = pose_to_tum(&rec.pose);
        for k in 0..3 {
            assert!((t0[k] - t1[k]).abs() < 1e-6);
        }
        let dot: f64 = q0.iter().zip(&q1).map(|(a, b)| a * b).sum();
        assert!(dot.abs() > 1.0 - 1e-9);
        assert!(rec.depth_path.is_some());
    }
}
