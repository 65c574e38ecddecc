use nalgebra::{UnitQuaternion, Vector3};
use proptest::collection::vec;
use proptest::prelude::*;

use probfuse::dataset_io::{
    decode_boundary, decode_normals, decode_prior, encode_boundary, encode_normals, encode_prior,
};
use probfuse::kde::SmoothedRay;
use probfuse::photometric::{CostConversion, PhotoCostVolume};
use probfuse::regularizer::{normal_energy_and_grad, tv_energy_and_grad};
use probfuse::volume::{argmax, ordinal_loss_ray};
use probfuse::warp::{depth_to_occupancy, occupancy_to_depth};
use probfuse::{
    evaluate, relative_pose, BoundaryProbMap, DepthBinning, DepthMap, Intrinsics, NormalMap, OcclusionMask, Pose,
    ProbabilityVolume,
};

const K: usize = 16;

fn binning() -> DepthBinning {
    DepthBinning::new(0.1, 12.0, K).unwrap()
}

fn ray_weights() -> impl Strategy<Value = Vec<f64>> {
    vec(0.0..1.0f64, K).prop_filter("needs mass", |w| w.iter().sum::<f64>() > 1e-3)
}

fn volume(pixels: usize) -> impl Strategy<Value = ProbabilityVolume> {
    vec(ray_weights(), pixels).prop_map(move |rays| {
        ProbabilityVolume::from_weights(pixels, 1, &binning(), rays.concat()).unwrap()
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec(-3.0..3.0f64, 3), vec(-2.0..2.0f64, 3)).prop_map(|(r, t)| {
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(r[0], r[1], r[2]));
        Pose::from_quaternion(&q, Vector3::new(t[0], t[1], t[2]))
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bin_midpoint_within_half_log_step(d in 0.1..12.0f64) {
        let b = DepthBinning::default();
        let m = b.midpoints()[b.bin_of(d)];
        prop_assert!((m.ln() - d.ln()).abs() <= 0.5 * b.log_step() + 1e-12);
    }

    #[test]
    fn project_inverts_backproject(u in -50.0..700.0f64, v in -50.0..500.0f64, d in 0.1..12.0f64) {
        let intr = Intrinsics::tum_freiburg1();
        let (pu, pv, pd) = intr.project(&intr.backproject(u, v, d)).unwrap();
        prop_assert!((pu - u).abs() < 1e-10 && (pv - v).abs() < 1e-10 && (pd - d).abs() < 1e-10);
    }

    #[test]
    fn relative_pose_to_self_is_identity(p in pose()) {
        let r = relative_pose(&p, &p);
        prop_assert!((r.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!(r.translation().norm() < 1e-12);
    }

    #[test]
    fn fuse_with_uniform_is_identity(v in volume(4)) {
        let u = ProbabilityVolume::uniform(4, 1, &binning());
        prop_assert!(max_abs_diff(v.fuse(&u).unwrap().probs(), v.probs()) <= 1e-12);
    }

    #[test]
    fn fuse_commutes_and_associates(a in volume(3), b in volume(3), c in volume(3)) {
        let ab = a.fuse(&b).unwrap();
        prop_assert!(max_abs_diff(ab.probs(), b.fuse(&a).unwrap().probs()) <= 1e-12);
        let left = ab.fuse(&c).unwrap();
        let right = a.fuse(&b.fuse(&c).unwrap()).unwrap();
        prop_assert!(max_abs_diff(left.probs(), right.probs()) <= 1e-12);
        left.validate().unwrap();
    }

    #[test]
    fn delta_dominates_fusion(v in volume(1), bin in 0..K) {
        prop_assume!(v.ray(0)[bin] > 0.0);
        let mut one_hot = vec![0.0; K];
        one_hot[bin] = 1.0;
        let delta = ProbabilityVolume::from_probs(1, 1, &binning(), one_hot).unwrap();
        prop_assert_eq!(argmax(v.fuse(&delta).unwrap().ray(0)), bin);
    }

    #[test]
    fn ordinal_loss_is_nonnegative(v in volume(1), truth in 0..K) {
        prop_assert!(ordinal_loss_ray(v.ray(0), truth) >= 0.0);
    }

    #[test]
    fn ordinal_loss_vanishes_only_at_truth(bin in 0..K, truth in 0..K) {
        let mut one_hot = vec![0.0; K];
        one_hot[bin] = 1.0;
        let loss = ordinal_loss_ray(&one_hot, truth);
        if bin == truth {
            prop_assert!(loss.abs() < 1e-12);
        } else {
            prop_assert!(loss > 1.0);
        }
    }

    #[test]
    fn cheapest_bin_is_most_probable(costs in vec(0.0..50.0f64, K), temperature in 0.5..20.0f64) {
        let b = binning();
        let counts = vec![1u32; K];
        let vol = PhotoCostVolume::from_parts(1, 1, &b, costs.clone(), counts).unwrap();
        let cheapest = costs
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap()
            .0;
        for conversion in [CostConversion::ShiftLinear, CostConversion::Softmax { temperature }] {
            let p = vol.to_probability(conversion);
            p.validate().unwrap();
            prop_assert_eq!(argmax(p.ray(0)), cheapest);
            // decreasing map: a lower cost never gets a lower probability
            for i in 0..K {
                for j in 0..K {
                    if costs[i] < costs[j] {
                        prop_assert!(p.ray(0)[i] >= p.ray(0)[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn kde_is_nonnegative_and_linear(w in ray_weights(), d in -1.0..13.0f64, scale in 0.1..10.0f64) {
        let b = binning();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let f = SmoothedRay::new(&w, b.midpoints(), 0.1).pdf_value(d);
        let g = SmoothedRay::new(&scaled, b.midpoints(), 0.1).pdf_value(d);
        prop_assert!(f >= 0.0);
        prop_assert!((g - scale * f).abs() <= 1e-12 * g.abs().max(1e-300));
    }

    #[test]
    fn regularizer_energies_are_nonnegative(depths in vec(0.5..5.0f64, 36), raw in vec(-1.0..1.0f64, 108)) {
        let intr = Intrinsics::new(8.0, 8.0, 2.5, 2.5, 6, 6).unwrap();
        let depth = DepthMap::new(6, 6, depths).unwrap();
        let normals: Vec<Vector3<f64>> = raw
            .chunks(3)
            .map(|c| Vector3::new(c[0], c[1], c[2] + 2.0).normalize())
            .collect();
        let normals = NormalMap::new(6, 6, normals).unwrap();
        let (e, _) = normal_energy_and_grad(&depth, &normals, &OcclusionMask::all_ones(6, 6), &intr).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(tv_energy_and_grad(&depth).0 >= 0.0);
    }

    #[test]
    fn occupancy_matches_brute_force_marginal(v in volume(1)) {
        let occ = depth_to_occupancy(&v);
        let p = v.ray(0);
        for k in 0..K {
            let brute: f64 = (0..K)
                .map(|j| {
                    let c = match k.cmp(&j) {
                        std::cmp::Ordering::Less => 0.0,
                        std::cmp::Ordering::Equal => 1.0,
                        std::cmp::Ordering::Greater => 0.5,
                    };
                    p[j] * c
                })
                .sum();
            prop_assert!((occ.ray(0)[k] - brute).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&occ.ray(0)[k]));
        }
    }

    // Consecutive occupancies differ by p[k+1] − p[k]/2, so a ray is
    // non-decreasing exactly when no bin holds more than twice its successor.
    #[test]
    fn occupancy_monotonicity_characterisation(v in volume(1)) {
        let occ = depth_to_occupancy(&v);
        let (o, p) = (occ.ray(0), v.ray(0));
        for k in 0..K - 1 {
            prop_assert!((o[k + 1] - o[k] - (p[k + 1] - 0.5 * p[k])).abs() < 1e-12);
        }
        let slowly_decaying = (0..K - 1).all(|k| p[k + 1] >= 0.5 * p[k]);
        let monotone = o.windows(2).all(|w| w[1] >= w[0] - 1e-15);
        if slowly_decaying {
            prop_assert!(monotone);
        }
    }

    #[test]
    fn delta_round_trips_through_occupancy(bin in 0..K) {
        let mut one_hot = vec![0.0; K];
        one_hot[bin] = 1.0;
        let v = ProbabilityVolume::from_probs(1, 1, &binning(), one_hot.clone()).unwrap();
        let back = occupancy_to_depth(&depth_to_occupancy(&v));
        prop_assert!(max_abs_diff(back.probs(), &one_hot) <= 1e-12);
    }

    #[test]
    fn prior_file_round_trip_is_bit_identical(v in volume(6)) {
        let bytes = encode_prior(&v);
        let loaded = decode_prior(&bytes).unwrap();
        loaded.validate().unwrap();
        prop_assert_eq!(encode_prior(&loaded), bytes);
    }

    #[test]
    fn normals_and_boundary_round_trip(raw in vec(-1.0..1.0f64, 18), probs in vec(0.0..=1.0f64, 6)) {
        let normals: Vec<Vector3<f64>> = raw
            .chunks(3)
            .map(|c| Vector3::new(c[0], c[1], c[2] + 2.0).normalize())
            .collect();
        let n = NormalMap::new(3, 2, normals).unwrap();
        let bytes = encode_normals(&n);
        prop_assert_eq!(encode_normals(&decode_normals(&bytes).unwrap()), bytes);
        let b = BoundaryProbMap::new(3, 2, probs).unwrap();
        let bytes = encode_boundary(&b);
        prop_assert_eq!(encode_boundary(&decode_boundary(&bytes).unwrap()), bytes);
    }

    #[test]
    fn rmse_dominates_mean_error(pairs in vec((0.2..10.0f64, 0.2..10.0f64), 1..64)) {
        let n = pairs.len();
        let pred = DepthMap::new(n, 1, pairs.iter().map(|p| p.0).collect()).unwrap();
        let gt = DepthMap::new(n, 1, pairs.iter().map(|p| p.1).collect()).unwrap();
        let r = evaluate(&pred, &gt).unwrap();
        let mean_abs: f64 = pairs.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / n as f64;
        prop_assert!(r.rmse * r.rmse >= mean_abs * mean_abs - 1e-12);
        let same = evaluate(&gt, &gt).unwrap();
        prop_assert_eq!((same.l1_rel, same.l2_rel, same.rmse), (0.0, 0.0, 0.0));
        if pairs.iter().any(|(p, g)| p != g) {
            prop_assert!(r.l1_rel > 0.0 && r.l2_rel > 0.0 && r.rmse > 0.0);
        }
    }
}

#[test]
fn occupancy_is_not_monotone_for_sharply_decaying_rays() {
    let b = DepthBinning::new(0.1, 12.0, 2).unwrap();
    let v = ProbabilityVolume::from_probs(1, 1, &b, vec![0.8, 0.2]).unwrap();
    let occ = depth_to_occupancy(&v);
    assert!((occ.ray(0)[0] - 0.8).abs() < 1e-15);
    assert!((occ.ray(0)[1] - 0.6).abs() < 1e-15);
}

#[test]
fn accumulation_is_order_independent() {
    use probfuse::synth::{default_intrinsics, render_sequence, Scene, Trajectory};
    use probfuse::{normalize_image, GrayImage};

    let intr = default_intrinsics().resized(64, 48).unwrap();
    let frames = render_sequence(&Scene::default(), &Trajectory::sweep(3), &intr);
    let grays: Vec<GrayImage> = frames.iter().map(|f| normalize_image(&f.rgb)).collect();
    let b = binning();
    let run = |order: &[usize]| {
        let mut cost = PhotoCostVolume::new(64, 48, &b);
        for &i in order {
            let pose = relative_pose(&frames[0].pose, &frames[i].pose);
            cost.accumulate(&grays[0], &grays[i], &pose, &intr).unwrap();
        }
        cost
    };
    let a = run(&[1, 2]);
    let c = run(&[2, 1]);
    assert_eq!(a.sample_count(), c.sample_count());
    assert!(max_abs_diff(a.cost(), c.cost()) <= 1e-12 * a.cost().iter().cloned().fold(1.0, f64::max));
}
