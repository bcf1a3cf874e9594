mod common;

use anchorloc::eval::{angular_error, default_probes, evaluate, FrameLabel, MetricsAccumulator, PROBE_DEPTH};
use anchorloc::{Error, Pixel2D, Position3D};
use nalgebra::Vector3;
use proptest::prelude::*;

fn label(target_id: u32, n_visible: usize) -> FrameLabel {
    FrameLabel { target_id, n_visible }
}

/// Two-pass mean and population standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn perfect_estimates_score_zero() {
    let truth = vec![Position3D::new(1.0, 2.0, 1.7), Position3D::new(-1.0, 0.5, 1.6)];
    let initials: Vec<Position3D> = truth.iter().map(|t| t + Vector3::new(0.1, 0.0, 0.0)).collect();
    let labels = vec![label(0, 3), label(1, 2)];
    let r = evaluate(&truth, &truth, &initials, &labels).unwrap();
    assert_eq!(r.average_distance(), 0.0);
    assert_eq!(r.distance_std(), 0.0);
    assert_eq!(r.improvement_ratio(), 1.0);
    assert_eq!(r.n_frames(), 2);
}

#[test]
fn unchanged_initials_never_count_as_improved() {
    let truth = vec![Position3D::zeros(); 3];
    let initials = vec![Position3D::new(0.3, 0.0, 0.0); 3];
    let r = evaluate(&initials, &truth, &initials, &[label(0, 2); 3]).unwrap();
    assert_eq!(r.improvement_ratio(), 0.0);
    assert!((r.average_distance() - 0.3).abs() < 1e-15);
    assert_eq!(r.overall.init_average_distance, r.average_distance());
}

#[test]
fn breakdowns_split_by_target_and_camera_count() {
    let truth = vec![Position3D::new(0.0, 0.0, 1.7); 4];
    let est = vec![
        Position3D::new(0.3, 0.4, 1.7),
        Position3D::new(0.0, 0.0, 2.7),
        Position3D::new(0.0, 1.0, 1.7),
        Position3D::new(2.0, 0.0, 1.7),
    ];
    let init = vec![Position3D::new(5.0, 0.0, 1.7); 4];
    let labels = vec![label(0, 3), label(0, 1), label(7, 2), label(7, 1)];
    let r = evaluate(&est, &truth, &init, &labels).unwrap();
    // The single-camera frame that is only off in height scores zero.
    let single = r.single_camera.unwrap();
    assert_eq!(single.n_frames, 2);
    assert!((single.average_distance - 1.0).abs() < 1e-15);
    let multi = r.multi_camera.unwrap();
    assert!((multi.average_distance - 0.75).abs() < 1e-15);
    assert!((r.per_target[&0].average_distance - 0.25).abs() < 1e-15);
    assert!((r.per_target[&7].average_distance - 1.5).abs() < 1e-15);
    assert!((r.average_distance() - 0.875).abs() < 1e-15);
}

#[test]
fn mismatched_or_empty_inputs_are_rejected() {
    let p = vec![Position3D::zeros(); 2];
    assert!(matches!(
        evaluate(&p, &p[..1], &p, &[label(0, 2); 2]),
        Err(Error::LengthMismatch(_))
    ));
    assert!(evaluate(&[], &[], &[], &[]).is_err());
}

#[test]
fn identical_cameras_have_no_angular_error() {
    let cam = common::camera(0, [0.0, 0.0, 4.0], [6.0, 4.0, 0.0], [-0.3, 0.1, 0.0, 0.0, 0.0]);
    assert_eq!(angular_error(&cam, &cam, &default_probes(&cam)).unwrap(), 0.0);
}

#[test]
fn yaw_offset_rotates_the_central_ray_by_the_same_angle() {
    let cam = common::camera(0, [0.0, 0.0, 4.0], [6.0, 4.0, 0.0], [0.0; 5]);
    let mut turned = cam.clone();
    turned.extrinsics = cam.extrinsics.rotated_about_center(0.0, 1f64.to_radians(), 0.0);
    let center = [Pixel2D::new(640.0, 360.0)];
    let e = angular_error(&cam, &turned, &center).unwrap();
    assert!((e - 1.0).abs() < 1e-9, "{e}");
    // Off-axis probes see slightly less than the full yaw.
    let grid = angular_error(&cam, &turned, &default_probes(&cam)).unwrap();
    assert!(grid > 0.8 && grid <= 1.0 + 1e-9, "{grid}");
}

#[test]
fn sideways_shift_shows_up_as_parallax_at_probe_depth() {
    let cam = common::camera(0, [0.0, 0.0, 4.0], [6.0, 4.0, 0.0], [0.0; 5]);
    let mut moved = cam.clone();
    // Camera-frame x is perpendicular to the optical axis.
    moved.extrinsics = cam.extrinsics.translated(&Vector3::new(-0.1, 0.0, 0.0));
    let e = angular_error(&cam, &moved, &[Pixel2D::new(640.0, 360.0)]).unwrap();
    // Seen from the midpoint of the centers, each probe point is 5 cm off axis.
    let want = 2.0 * (0.05 / PROBE_DEPTH).atan().to_degrees();
    assert!((e - want).abs() < 1e-9, "{e} vs {want}");
}

fn rows() -> impl Strategy<Value = Vec<([f64; 3], [f64; 3], [f64; 3], u32, usize)>> {
    prop::collection::vec(
        (
            [-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.0],
            [-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.0],
            [-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.0],
            0u32..4,
            1usize..5,
        ),
        1..60,
    )
}

type Columns = (Vec<Position3D>, Vec<Position3D>, Vec<Position3D>, Vec<FrameLabel>);

fn columns(rows: &[([f64; 3], [f64; 3], [f64; 3], u32, usize)]) -> Columns {
    (
        rows.iter().map(|r| r.0.into()).collect(),
        rows.iter().map(|r| r.1.into()).collect(),
        rows.iter().map(|r| r.2.into()).collect(),
        rows.iter().map(|r| label(r.3, r.4)).collect(),
    )
}

proptest! {
    #[test]
    fn summary_matches_two_pass_statistics(rows in rows()) {
        let (e, t, i, l) = columns(&rows);
        let r = evaluate(&e, &t, &i, &l).unwrap();
        let dist = |k: usize, p: &Position3D| {
            if l[k].n_visible == 1 { (p.xy() - t[k].xy()).norm() } else { (p - t[k]).norm() }
        };
        let d: Vec<f64> = e.iter().enumerate().map(|(k, p)| dist(k, p)).collect();
        let d0: Vec<f64> = i.iter().enumerate().map(|(k, p)| dist(k, p)).collect();
        let (mean, std) = mean_std(&d);
        prop_assert!((r.average_distance() - mean).abs() < 1e-12);
        prop_assert!((r.distance_std() - std).abs() < 1e-10);
        let improved = d.iter().zip(&d0).filter(|(a, b)| a < b).count();
        prop_assert_eq!(r.improvement_ratio(), improved as f64 / d.len() as f64);
    }

    #[test]
    fn evaluation_ignores_row_order(rows in rows(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let (e, t, i, l) = columns(&rows);
        let (e2, t2, i2, l2) = columns(&shuffled);
        let a = evaluate(&e, &t, &i, &l).unwrap();
        let b = evaluate(&e2, &t2, &i2, &l2).unwrap();
        prop_assert!((a.average_distance() - b.average_distance()).abs() < 1e-12);
        prop_assert!((a.distance_std() - b.distance_std()).abs() < 1e-10);
        prop_assert_eq!(a.improvement_ratio(), b.improvement_ratio());
        prop_assert_eq!(a.per_target.keys().collect::<Vec<_>>(), b.per_target.keys().collect::<Vec<_>>());
    }

    #[test]
    fn initials_against_themselves_never_improve(rows in rows()) {
        let (_, t, i, l) = columns(&rows);
        prop_assert_eq!(evaluate(&i, &t, &i, &l).unwrap().improvement_ratio(), 0.0);
    }

    #[test]
    fn merging_equals_concatenating(rows in rows(), split in 0usize..60) {
        let split = split.min(rows.len());
        let (e, t, i, l) = columns(&rows);
        let mut left = MetricsAccumulator::default();
        let mut right = MetricsAccumulator::default();
        let mut all = MetricsAccumulator::default();
        for k in 0..rows.len() {
            let acc = if k < split { &mut left } else { &mut right };
            acc.push(&e[k], &t[k], &i[k], l[k]);
            all.push(&e[k], &t[k], &i[k], l[k]);
        }
        left.merge(&right);
        let (a, b) = (left.report().unwrap(), all.report().unwrap());
        prop_assert!((a.average_distance() - b.average_distance()).abs() < 1e-12);
        prop_assert!((a.distance_std() - b.distance_std()).abs() < 1e-10);
        prop_assert_eq!(a.improvement_ratio(), b.improvement_ratio());
    }

    #[test]
    fn angular_error_is_symmetric(seed in 0u64..10_000) {
        let mut rng = common::rng(seed);
        let a = common::random_camera(&mut rng, 0, 1.0);
        let b = common::random_camera(&mut rng, 0, 1.0);
        let probes = default_probes(&a);
        let (ab, ba) = (angular_error(&a, &b, &probes), angular_error(&b, &a, &probes));
        if let (Ok(ab), Ok(ba)) = (ab, ba) {
            prop_assert!((ab - ba).abs() < 1e-12, "{ab} vs {ba}");
        }
    }
}
