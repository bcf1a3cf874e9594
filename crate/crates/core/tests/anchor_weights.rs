mod common;

use anchorloc::weights::{solve_weights, MAX_ANCHORS};
use anchorloc::{Anchor, Error, Pixel2D, Position3D};
use num::{BigRational, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::Rng;

fn anchor(id: u32, p: [f64; 3]) -> Anchor {
    Anchor {
        camera_id: 2,
        anchor_id: id,
        world: p.into(),
        observed_pixel: Pixel2D::zeros(),
    }
}

fn q(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap()
}

/// Solves the uncentered KKT system exactly by Gauss-Jordan elimination over
/// the rationals.
fn kkt_exact(anchors: &[Anchor], x: &Position3D, lambda: f64) -> Vec<f64> {
    let n = anchors.len();
    let a = |r: usize, c: usize| q(anchors[c].world[r]);
    let mut m: Vec<Vec<BigRational>> = vec![vec![BigRational::zero(); n + 2]; n + 1];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..3).map(|r| a(r, i) * a(r, j)).sum();
        }
        m[i][i] += q(lambda);
        m[i][n] = q(1.0);
        m[n][i] = q(1.0);
        m[i][n + 1] = (0..3).map(|r| a(r, i) * q(x[r])).sum();
    }
    m[n][n + 1] = q(1.0);
    for col in 0..=n {
        let piv = (col..=n).find(|&r| !m[r][col].is_zero()).expect("singular oracle system");
        m.swap(col, piv);
        let p = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..=n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in 0..n + 2 {
                    let sub = &f * &m[col][c];
                    m[r][c] -= sub;
                }
            }
        }
    }
    (0..n).map(|i| m[i][n + 1].to_f64().unwrap()).collect()
}

fn random_anchors(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<Anchor> {
    (0..n)
        .map(|i| {
            anchor(
                i as u32,
                [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.0..2.5)],
            )
        })
        .collect()
}

#[test]
fn matches_exact_kkt_solution() {
    let mut rng = common::rng(17);
    for _ in 0..20 {
        let anchors = random_anchors(&mut rng, 6);
        let x = Position3D::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 1.7);
        let w = solve_weights(&anchors, &x, 0.1).unwrap();
        let exact = kkt_exact(&anchors, &x, 0.1);
        for ((_, got), want) in w.weights.iter().zip(&exact) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }
}

#[test]
fn square_center_gets_equal_weights() {
    let anchors: Vec<Anchor> = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
        .iter()
        .enumerate()
        .map(|(i, p)| anchor(i as u32, *p))
        .collect();
    for lambda in [0.0, 1e-3, 1e-2, 1.0, 100.0] {
        let w = solve_weights(&anchors, &Position3D::new(0.5, 0.5, 0.0), lambda);
        // Four coplanar anchors make λ = 0 singular; every λ > 0 is fine.
        if lambda == 0.0 {
            assert!(matches!(w, Err(Error::SingularSystem { camera_id: 2 })));
            continue;
        }
        for (_, v) in w.unwrap().weights {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }
}

#[test]
fn tetrahedron_center_gets_equal_weights_at_zero_penalty() {
    let anchors: Vec<Anchor> = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .iter()
        .enumerate()
        .map(|(i, p)| anchor(i as u32, *p))
        .collect();
    let w = solve_weights(&anchors, &Position3D::new(0.25, 0.25, 0.25), 0.0).unwrap();
    for (_, v) in w.weights {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn single_anchor_takes_all_weight() {
    let w = solve_weights(&[anchor(9, [1.0, 2.0, 3.0])], &Position3D::new(-4.0, 0.0, 7.0), 0.3).unwrap();
    assert_eq!(w.weights, vec![(9, 1.0)]);
}

#[test]
fn empty_and_oversized_lists_are_rejected() {
    assert!(matches!(
        solve_weights(&[], &Position3D::zeros(), 0.1),
        Err(Error::EmptyAnchorList { .. })
    ));
    let mut rng = common::rng(1);
    let many = random_anchors(&mut rng, MAX_ANCHORS + 1);
    assert!(matches!(
        solve_weights(&many, &Position3D::zeros(), 0.1),
        Err(Error::TooManyAnchors { count: 33, .. })
    ));
    assert!(solve_weights(&many[..MAX_ANCHORS], &Position3D::zeros(), 0.1).is_ok());
}

fn anchors_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec([-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.5], min..=max)
}

fn build(points: &[[f64; 3]]) -> Vec<Anchor> {
    points.iter().enumerate().map(|(i, p)| anchor(i as u32, *p)).collect()
}

/// Smallest singular value of the centered anchor matrix: how far the set is
/// from lying in a plane.
fn spread(points: &[[f64; 3]]) -> f64 {
    let n = points.len() as f64;
    let c: Position3D = points.iter().map(|p| Position3D::from(*p)).sum::<Position3D>() / n;
    let m = nalgebra::DMatrix::from_fn(3, points.len(), |r, k| points[k][r] - c[r]);
    m.singular_values().min()
}

proptest! {
    #[test]
    fn weights_sum_to_one(
        points in anchors_strategy(1, 12),
        x in [-6.0f64..6.0, -6.0f64..6.0, 0.0f64..3.0],
        lambda in 1e-4f64..10.0,
    ) {
        let w = solve_weights(&build(&points), &x.into(), lambda).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-10);
        prop_assert_eq!(w.weights.len(), points.len());
    }

    #[test]
    fn larger_penalty_shrinks_weights(
        points in anchors_strategy(2, 10),
        x in [-6.0f64..6.0, -6.0f64..6.0, 0.0f64..3.0],
        l1 in 1e-4f64..1.0,
        factor in 1.01f64..100.0,
    ) {
        let a = build(&points);
        let w1 = solve_weights(&a, &x.into(), l1).unwrap();
        let w2 = solve_weights(&a, &x.into(), l1 * factor).unwrap();
        prop_assert!(w2.norm() <= w1.norm() + 1e-12);
    }

    #[test]
    fn exact_reconstruction_without_penalty(
        points in anchors_strategy(4, 4),
        x in [-6.0f64..6.0, -6.0f64..6.0, 0.0f64..3.0],
    ) {
        prop_assume!(spread(&points) > 0.3);
        let a = build(&points);
        let w = solve_weights(&a, &x.into(), 0.0).unwrap();
        let rec: Position3D = a.iter().zip(&w.weights).map(|(an, (_, v))| an.world * *v).sum();
        prop_assert!((rec - Position3D::from(x)).norm() < 1e-9);
    }

    #[test]
    fn translation_leaves_weights_unchanged(
        points in anchors_strategy(2, 10),
        x in [-6.0f64..6.0, -6.0f64..6.0, 0.0f64..3.0],
        shift in [-50.0f64..50.0, -50.0f64..50.0, -5.0f64..5.0],
        lambda in 1e-3f64..1.0,
    ) {
        let s = Position3D::from(shift);
        let a = build(&points);
        let moved: Vec<Anchor> = a.iter().map(|an| Anchor { world: an.world + s, ..*an }).collect();
        let w1 = solve_weights(&a, &x.into(), lambda).unwrap();
        let w2 = solve_weights(&moved, &(Position3D::from(x) + s), lambda).unwrap();
        for ((_, p), (_, r)) in w1.weights.iter().zip(&w2.weights) {
            prop_assert!((p - r).abs() < 1e-10);
        }
    }
}
