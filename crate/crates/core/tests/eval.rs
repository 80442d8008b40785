mod common;

use common::*;
use nalgebra::{Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::Rng;
use sfms_core::eval::{align_absolute_orientation, mesh_obj, nearest_distances, surface_distance, EvalOptions};
use sfms_core::motion::eye_distance;
use sfms_core::synth::{canonical_face, default_features};
use sfms_core::{BsplineSurface, Similarity, UvGrid};

fn bumped(face: &BsplineSurface, amplitude: f64) -> BsplineSurface {
    let g = face.grid();
    let b = face.control_vector().map_with_location(|i, _, x| {
        if i % 3 != 2 {
            return x;
        }
        let k = i / 3;
        let (m, n) = ((k / g.cols()) as f64, (k % g.cols()) as f64);
        x + amplitude * (0.5 * m).sin() * (0.4 * n).cos()
    });
    face.with_control_vector(&b).unwrap()
}

fn brute_nearest(p: &Vector3<f64>, cloud: &[Vector3<f64>]) -> f64 {
    cloud.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

#[test]
fn surface_distance_matches_all_pairs_search() {
    let face = canonical_face(12).unwrap();
    let features = default_features();
    let recon = bumped(&face, 1.5);
    let density = UvGrid::new(25, 20);
    let report = surface_distance(
        &face,
        &recon,
        &features,
        &EvalOptions {
            density,
            hausdorff: true,
        },
    )
    .unwrap();
    assert_eq!(report.n_samples, 500);
    let truth_cloud = face.eval(&density.samples(&face)).unwrap();
    let recon_cloud: Vec<_> = recon.eval(&density.samples(&recon)).unwrap().iter().map(|p| report.alignment.apply(p)).collect();
    let d: Vec<f64> = truth_cloud.iter().map(|p| brute_nearest(p, &recon_cloud)).collect();
    let eye = eye_distance(&face, &features).unwrap();
    let mean = 100.0 * d.iter().sum::<f64>() / d.len() as f64 / eye;
    let rms = 100.0 * (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt() / eye;
    assert!(mean > 0.1);
    assert!((report.mean_pct - mean).abs() <= 1e-9);
    assert!((report.rms_pct - rms).abs() <= 1e-9);
    let back: Vec<f64> = recon_cloud.iter().map(|p| brute_nearest(p, &truth_cloud)).collect();
    let h = 100.0 * d.iter().chain(&back).copied().fold(0.0, f64::max) / eye;
    assert!((report.hausdorff_pct.unwrap() - h).abs() <= 1e-9);
}

#[test]
fn kd_tree_distances_match_linear_scan() {
    let mut r = rng(2);
    let cloud = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vector3<f64>> {
        (0..500).map(|_| Vector3::new(r.random_range(-9.0..9.0), r.random_range(-9.0..9.0), r.random_range(-2.0..2.0))).collect()
    };
    let (a, b) = (cloud(&mut r), cloud(&mut r));
    for (p, d) in a.iter().zip(nearest_distances(&a, &b)) {
        assert!((d - brute_nearest(p, &b)).abs() <= 1e-12);
    }
}

#[test]
fn identical_surfaces_score_zero() {
    let face = canonical_face(10).unwrap();
    let report = surface_distance(&face, &face, &default_features(), &EvalOptions::default()).unwrap();
    assert!(report.mean_pct <= 1e-9 && report.rms_pct <= 1e-9);
}

#[test]
fn rigidly_moved_reconstruction_scores_the_same() {
    let face = canonical_face(12).unwrap();
    let features = default_features();
    let recon = bumped(&face, 1.0);
    let opts = EvalOptions {
        density: UvGrid::new(40, 40),
        hausdorff: false,
    };
    let base = surface_distance(&face, &recon, &features, &opts).unwrap();
    let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
    let moved_grid = recon.control_vector();
    let mut moved = moved_grid.clone();
    for k in 0..moved.len() / 3 {
        let p = Vector3::new(moved_grid[3 * k], moved_grid[3 * k + 1], moved_grid[3 * k + 2]);
        let q = 1.7 * rot * p + Vector3::new(5.0, -3.0, 40.0);
        moved.fixed_rows_mut::<3>(3 * k).copy_from(&q);
    }
    let moved = recon.with_control_vector(&moved).unwrap();
    let again = surface_distance(&face, &moved, &features, &opts).unwrap();
    assert!((base.mean_pct - again.mean_pct).abs() <= 1e-9);
    assert!((base.rms_pct - again.rms_pct).abs() <= 1e-9);
}

#[test]
fn depth_offset_is_aligned_away() {
    let face = canonical_face(10).unwrap();
    let shifted = face.with_control_vector(&face.control_vector().map_with_location(|i, _, x| if i % 3 == 2 { x + 12.0 } else { x })).unwrap();
    let report = surface_distance(&face, &shifted, &default_features(), &EvalOptions::default()).unwrap();
    assert!(report.mean_pct <= 1e-9);
}

/// Gauss–Newton on `(ω, log s, t)` with a finite-difference Jacobian.
fn iterative_alignment(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> f64 {
    let residual = |p: &[f64; 7]| -> Vec<f64> {
        let omega = Vector3::new(p[0], p[1], p[2]);
        let r = Rotation3::new(omega);
        let s = p[3].exp();
        let t = Vector3::new(p[4], p[5], p[6]);
        x.iter().zip(y).flat_map(|(a, b)| {
            let d = a - (s * (r * b) + t);
            [d.x, d.y, d.z]
        }).collect()
    };
    let mut p = [0.0; 7];
    for _ in 0..100 {
        let r0 = residual(&p);
        let mut jac = nalgebra::DMatrix::zeros(r0.len(), 7);
        for k in 0..7 {
            let mut q = p;
            q[k] += 1e-7;
            let r1 = residual(&q);
            for i in 0..r0.len() {
                jac[(i, k)] = (r1[i] - r0[i]) / 1e-7;
            }
        }
        let rv = nalgebra::DVector::from_vec(r0);
        let step = dense_lstsq(&jac, &(-rv));
        for k in 0..7 {
            p[k] += step[k];
        }
        if step.norm() < 1e-13 {
            break;
        }
    }
    residual(&p).iter().map(|v| v * v).sum()
}

#[test]
fn closed_form_alignment_matches_iterative_minimiser() {
    let mut r = rng(7);
    let y: Vec<Vector3<f64>> = (0..30).map(|_| Vector3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0))).collect();
    let rot = Rotation3::from_euler_angles(0.2, 0.4, -0.3);
    let x: Vec<Vector3<f64>> = y
        .iter()
        .map(|p| 1.3 * (rot * p) + Vector3::new(1.0, 2.0, -0.5) + Vector3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)))
        .collect();
    let pairs: Vec<_> = (0..30).map(|i| (i, i)).collect();
    let sim = align_absolute_orientation(&x, &y, &pairs).unwrap();
    let closed: f64 = x.iter().zip(&y).map(|(a, b)| (a - sim.apply(b)).norm_squared()).sum();
    let iterative = iterative_alignment(&x, &y);
    assert!((closed - iterative).abs() <= 1e-6 * iterative.max(1.0), "{closed} vs {iterative}");
}

#[test]
fn exported_mesh_reparses_to_surface_points() {
    let face = canonical_face(8).unwrap();
    let density = UvGrid::new(9, 7);
    let obj = mesh_obj(&face, density).unwrap();
    let verts: Vec<Vector3<f64>> = obj
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            Vector3::new(v[0], v[1], v[2])
        })
        .collect();
    let want = face.eval(&density.samples(&face)).unwrap();
    assert_eq!(verts.len(), want.len());
    for (a, b) in verts.iter().zip(&want) {
        assert!((a - b).norm() <= 1e-6);
    }
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 2 * 8 * 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn known_similarity_is_recovered(
        seed in 0u64..10_000,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        scale in 0.1f64..10.0,
        shift in prop::array::uniform3(-50.0f64..50.0),
    ) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 0.1);
        let mut r = rng(seed);
        let y: Vec<Vector3<f64>> = (0..20).map(|_| Vector3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0))).collect();
        let truth = Similarity {
            s: scale,
            r: Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner(),
            t: Vector3::from(shift),
        };
        let x: Vec<Vector3<f64>> = y.iter().map(|p| truth.apply(p)).collect();
        let pairs: Vec<_> = (0..20).map(|i| (i, i)).collect();
        let sim = align_absolute_orientation(&x, &y, &pairs).unwrap();
        prop_assert!((sim.s - truth.s).abs() <= 1e-9 * truth.s);
        prop_assert!((sim.r - truth.r).amax() <= 1e-9);
        prop_assert!((sim.t - truth.t).amax() <= 1e-9 * (1.0 + truth.t.amax()));
        prop_assert!((sim.r.determinant() - 1.0).abs() <= 1e-12);
    }
}
