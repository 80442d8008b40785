//! Reference implementations used as independent oracles.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfms_core::optimizer::Coefficients;
use sfms_core::surface::{skew, ControlGrid, KnotVector, NormalField};
use sfms_core::{BsplineSurface, CoeffKind, FeatureTemplate, OptimizerConfig, Pose, UvGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cubic curve value by de Boor's triangular scheme.
pub fn de_boor(knots: &[f64], coeffs: &[f64], u: f64) -> f64 {
    let p = 3;
    let n = coeffs.len();
    let mut k = p;
    while k + 1 < n && knots[k + 1] <= u {
        k += 1;
    }
    let mut d: Vec<f64> = (0..=p).map(|j| coeffs[j + k - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + k - p;
            let den = knots[i + p + 1 - r] - knots[i];
            let alpha = if den == 0.0 { 0.0 } else { (u - knots[i]) / den };
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
        }
    }
    d[p]
}

/// `N_i(u)` as the de Boor value of the `i`-th unit coefficient vector.
pub fn basis_by_de_boor(knots: &[f64], count: usize, i: usize, u: f64) -> f64 {
    let mut e = vec![0.0; count];
    e[i] = 1.0;
    de_boor(knots, &e, u)
}

/// `Σ_m Σ_n N_m(u) N_n(v) b_mn` over the whole grid.
pub fn double_sum(s: &BsplineSurface, u: f64, v: f64) -> Vector3<f64> {
    let g = s.grid();
    let (ku, kv) = (s.knots_u().as_slice(), s.knots_v().as_slice());
    let mut acc = Vector3::zeros();
    for m in 0..g.rows() {
        let nm = basis_by_de_boor(ku, g.rows(), m, u);
        for n in 0..g.cols() {
            acc += nm * basis_by_de_boor(kv, g.cols(), n, v) * g.get(m, n);
        }
    }
    acc
}

pub fn random_surface(rows: usize, cols: usize, rng: &mut impl Rng) -> BsplineSurface {
    BsplineSurface::clamped(ControlGrid::from_fn(rows, cols, |_, _| {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }))
    .unwrap()
}

/// Height-field grid `z = f(x, y)` over Greville positions scaled to `[-5, 5]`.
pub fn height_surface(size: usize, f: impl Fn(f64, f64) -> f64) -> BsplineSurface {
    let g = KnotVector::clamped_uniform(size).unwrap().greville();
    BsplineSurface::clamped(ControlGrid::from_fn(size, size, |m, n| {
        let (x, y) = (10.0 * g[m] - 5.0, 10.0 * g[n] - 5.0);
        Vector3::new(x, y, f(x, y))
    }))
    .unwrap()
}

/// Minimum-norm least-squares solution through a full SVD.
pub fn dense_lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max();
    svd.solve(y, tol).unwrap()
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn knot_gap(knots: &[f64], u: f64) -> f64 {
    knots.iter().map(|k| (k - u).abs()).fold(f64::INFINITY, f64::min)
}

/// Central differences of `surface.point` with the stencil kept inside one
/// polynomial patch.
pub fn finite_difference(s: &BsplineSurface, kind: CoeffKind, u: f64, v: f64) -> Vector3<f64> {
    let f = |du: f64, dv: f64| s.point(u + du, v + dv).unwrap();
    let gap = knot_gap(s.knots_u().as_slice(), u).min(knot_gap(s.knots_v().as_slice(), v)) / 3.0;
    let h1 = 1e-5f64.min(gap);
    let h2 = 1e-4f64.min(gap);
    match kind {
        CoeffKind::T => f(0.0, 0.0),
        CoeffKind::T1 => (f(h1, 0.0) - f(-h1, 0.0)) / (2.0 * h1),
        CoeffKind::T2 => (f(0.0, h1) - f(0.0, -h1)) / (2.0 * h1),
        CoeffKind::T11 => (f(h2, 0.0) - 2.0 * f(0.0, 0.0) + f(-h2, 0.0)) / (h2 * h2),
        CoeffKind::T22 => (f(0.0, h2) - 2.0 * f(0.0, 0.0) + f(0.0, -h2)) / (h2 * h2),
        CoeffKind::T12 => (f(h2, h2) - f(h2, -h2) - f(-h2, h2) + f(-h2, -h2)) / (4.0 * h2 * h2),
    }
}

pub fn small_features() -> FeatureTemplate {
    let mut r = rng(40);
    FeatureTemplate {
        names: (0..10).map(|i| format!("f{i}")).collect(),
        uv: (0..10).map(|_| [r.random_range(0.1..0.9), r.random_range(0.1..0.9)]).collect(),
        eyes: [0, 1],
    }
}

pub fn small_system(seed: u64) -> (BsplineSurface, Coefficients, NormalField, DVector<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let (a, c) = (r.random_range(0.2..0.6), r.random_range(0.2..0.6));
    let s = height_surface(6, |x, y| 2.0 * (a * x).sin() * (c * y).cos());
    let coeffs = Coefficients::new(&s, UvGrid::new(20, 20), &small_features()).unwrap();
    let p = coeffs.uv.len();
    let normals = (0..p)
        .map(|_| Vector3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 1.0).normalize())
        .collect();
    let valid = (0..p).map(|_| r.random_bool(0.9)).collect();
    let h = NormalField {
        normals,
        valid,
        uv: coeffs.uv.clone(),
    };
    let jitter = |b: DVector<f64>, r: &mut rand_chacha::ChaCha8Rng| b.map(|x| x + r.random_range(-0.05..0.05));
    let b0 = jitter(s.control_vector(), &mut r);
    let bt = jitter(s.control_vector(), &mut r);
    (s, coeffs, h, b0, bt)
}

pub fn oracle_cfg() -> OptimizerConfig {
    OptimizerConfig {
        lambda: 0.3,
        zeta: 0.7,
        mu: 0.2,
        gauge: 1e-4,
        ..OptimizerConfig::default()
    }
}

pub fn block(m: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    m.rows(3 * s, 3).into_owned()
}

/// Builds the stacked local system row by row from dense coefficient
/// matrices and solves it with an SVD.
pub fn local_oracle(along_u: bool, h: &NormalField, b0: &DVector<f64>, bt: &DVector<f64>, coeffs: &Coefficients, cfg: &OptimizerConfig) -> DVector<f64> {
    let (t, t1, t2) = (coeffs.t.to_dense(), coeffs.t1.to_dense(), coeffs.t2.to_dense());
    let (fixed, free, sign) = if along_u { (&t2, &t1, -1.0) } else { (&t1, &t2, 1.0) };
    let n = b0.len();
    let mut rows: Vec<DMatrix<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for s in 0..h.len() {
        if !h.valid[s] {
            continue;
        }
        let w: Vector3<f64> = (block(fixed, s) * b0).fixed_rows::<3>(0).into_owned();
        let tu: Vector3<f64> = (block(&t1, s) * b0).fixed_rows::<3>(0).into_owned();
        let tv: Vector3<f64> = (block(&t2, s) * b0).fixed_rows::<3>(0).into_owned();
        let lam = 1.0 / tu.cross(&tv).norm();
        let sk = DMatrix::from_fn(3, 3, |i, j| skew(&w)[(i, j)]);
        rows.push(sk * block(free, s) * (sign * lam));
        rhs.extend(h.normals[s].iter());
        rows.push(block(fixed, s) * cfg.lambda.sqrt());
        rhs.extend((block(fixed, s) * b0 * cfg.lambda.sqrt()).iter());
    }
    let mut t_xy = t.clone();
    for c in (2..n).step_by(3) {
        t_xy.column_mut(c).fill(0.0);
    }
    let target = &t * bt;
    for s in 0..h.len() {
        rows.push(t_xy.rows(3 * s, 2) * cfg.mu);
        rhs.extend([cfg.mu * target[3 * s], cfg.mu * target[3 * s + 1]]);
    }
    let data = stack(&rows, n);
    let mean_diag = data.column_iter().map(|c| c.norm_squared()).sum::<f64>() / n as f64;
    let g = (cfg.gauge * mean_diag).sqrt();
    let a = stack(&[data, DMatrix::identity(n, n) * g], n);
    rhs.extend((b0 * g).iter());
    dense_lstsq(&a, &DVector::from_vec(rhs))
}

pub fn stack(blocks: &[DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let total = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Dense reprojection plus curvature rows of the global step, solved by SVD.
pub fn global_oracle(landmarks: &[Vec<Option<Vector2<f64>>>], poses: &[Pose], b0: &DVector<f64>, coeffs: &Coefficients, cfg: &OptimizerConfig) -> DVector<f64> {
    let tf = coeffs.features.to_dense();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (k, set) in landmarks.iter().enumerate() {
        let pose = &poses[k];
        let sr = pose.rotation() * pose.scale();
        for (i, q) in set.iter().enumerate() {
            let Some(q) = q else { continue };
            let proj = DMatrix::from_fn(2, 3, |a, b| sr[(a, b)]);
            rows.push(proj * tf.rows(3 * i, 3));
            rhs.extend((q - pose.translation()).iter());
        }
    }
    let root_zeta = cfg.zeta.sqrt();
    for k in [&coeffs.t11, &coeffs.t22, &coeffs.t12] {
        let d = k.to_dense();
        rhs.extend((&d * b0 * root_zeta).iter());
        rows.push(d * root_zeta);
    }
    dense_lstsq(&stack(&rows, b0.len()), &DVector::from_vec(rhs))
}

pub fn random_poses(count: usize, r: &mut impl Rng) -> Vec<Pose> {
    (0..count)
        .map(|_| {
            Pose::from_yaw_pitch(
                r.random_range(-0.6..0.6),
                r.random_range(-0.6..0.6),
                r.random_range(3.0..6.0),
                Vector2::new(r.random_range(20.0..40.0), r.random_range(20.0..40.0)),
            )
        })
        .collect()
}

pub fn observe(points: &[Vector3<f64>], poses: &[Pose], noise: f64, r: &mut impl Rng) -> Vec<Vec<Option<Vector2<f64>>>> {
    poses
        .iter()
        .map(|pose| {
            points
                .iter()
                .map(|p| {
                    let keep = r.random_bool(0.9);
                    let q = pose.project(p) + Vector2::new(r.random_range(-noise..=noise), r.random_range(-noise..=noise));
                    keep.then_some(q)
                })
                .collect()
        })
        .collect()
}

