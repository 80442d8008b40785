//! Iterative multi-least-squares (IMLS) refinement.
//!
//! Each outer iteration alternates two linear stages:
//!
//! * local: photometric normals `h` from the near-frontal images drive
//!   alternating solves for the v- and u-partial derivatives of the surface,
//!   with the x, y positions held near the template;
//! * global: landmark reprojections warp the surface while a second-order
//!   penalty keeps its curvature close to the local result.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{stencil_bandwidth, BandedNormalEquations, RowSink};
use crate::motion::{build_motion_system, estimate_poses, resample_to_frontal, FeatureTemplate, MotionSystem, PoseSet};
use crate::shading::{template_normals, ImageStack, PhotometricStereo, ShadingParams, MIN_IMAGES};
use crate::surface::{skew, BsplineSurface, CoeffKind, CoeffMatrix, NormalField, Stencil, UvGrid, UvSamples, STENCIL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// First-order anchor weight of the local steps.
    pub lambda: f64,
    /// Second-order regularisation weight of the global step.
    pub zeta: f64,
    /// Row weight of the frontal (x, y) constraint.
    pub mu: f64,
    /// Ridge on `b − b₀` in the local steps, relative to the mean diagonal of
    /// the normal matrix. Fixes the depth offset that normals cannot see.
    pub gauge: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Images whose estimated rotation exceeds this angle (degrees) are used
    /// for motion only.
    pub max_shading_tilt_deg: f64,
    /// Dense uv sampling; defaults to one sample per image pixel.
    pub samples: Option<UvGrid>,
    pub shading: ShadingParams,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            zeta: 1e-6,
            mu: 0.1,
            gauge: 1e-6,
            inner_tol: 1e-4,
            outer_tol: 1e-3,
            max_inner: 10,
            max_outer: 8,
            max_shading_tilt_deg: 5.0,
            samples: None,
            shading: ShadingParams::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("zeta", self.zeta),
            ("mu", self.mu),
            ("inner_tol", self.inner_tol),
            ("outer_tol", self.outer_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.gauge >= 0.0 && self.gauge.is_finite()) {
            return Err(Error::usage(format!("gauge must be non-negative, got {}", self.gauge)));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::usage("max_inner and max_outer must be at least 1"));
        }
        if !(self.max_shading_tilt_deg >= 0.0) {
            return Err(Error::usage("max_shading_tilt_deg must be non-negative"));
        }
        if let Some(g) = self.samples {
            if g.nu < 2 || g.nv < 2 {
                return Err(Error::usage("samples grid must be at least 2x2"));
            }
        }
        Ok(())
    }
}

/// Coefficient matrices of one surface layout on the dense uv grid and at
/// the feature points. They depend on the knots only, never on `b`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub grid: UvGrid,
    pub uv: UvSamples,
    pub t: CoeffMatrix,
    pub t1: CoeffMatrix,
    pub t2: CoeffMatrix,
    pub t11: CoeffMatrix,
    pub t22: CoeffMatrix,
    pub t12: CoeffMatrix,
    pub features: CoeffMatrix,
    rows: usize,
    cols: usize,
}

impl Coefficients {
    pub fn new(surface: &BsplineSurface, grid: UvGrid, features: &FeatureTemplate) -> Result<Self> {
        let uv = grid.samples(surface);
        let at = |kind| CoeffMatrix::assemble(surface, &uv, kind);
        Ok(Self {
            t: at(CoeffKind::T)?,
            t1: at(CoeffKind::T1)?,
            t2: at(CoeffKind::T2)?,
            t11: at(CoeffKind::T11)?,
            t22: at(CoeffKind::T22)?,
            t12: at(CoeffKind::T12)?,
            features: CoeffMatrix::assemble(surface, &features.samples(), CoeffKind::T)?,
            grid,
            uv,
            rows: surface.grid().rows(),
            cols: surface.grid().cols(),
        })
    }

    pub fn unknowns(&self) -> usize {
        3 * self.rows * self.cols
    }

    fn system(&self) -> BandedNormalEquations {
        BandedNormalEquations::new(self.unknowns(), stencil_bandwidth(self.cols))
    }

    fn check(&self, b: &DVector<f64>) -> Result<()> {
        if b.len() != self.unknowns() {
            return Err(Error::usage(format!(
                "control vector has {} entries, expected {}",
                b.len(),
                self.unknowns()
            )));
        }
        Ok(())
    }
}

/// Streams the three rows `weight · M · (stencil ⊗ I₃) b ≈ weight · rhs`,
/// skipping components not in `comps`.
fn add_block(sink: &mut impl RowSink, stencil: &Stencil, m: &Matrix3<f64>, rhs: &Vector3<f64>, weight: f64, comps: &[usize]) {
    let mut entries = [(0usize, 0.0f64); 3 * STENCIL];
    for &i in comps {
        for (k, (&pt, &w)) in stencil.points.iter().zip(&stencil.weights).enumerate() {
            for j in 0..3 {
                entries[3 * k + j] = (3 * pt + j, weight * m[(i, j)] * w);
            }
        }
        sink.add_row(&entries, weight * rhs[i]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Partial {
    V,
    U,
}

/// Streams every row of a local step into `sink`; returns the number of
/// normal constraints used.
fn local_rows(
    sink: &mut impl RowSink,
    partial: Partial,
    h: &NormalField,
    b0: &DVector<f64>,
    bt: &DVector<f64>,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<usize> {
    if h.len() != coeffs.uv.len() {
        return Err(Error::usage(format!(
            "normal field has {} samples, coefficients {}",
            h.len(),
            coeffs.uv.len()
        )));
    }
    let (fixed, free) = match partial {
        Partial::V => (&coeffs.t1, &coeffs.t2),
        Partial::U => (&coeffs.t2, &coeffs.t1),
    };
    let sign = if partial == Partial::V { 1.0 } else { -1.0 };
    let root_lambda = cfg.lambda.sqrt();
    let identity = Matrix3::identity();
    let mut used = 0;
    for s in 0..coeffs.uv.len() {
        if !h.valid[s] {
            continue;
        }
        let w = fixed.apply_sample(s, b0);
        let c = coeffs.t1.apply_sample(s, b0).cross(&coeffs.t2.apply_sample(s, b0));
        let len = c.norm();
        if len < crate::surface::DEGENERATE_NORMAL {
            continue;
        }
        let m = skew(&w) * (sign / len);
        add_block(sink, free.stencil(s), &m, &h.normals[s], 1.0, &[0, 1, 2]);
        add_block(sink, fixed.stencil(s), &identity, &w, root_lambda, &[0, 1, 2]);
        used += 1;
    }
    for s in 0..coeffs.uv.len() {
        let target = coeffs.t.apply_sample(s, bt);
        add_block(sink, coeffs.t.stencil(s), &identity, &target, cfg.mu, &[0, 1]);
    }
    Ok(used)
}

fn local_step(
    partial: Partial,
    h: &NormalField,
    b0: &DVector<f64>,
    bt: &DVector<f64>,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<DVector<f64>> {
    coeffs.check(b0)?;
    coeffs.check(bt)?;
    let mut sys = coeffs.system();
    let used = local_rows(&mut sys, partial, h, b0, bt, coeffs, cfg)?;
    if used == 0 {
        return Err(Error::InsufficientData("no valid normals for the local step".into()));
    }
    if cfg.gauge > 0.0 {
        let d = sys.mean_diagonal();
        sys.add_ridge(cfg.gauge * d, b0);
    }
    sys.solve()
}

/// Solves for `b` with the u-derivative frozen at `b₀`: normals through
/// `L = Λ [T1 b₀]× T2`.
pub fn local_step_v(
    h: &NormalField,
    b0: &DVector<f64>,
    bt: &DVector<f64>,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<DVector<f64>> {
    local_step(Partial::V, h, b0, bt, coeffs, cfg)
}

/// Mirror of [`local_step_v`] through `R = −Λ [T2 b₀]× T1`.
pub fn local_step_u(
    h: &NormalField,
    b0: &DVector<f64>,
    bt: &DVector<f64>,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<DVector<f64>> {
    local_step(Partial::U, h, b0, bt, coeffs, cfg)
}

/// Row-level view of the local steps for external verification: the rows
/// are pushed to `sink` exactly as the solver sees them, before the gauge.
pub fn local_step_rows(
    sink: &mut impl RowSink,
    along_u: bool,
    h: &NormalField,
    b0: &DVector<f64>,
    bt: &DVector<f64>,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<usize> {
    let partial = if along_u { Partial::U } else { Partial::V };
    local_rows(sink, partial, h, b0, bt, coeffs, cfg)
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub b0: DVector<f64>,
    /// Photometric normals of the last inner iteration.
    pub normals: NormalField,
    pub iterations: usize,
    pub rel_change: f64,
}

/// Alternating v/u refinement against a frontal stack sampled on
/// `coeffs.uv`, starting from `b₀ = b_t`. The photometric normals are
/// aligned with the template `b_t` once and held fixed while `b₀` moves.
pub fn local_optimize(
    stack: &ImageStack,
    template: &BsplineSurface,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<LocalOutcome> {
    if stack.pixels() != coeffs.uv.len() {
        return Err(Error::usage(format!(
            "frontal stack has {} pixels, uv grid {} samples",
            stack.pixels(),
            coeffs.uv.len()
        )));
    }
    let ps = PhotometricStereo::new(stack, &cfg.shading)?;
    let normals = ps.normals(&template_normals(template, &coeffs.uv)?)?;
    let bt = template.control_vector();
    let mut b0 = bt.clone();
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        iterations += 1;
        let bv = local_step_v(&normals, &b0, &bt, coeffs, cfg)?;
        let bu = local_step_u(&normals, &bv, &bt, coeffs, cfg)?;
        rel_change = relative_change(&bu, &b0);
        b0 = bu;
        if rel_change < cfg.inner_tol {
            break;
        }
    }
    Ok(LocalOutcome {
        b0,
        normals,
        iterations,
        rel_change,
    })
}

fn global_rows(sink: &mut impl RowSink, motion: &MotionSystem, b0: &DVector<f64>, coeffs: &Coefficients, cfg: &OptimizerConfig) {
    let mut entries = [(0usize, 0.0f64); 3 * STENCIL];
    for (r, obs) in motion.observations.iter().enumerate() {
        let stencil = coeffs.features.stencil(obs.feature);
        for i in 0..2 {
            for (k, (&pt, &w)) in stencil.points.iter().zip(&stencil.weights).enumerate() {
                for j in 0..3 {
                    entries[3 * k + j] = (3 * pt + j, obs.block[(i, j)] * w);
                }
            }
            sink.add_row(&entries, motion.f_vec[2 * r + i]);
        }
    }
    let root_zeta = cfg.zeta.sqrt();
    let identity = Matrix3::identity();
    for k in [&coeffs.t11, &coeffs.t22, &coeffs.t12] {
        for s in 0..k.samples() {
            let target = k.apply_sample(s, b0);
            add_block(sink, k.stencil(s), &identity, &target, root_zeta, &[0, 1, 2]);
        }
    }
}

/// Reprojection rows `P T_f b ≈ f` plus `√ζ K (b − b₀) ≈ 0` with
/// `K = [T11; T22; T12]`.
pub fn global_step(motion: &MotionSystem, b0: &DVector<f64>, coeffs: &Coefficients, cfg: &OptimizerConfig) -> Result<DVector<f64>> {
    coeffs.check(b0)?;
    if motion.observations.is_empty() {
        return Err(Error::InsufficientData("empty motion system".into()));
    }
    if motion.features != coeffs.features.samples() {
        return Err(Error::usage(format!(
            "motion system has {} features, coefficients {}",
            motion.features,
            coeffs.features.samples()
        )));
    }
    let mut sys = coeffs.system();
    global_rows(&mut sys, motion, b0, coeffs, cfg);
    sys.solve()
}

/// Row-level view of [`global_step`].
pub fn global_step_rows(sink: &mut impl RowSink, motion: &MotionSystem, b0: &DVector<f64>, coeffs: &Coefficients, cfg: &OptimizerConfig) {
    global_rows(sink, motion, b0, coeffs, cfg)
}

#[derive(Debug, Clone)]
pub struct GlobalOutcome {
    pub b: DVector<f64>,
    pub poses: PoseSet,
    pub motion: MotionSystem,
    pub iterations: usize,
}

/// Pose re-estimation and warping until the template settles.
pub fn global_optimize(
    landmarks: &[Vec<Option<nalgebra::Vector2<f64>>>],
    b0: &DVector<f64>,
    template: &BsplineSurface,
    features: &FeatureTemplate,
    coeffs: &Coefficients,
    cfg: &OptimizerConfig,
) -> Result<GlobalOutcome> {
    let mut surface = template.clone();
    let mut bt = template.control_vector();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let poses = estimate_poses(landmarks, &surface, features)?;
        let motion = build_motion_system(landmarks, &poses, features)?;
        let b = global_step(&motion, b0, coeffs, cfg)?;
        let change = relative_change(&b, &bt);
        bt = b;
        surface = surface.with_control_vector(&bt)?;
        if change < cfg.inner_tol || iterations >= cfg.max_inner {
            return Ok(GlobalOutcome {
                b: bt,
                poses,
                motion,
                iterations,
            });
        }
    }
}

/// `‖a − b‖ / ‖b‖`, or `‖a − b‖` when `b` vanishes.
pub fn relative_change(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let d = (a - b).norm();
    let n = b.norm();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

/// `‖h − Λ (T1 b ⊗ T2 b)‖` over the valid normals.
pub fn normal_residual(h: &NormalField, b: &DVector<f64>, coeffs: &Coefficients) -> f64 {
    let mut sum = 0.0;
    for s in 0..h.len() {
        if !h.valid[s] {
            continue;
        }
        let c = coeffs.t1.apply_sample(s, b).cross(&coeffs.t2.apply_sample(s, b));
        let len = c.norm();
        let n = if len >= crate::surface::DEGENERATE_NORMAL { c / len } else { Vector3::zeros() };
        sum += (h.normals[s] - n).norm_squared();
    }
    sum.sqrt()
}

/// `‖f − P T_f b‖`.
pub fn reprojection_residual(motion: &MotionSystem, b: &DVector<f64>, coeffs: &Coefficients) -> f64 {
    let q = coeffs.features.mul_vec(b);
    (motion.project(&q) - &motion.f_vec).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub normal_residual: f64,
    pub reproj_residual: f64,
    pub rel_change: f64,
}

impl HistoryEntry {
    pub fn objective(&self) -> f64 {
        self.normal_residual + self.reproj_residual
    }
}

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("iteration,normal_residual,reproj_residual,rel_change\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e}",
            h.iteration, h.normal_residual, h.reproj_residual, h.rel_change
        );
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[HistoryEntry]) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ImlsResult {
    /// Iterate with the lowest combined objective.
    pub surface: BsplineSurface,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
    pub poses: PoseSet,
}

/// Indices of the images close enough to frontal for shading.
pub fn shading_images(poses: &PoseSet, max_tilt_deg: f64) -> Vec<usize> {
    let limit = max_tilt_deg.to_radians();
    poses
        .0
        .iter()
        .enumerate()
        .filter(|(_, p)| p.rotation_angle() <= limit)
        .map(|(k, _)| k)
        .collect()
}

/// Resamples the near-frontal images of `stack` onto `coeffs.uv`. Samples
/// missing from an image become NaN.
pub fn frontal_stack(
    stack: &ImageStack,
    images: &[usize],
    poses: &PoseSet,
    surface: &BsplineSurface,
    coeffs: &Coefficients,
) -> Result<ImageStack> {
    let p = coeffs.uv.len();
    let mut m = nalgebra::DMatrix::zeros(images.len(), p);
    let mut any = vec![false; p];
    for (row, &k) in images.iter().enumerate() {
        let f = resample_to_frontal(&stack.image(k), &poses.0[k], surface, &coeffs.uv)?;
        for j in 0..p {
            m[(row, j)] = if f.valid[j] { f.values[j] } else { f64::NAN };
            any[j] |= f.valid[j];
        }
    }
    ImageStack::new(coeffs.grid.nu, coeffs.grid.nv, m, Vec::new(), any)
}

/// The full alternating scheme from `template`.
pub fn imls_run(
    stack: &ImageStack,
    template: &BsplineSurface,
    features: &FeatureTemplate,
    cfg: &OptimizerConfig,
) -> Result<ImlsResult> {
    cfg.validate()?;
    features.validate(template)?;
    if stack.landmarks().len() != stack.len() {
        return Err(Error::usage("image stack carries no landmarks"));
    }
    let grid = cfg.samples.unwrap_or(UvGrid::new(stack.width(), stack.height()));
    let coeffs = Coefficients::new(template, grid, features)?;

    let mut surface = template.clone();
    let mut bt = template.control_vector();
    let mut history = Vec::new();
    let mut best: Option<(f64, BsplineSurface, PoseSet)> = None;
    let mut converged = false;

    for iteration in 1..=cfg.max_outer {
        let poses = estimate_poses(stack.landmarks(), &surface, features)?;
        let images = shading_images(&poses, cfg.max_shading_tilt_deg);
        if images.len() < MIN_IMAGES {
            return Err(Error::InsufficientData(format!(
                "{} near-frontal images, need at least {MIN_IMAGES}",
                images.len()
            )));
        }
        let frontal = frontal_stack(stack, &images, &poses, &surface, &coeffs)?;
        let local = local_optimize(&frontal, &surface, &coeffs, cfg)?;
        let global = global_optimize(stack.landmarks(), &local.b0, &surface, features, &coeffs, cfg)?;

        let rel_change = relative_change(&global.b, &bt);
        let entry = HistoryEntry {
            iteration,
            normal_residual: normal_residual(&local.normals, &global.b, &coeffs),
            reproj_residual: reprojection_residual(&global.motion, &global.b, &coeffs),
            rel_change,
        };
        history.push(entry);
        bt = global.b;
        surface = surface.with_control_vector(&bt)?;
        if best.as_ref().is_none_or(|(obj, _, _)| entry.objective() <= *obj) {
            best = Some((entry.objective(), surface.clone(), global.poses.clone()));
        }
        if rel_change < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    let (surface, poses) = if converged {
        let poses = estimate_poses(stack.landmarks(), &surface, features)?;
        (surface, poses)
    } else {
        let (_, s, p) = best.expect("at least one outer iteration");
        (s, p)
    };
    Ok(ImlsResult {
        surface,
        converged,
        history,
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsq::RowSink;
    use crate::motion::Pose;
    use crate::surface::{ControlGrid, KnotVector};
    use nalgebra::{DMatrix, Vector2};

    fn surface(m: usize, bump: f64) -> BsplineSurface {
        let g = KnotVector::clamped_uniform(m).unwrap().greville();
        BsplineSurface::clamped(ControlGrid::from_fn(m, m, |i, j| {
            let (x, y) = (10.0 * g[i] - 5.0, 10.0 * g[j] - 5.0);
            Vector3::new(x, y, bump * (-(x * x + y * y) / 20.0).exp())
        }))
        .unwrap()
    }

    fn features() -> FeatureTemplate {
        let uv: Vec<[f64; 2]> = (0..8).map(|i| [0.15 + 0.1 * i as f64, 0.5 + 0.3 * (1.7 * i as f64).sin()]).collect();
        FeatureTemplate {
            names: (0..8).map(|i| format!("f{i}")).collect(),
            uv,
            eyes: [0, 1],
        }
    }

    fn coeffs(s: &BsplineSurface) -> Coefficients {
        Coefficients::new(s, UvGrid::new(12, 12), &features()).unwrap()
    }

    #[test]
    fn config_rejects_zero_caps() {
        let cfg = OptimizerConfig { max_outer: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
        let cfg = OptimizerConfig { lambda: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"mu": 0.5}"#).unwrap();
        assert_eq!(cfg.mu, 0.5);
        assert_eq!(cfg.max_outer, 8);
    }

    #[test]
    fn local_steps_keep_exact_surface() {
        let s = surface(6, 2.0);
        let c = coeffs(&s);
        let b = s.control_vector();
        let h = s.normals_at(&c.uv).unwrap();
        let cfg = OptimizerConfig::default();
        let bv = local_step_v(&h, &b, &b, &c, &cfg).unwrap();
        let bu = local_step_u(&h, &b, &b, &c, &cfg).unwrap();
        assert!(relative_change(&bv, &b) < 1e-8);
        assert!(relative_change(&bu, &b) < 1e-8);
    }

    #[test]
    fn huge_lambda_pins_to_anchor() {
        let s = surface(6, 2.0);
        let flat = surface(6, 0.0);
        let c = coeffs(&s);
        let h = flat.normals_at(&c.uv).unwrap();
        let cfg = OptimizerConfig { lambda: 1e12, ..Default::default() };
        let b0 = s.control_vector();
        let b = local_step_v(&h, &b0, &b0, &c, &cfg).unwrap();
        assert!(relative_change(&b, &b0) < 1e-6);
    }

    #[test]
    fn local_step_without_gauge_is_rank_deficient() {
        let s = surface(5, 1.0);
        let c = coeffs(&s);
        let h = s.normals_at(&c.uv).unwrap();
        let cfg = OptimizerConfig { gauge: 0.0, ..Default::default() };
        let b = s.control_vector();
        match local_step_v(&h, &b, &b, &c, &cfg) {
            Err(Error::RankDeficient { null_dim, .. }) => assert!(null_dim >= 1),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    struct Dense {
        rows: Vec<Vec<(usize, f64)>>,
        rhs: Vec<f64>,
    }

    impl RowSink for Dense {
        fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
            self.rows.push(entries.to_vec());
            self.rhs.push(rhs);
        }
    }

    #[test]
    fn local_rows_reproduce_linearised_normals() {
        let s = surface(6, 2.0);
        let c = coeffs(&s);
        let b = s.control_vector();
        let h = s.normals_at(&c.uv).unwrap();
        let mut sink = Dense { rows: Vec::new(), rhs: Vec::new() };
        let used = local_step_rows(&mut sink, true, &h, &b, &b, &c, &OptimizerConfig::default()).unwrap();
        assert_eq!(used, c.uv.len());
        let n = b.len();
        let mut a = DMatrix::zeros(sink.rows.len(), n);
        for (r, row) in sink.rows.iter().enumerate() {
            for &(col, v) in row {
                a[(r, col)] += v;
            }
        }
        let res = a * &b - DVector::from_vec(sink.rhs);
        assert!(res.amax() < 1e-10);
    }

    #[test]
    fn global_step_fixed_point() {
        let s = surface(6, 2.0);
        let c = coeffs(&s);
        let f = features();
        let pts = f.points(&s).unwrap();
        let poses = PoseSet(vec![
            Pose::identity(),
            Pose::from_yaw_pitch(0.4, 0.1, 1.3, Vector2::new(3.0, 4.0)),
            Pose::from_yaw_pitch(-0.3, -0.2, 0.9, Vector2::new(-1.0, 2.0)),
        ]);
        let lm: Vec<Vec<_>> = poses.0.iter().map(|p| pts.iter().map(|x| Some(p.project(x))).collect()).collect();
        let motion = build_motion_system(&lm, &poses, &f).unwrap();
        let b0 = s.control_vector();
        let b = global_step(&motion, &b0, &c, &OptimizerConfig::default()).unwrap();
        assert!(relative_change(&b, &b0) < 1e-8);
        assert!(reprojection_residual(&motion, &b0, &c) < 1e-9);
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[HistoryEntry {
            iteration: 1,
            normal_residual: 0.5,
            reproj_residual: 2.0,
            rel_change: 0.1,
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iteration,normal_residual,reproj_residual,rel_change"));
        assert!(lines.next().unwrap().starts_with("1,5.0"));
    }
}
