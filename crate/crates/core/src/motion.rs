//! Scaled-orthographic pose recovery from 2D landmarks and assembly of the
//! stacked motion system `f ≈ P · Q` used by the global warp.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix3xX, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io;
use crate::surface::{BsplineSurface, UvSamples};

/// Fewest feature points a template may declare.
pub const MIN_FEATURES: usize = 6;

/// Named feature points on the surface, given by their (u, v) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTemplate {
    pub names: Vec<String>,
    pub uv: Vec<[f64; 2]>,
    /// Indices of the two eye-centre features.
    pub eyes: [usize; 2],
}

impl FeatureTemplate {
    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }

    pub fn validate(&self, surface: &BsplineSurface) -> Result<()> {
        if self.names.len() != self.uv.len() {
            return Err(Error::usage(format!(
                "{} feature names for {} uv entries",
                self.names.len(),
                self.uv.len()
            )));
        }
        if self.len() < MIN_FEATURES {
            return Err(Error::usage(format!(
                "need at least {MIN_FEATURES} features, got {}",
                self.len()
            )));
        }
        let [a, b] = self.eyes;
        if a == b || a >= self.len() || b >= self.len() {
            return Err(Error::usage(format!("invalid eye feature indices [{a}, {b}]")));
        }
        if let Some([u, v]) = self.uv.iter().find(|[u, v]| !surface.contains(*u, *v)) {
            return Err(Error::usage(format!("feature uv ({u}, {v}) outside the surface domain")));
        }
        Ok(())
    }

    pub fn samples(&self) -> UvSamples {
        UvSamples::new(self.uv.clone())
    }

    /// 3D positions of the features on `surface`.
    pub fn points(&self, surface: &BsplineSurface) -> Result<Vec<Vector3<f64>>> {
        surface.eval(&self.samples())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Scaled orthographic camera `q = s · R₂ₓ₃ · Q + t`.
///
/// The camera frame is `R · Q`; the viewer looks down its −z axis, so a
/// surface faces the camera when its camera-frame normal has positive z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseFile", into = "PoseFile")]
pub struct Pose {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector2<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    s: f64,
    /// Row-major rotation.
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 2],
}

impl TryFrom<PoseFile> for Pose {
    type Error = Error;

    fn try_from(f: PoseFile) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| f.r[i][j]);
        Pose::new(f.s, r, Vector2::from(f.t))
    }
}

impl From<Pose> for PoseFile {
    fn from(p: Pose) -> Self {
        let r = p.rotation;
        PoseFile {
            s: p.scale,
            r: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            t: [p.translation.x, p.translation.y],
        }
    }
}

impl Pose {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector2<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::usage(format!("pose scale must be positive, got {scale}")));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::usage("pose rotation is not a proper rotation"));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector2::zeros(),
        }
    }

    /// Rotation by `yaw` about y, then `pitch` about x (radians).
    pub fn from_yaw_pitch(yaw: f64, pitch: f64, scale: f64, translation: Vector2<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch) * Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        Self::new(scale, *r.matrix(), translation).expect("valid rotation")
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector2<f64> {
        self.translation
    }

    /// `s · R₂ₓ₃`, the linear part of the projection.
    pub fn projection(&self) -> Matrix2x3<f64> {
        self.rotation.fixed_view::<2, 3>(0, 0) * self.scale
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        self.projection() * p + self.translation
    }

    pub fn to_camera(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Geodesic angle of the rotation, radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Geodesic distance between two rotations, radians.
pub fn rotation_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Per-image poses, in stack order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseSet(pub Vec<Pose>);

/// Gauss–Newton iterations polishing the closed-form pose.
const POSE_REFINE_STEPS: usize = 10;

/// Weak-perspective Procrustes fit of `q ≈ s R₂ₓ₃ Q + t`.
///
/// The 2×3 map between the centred point sets is fitted by linear least
/// squares and projected onto `s ·` (orthonormal rows) through its SVD, with
/// `s` the mean of the two singular values. Gauss–Newton on `(s, R, t)` then
/// minimises the reprojection error.
pub fn estimate_pose(image_points: &[Vector2<f64>], model_points: &[Vector3<f64>]) -> Result<Pose> {
    let f = image_points.len();
    if f != model_points.len() {
        return Err(Error::usage(format!(
            "{f} image points for {} model points",
            model_points.len()
        )));
    }
    if f < 3 {
        return Err(Error::InsufficientData(format!("pose needs at least 3 points, got {f}")));
    }
    let q_mean = image_points.iter().sum::<Vector2<f64>>() / f as f64;
    let big_mean = model_points.iter().sum::<Vector3<f64>>() / f as f64;
    let qc = nalgebra::Matrix2xX::from_columns(&image_points.iter().map(|q| q - q_mean).collect::<Vec<_>>());
    let bc = Matrix3xX::from_columns(&model_points.iter().map(|p| p - big_mean).collect::<Vec<_>>());

    let scatter = &bc * bc.transpose();
    let eig = scatter.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let rank = eig.eigenvalues.iter().filter(|&&e| e > 1e-18 * top.max(f64::MIN_POSITIVE) && e > 0.0).count();
    if rank < 2 || top <= 0.0 {
        return Err(Error::Degenerate(format!("model points span rank {rank} < 2")));
    }
    // pseudo-inverse of the scatter, tolerant of planar model points
    let mut inv = Matrix3::zeros();
    for i in 0..3 {
        let e = eig.eigenvalues[i];
        if e > 1e-12 * top {
            let v = eig.eigenvectors.column(i);
            inv += v * v.transpose() / e;
        }
    }
    let a: Matrix2x3<f64> = &qc * bc.transpose() * inv;
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let sigma = svd.singular_values;
    let scale = 0.5 * (sigma[0] + sigma[1]);
    if !(scale > 0.0) {
        return Err(Error::Degenerate("image points carry no spread".into()));
    }
    let r2: Matrix2x3<f64> = u * vt;
    let r0 = r2.row(0).transpose();
    let r1 = r2.row(1).transpose();
    let r3 = r0.cross(&r1);
    let mut rotation = Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r3.transpose()]);
    if rotation.determinant() < 0.0 {
        rotation.set_row(2, &(-r3).transpose());
    }
    let translation = q_mean - scale * r2 * big_mean;
    let (scale, rotation, translation) = refine_pose(image_points, model_points, scale, rotation, translation);
    Pose::new(scale, rotation, translation)
}

fn refine_pose(
    image_points: &[Vector2<f64>],
    model_points: &[Vector3<f64>],
    mut scale: f64,
    mut rotation: Matrix3<f64>,
    mut translation: Vector2<f64>,
) -> (f64, Matrix3<f64>, Vector2<f64>) {
    let cost = |s: f64, r: &Matrix3<f64>, t: &Vector2<f64>| -> f64 {
        image_points
            .iter()
            .zip(model_points)
            .map(|(q, p)| (s * (r * p).xy() + t - q).norm_squared())
            .sum()
    };
    let mut current = cost(scale, &rotation, &translation);
    for _ in 0..POSE_REFINE_STEPS {
        // parameters: rotation increment ω, scale, translation
        let mut jtj = nalgebra::SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = nalgebra::SVector::<f64, 6>::zeros();
        for (q, p) in image_points.iter().zip(model_points) {
            let rp = rotation * p;
            let res = scale * rp.xy() + translation - q;
            let d_omega = -crate::surface::skew(&rp) * scale;
            for i in 0..2 {
                let row = nalgebra::SVector::<f64, 6>::from([
                    d_omega[(i, 0)],
                    d_omega[(i, 1)],
                    d_omega[(i, 2)],
                    rp[i],
                    if i == 0 { 1.0 } else { 0.0 },
                    if i == 1 { 1.0 } else { 0.0 },
                ]);
                jtj += row * row.transpose();
                jtr += row * res[i];
            }
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&-jtr)) else { break };
        let omega = Vector3::new(step[0], step[1], step[2]);
        let r_new = Rotation3::new(omega).into_inner() * rotation;
        let s_new = scale + step[3];
        let t_new = translation + Vector2::new(step[4], step[5]);
        let next = cost(s_new, &r_new, &t_new);
        if !(s_new > 0.0) || next >= current {
            break;
        }
        let done = current - next <= 1e-15 * current.max(f64::MIN_POSITIVE);
        (scale, rotation, translation, current) = (s_new, r_new, t_new, next);
        if done {
            break;
        }
    }
    (scale, rotation, translation)
}

/// Poses of every image from its visible landmarks and the current surface.
pub fn estimate_poses(
    landmarks: &[Vec<Option<Vector2<f64>>>],
    surface: &BsplineSurface,
    features: &FeatureTemplate,
) -> Result<PoseSet> {
    let model = features.points(surface)?;
    landmarks
        .iter()
        .enumerate()
        .map(|(k, set)| {
            if set.len() != features.len() {
                return Err(Error::usage(format!(
                    "image {k} lists {} landmarks for {} features",
                    set.len(),
                    features.len()
                )));
            }
            let (q, big): (Vec<_>, Vec<_>) = set
                .iter()
                .zip(&model)
                .filter_map(|(q, p)| q.map(|q| (q, *p)))
                .unzip();
            estimate_pose(&q, &big)
        })
        .collect::<Result<Vec<_>>>()
        .map(PoseSet)
}

/// One observed landmark: rows `2r, 2r+1` of the motion system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: usize,
    pub feature: usize,
    /// `s R₂ₓ₃` of the image.
    pub block: Matrix2x3<f64>,
}

/// Stacked centred observations `f` (2 per observation) and the block
/// projection `P` (2·obs × 3f), image-major then feature, x before y.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSystem {
    pub f_vec: DVector<f64>,
    pub observations: Vec<Observation>,
    pub features: usize,
}

impl MotionSystem {
    pub fn rows(&self) -> usize {
        2 * self.observations.len()
    }

    pub fn cols(&self) -> usize {
        3 * self.features
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(6 * self.observations.len());
        for (r, obs) in self.observations.iter().enumerate() {
            for i in 0..2 {
                for c in 0..3 {
                    out.push((2 * r + i, 3 * obs.feature + c, obs.block[(i, c)]));
                }
            }
        }
        out
    }

    pub fn p_dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.rows(), self.cols());
        for (r, c, v) in self.triplets() {
            p[(r, c)] = v;
        }
        p
    }

    /// `P · Q` for stacked feature positions `Q` (3f).
    pub fn project(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows());
        for (r, obs) in self.observations.iter().enumerate() {
            let p = obs.block * q.fixed_rows::<3>(3 * obs.feature);
            out.fixed_rows_mut::<2>(2 * r).copy_from(&p);
        }
        out
    }
}

pub fn build_motion_system(
    landmarks: &[Vec<Option<Vector2<f64>>>],
    poses: &PoseSet,
    features: &FeatureTemplate,
) -> Result<MotionSystem> {
    if landmarks.len() != poses.0.len() {
        return Err(Error::usage(format!(
            "{} landmark sets for {} poses",
            landmarks.len(),
            poses.0.len()
        )));
    }
    let mut f = Vec::new();
    let mut observations = Vec::new();
    for (k, (set, pose)) in landmarks.iter().zip(&poses.0).enumerate() {
        if set.len() != features.len() {
            return Err(Error::usage(format!(
                "image {k} lists {} landmarks for {} features",
                set.len(),
                features.len()
            )));
        }
        for (i, q) in set.iter().enumerate() {
            if let Some(q) = q {
                let c = q - pose.translation();
                f.extend([c.x, c.y]);
                observations.push(Observation {
                    image: k,
                    feature: i,
                    block: pose.projection(),
                });
            }
        }
    }
    if observations.is_empty() {
        return Err(Error::InsufficientData("no landmarks observed".into()));
    }
    Ok(MotionSystem {
        f_vec: DVector::from_vec(f),
        observations,
        features: features.len(),
    })
}

/// An image resampled onto the uv grid, with a per-sample validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontalImage {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Pulls `image` back onto `uv` through `surface` and `pose`.
///
/// Samples projecting outside the image or facing away from the camera are
/// masked.
pub fn resample_to_frontal(
    image: &GrayImage,
    pose: &Pose,
    surface: &BsplineSurface,
    uv: &UvSamples,
) -> Result<FrontalImage> {
    let mut values = Vec::with_capacity(uv.len());
    let mut valid = Vec::with_capacity(uv.len());
    for &[u, v] in uv.iter() {
        let sp = surface.evaluate(u, v)?;
        let facing = sp.normal().map(|n| pose.to_camera(&n).z > 0.0).unwrap_or(false);
        let q = pose.project(&sp.position);
        match image.bilinear(q.x, q.y).filter(|_| facing) {
            Some(x) => {
                values.push(x);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    Ok(FrontalImage { values, valid })
}

/// Distance between the two eye-centre points of `surface`.
pub fn eye_distance(surface: &BsplineSurface, features: &FeatureTemplate) -> Result<f64> {
    let [a, b] = features.eyes;
    let (pa, pb) = match (features.uv.get(a), features.uv.get(b)) {
        (Some(pa), Some(pb)) if a != b => (pa, pb),
        _ => return Err(Error::usage(format!("eye features [{a}, {b}] missing from template"))),
    };
    Ok((surface.point(pa[0], pa[1])? - surface.point(pb[0], pb[1])?).norm())
}
