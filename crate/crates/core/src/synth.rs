//! Synthetic ground truth: a procedural face surface, Lambertian rendering
//! under scaled-orthographic cameras, and perturbed templates.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::motion::{eye_distance, FeatureTemplate, Pose};
use crate::shading::ImageStack;
use crate::surface::{BsplineSurface, ControlGrid, KnotVector, NormalField, UvGrid};

/// Half-width of the canonical face in x and y.
pub const FACE_HALF_WIDTH: f64 = 60.0;
/// Eye centres sit at `(±EYE_X, 0, 0)`.
pub const EYE_X: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit direction towards the light, camera frame.
    pub direction: [f64; 3],
    pub intensity: f64,
}

impl Light {
    /// Light at `elevation` above the image plane and `azimuth` around the
    /// viewing axis (radians).
    pub fn from_angles(elevation: f64, azimuth: f64, intensity: f64) -> Self {
        let (se, ce) = elevation.sin_cos();
        Self {
            direction: [ce * azimuth.cos(), ce * azimuth.sin(), se],
            intensity,
        }
    }

    pub fn dir(&self) -> Vector3<f64> {
        Vector3::from(self.direction)
    }
}

/// One rendered view: camera pose and its lighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub pose: Pose,
    pub lights: Vec<Light>,
    pub ambient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub surface: BsplineSurface,
    pub features: FeatureTemplate,
    pub shots: Vec<Shot>,
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::usage("scene resolution must be at least 2x2"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::usage("noise_sigma must be non-negative"));
        }
        for shot in &self.shots {
            if !(shot.ambient >= 0.0) {
                return Err(Error::usage("ambient term must be non-negative"));
            }
            for l in &shot.lights {
                if ((l.dir().norm()) - 1.0).abs() > 1e-9 {
                    return Err(Error::usage("light directions must be unit length"));
                }
                if !(l.intensity >= 0.0) {
                    return Err(Error::usage("light intensities must be non-negative"));
                }
            }
        }
        self.features.validate(&self.surface)
    }
}

/// Rendered images plus everything needed to score a reconstruction.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub images: Vec<GrayImage>,
    pub landmarks: Vec<Vec<Option<Vector2<f64>>>>,
    pub poses: Vec<Pose>,
    /// Object-frame normals of the truth on the per-pixel uv grid.
    pub normals: NormalField,
}

impl RenderedScene {
    pub fn stack(&self) -> Result<ImageStack> {
        ImageStack::from_images(&self.images, self.landmarks.clone())
    }
}

/// Surface samples splatted into a z-buffer before per-pixel refinement.
const SPLAT_FACTOR: usize = 3;
const NEWTON_STEPS: usize = 12;

fn shade(shot: &Shot, n_cam: &Vector3<f64>) -> f64 {
    let direct: f64 = shot.lights.iter().map(|l| l.intensity * n_cam.dot(&l.dir()).max(0.0)).sum();
    (shot.ambient + direct).clamp(0.0, 1.0)
}

/// Finds `(u, v)` with `pose(F(u, v)) = q` starting from `uv`.
fn invert_pixel(surface: &BsplineSurface, pose: &Pose, q: Vector2<f64>, mut uv: [f64; 2]) -> Option<[f64; 2]> {
    let p = pose.projection();
    for _ in 0..NEWTON_STEPS {
        let sp = surface.evaluate(uv[0], uv[1]).ok()?;
        let r = pose.project(&sp.position) - q;
        if r.norm() < 1e-12 {
            return Some(uv);
        }
        let j = Matrix2::from_columns(&[p * sp.du, p * sp.dv]);
        let step = j.try_inverse()? * r;
        uv = [(uv[0] - step.x).clamp(0.0, 1.0), (uv[1] - step.y).clamp(0.0, 1.0)];
    }
    let sp = surface.evaluate(uv[0], uv[1]).ok()?;
    ((pose.project(&sp.position) - q).norm() < 1e-6).then_some(uv)
}

/// Pixels whose surface point is the front-most along the viewing ray, with
/// the refined uv of that point.
fn visible_uv(surface: &BsplineSurface, pose: &Pose, width: usize, height: usize) -> Vec<Option<[f64; 2]>> {
    let nu = SPLAT_FACTOR * width;
    let nv = SPLAT_FACTOR * height;
    let mut depth = vec![f64::NEG_INFINITY; width * height];
    let mut seed = vec![None; width * height];
    for iv in 0..nv {
        for iu in 0..nu {
            let uv = [iu as f64 / (nu - 1) as f64, iv as f64 / (nv - 1) as f64];
            let Ok(sp) = surface.evaluate(uv[0], uv[1]) else { continue };
            let q = pose.project(&sp.position);
            let (c, r) = (q.x.round(), q.y.round());
            if c < 0.0 || r < 0.0 || c >= width as f64 || r >= height as f64 {
                continue;
            }
            let k = r as usize * width + c as usize;
            let z = pose.to_camera(&sp.position).z;
            if z > depth[k] {
                depth[k] = z;
                seed[k] = Some(uv);
            }
        }
    }
    seed.iter()
        .enumerate()
        .map(|(k, s)| {
            let uv = (*s)?;
            let q = Vector2::new((k % width) as f64, (k / width) as f64);
            invert_pixel(surface, pose, q, uv)
        })
        .collect()
}

/// Renders every shot. Deterministic in `scene.seed`; image `k` draws its
/// noise from stream `k`.
pub fn render(scene: &SceneSpec) -> Result<RenderedScene> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let noise = Normal::new(0.0, scene.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let feature_points = scene.features.points(&scene.surface)?;
    let feature_normals = scene.surface.normals_at(&scene.features.samples())?;

    let mut images = Vec::with_capacity(scene.shots.len());
    let mut landmarks = Vec::with_capacity(scene.shots.len());
    for (k, shot) in scene.shots.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(k as u64);
        let mut img = GrayImage::filled(w, h, 0.0);
        for (j, uv) in visible_uv(&scene.surface, &shot.pose, w, h).into_iter().enumerate() {
            let Some([u, v]) = uv else { continue };
            let Some(n) = scene.surface.evaluate(u, v)?.normal() else { continue };
            let n_cam = shot.pose.to_camera(&n);
            if n_cam.z <= 0.0 {
                continue;
            }
            let mut value = shade(shot, &n_cam);
            if scene.noise_sigma > 0.0 {
                value = (value + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            img.set(j % w, j / w, value);
        }
        images.push(img);

        let (wf, hf) = (w as f64, h as f64);
        landmarks.push(
            feature_points
                .iter()
                .zip(&feature_normals.normals)
                .zip(&feature_normals.valid)
                .map(|((p, n), &ok)| {
                    let q = shot.pose.project(p);
                    let facing = ok && shot.pose.to_camera(n).z > 0.0;
                    let inside = q.x >= -0.5 && q.y >= -0.5 && q.x <= wf - 0.5 && q.y <= hf - 0.5;
                    (facing && inside).then_some(q)
                })
                .collect(),
        );
    }
    let normals = scene.surface.normals_at(&UvGrid::new(w, h).samples(&scene.surface))?;
    Ok(RenderedScene {
        images,
        landmarks,
        poses: scene.shots.iter().map(|s| s.pose).collect(),
        normals,
    })
}

/// Smooth depth perturbation of a template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Peak |Δz| as a fraction of the eye distance.
    pub amplitude: f64,
    /// Number of sinusoids summed.
    pub waves: usize,
    pub seed: u64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            amplitude: 0.05,
            waves: 3,
            seed: 7,
        }
    }
}

/// Dense grid used to measure the peak of a perturbation.
const PEAK_GRID: usize = 200;

/// `truth` with a low-frequency sinusoidal z offset whose peak magnitude on
/// the surface is `amplitude · eye_distance`.
pub fn make_template(truth: &BsplineSurface, features: &FeatureTemplate, spec: &Perturbation) -> Result<BsplineSurface> {
    if !(spec.amplitude >= 0.0) {
        return Err(Error::usage("perturbation amplitude must be non-negative"));
    }
    if spec.amplitude == 0.0 || spec.waves == 0 {
        return Ok(truth.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let waves: Vec<[f64; 4]> = (0..spec.waves)
        .map(|_| {
            [
                rng.random_range(0.3..1.2),
                rng.random_range(0.3..1.2),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let gu = truth.knots_u().greville();
    let gv = truth.knots_v().greville();
    let grid = truth.grid();
    let offsets = ControlGrid::from_fn(grid.rows(), grid.cols(), |m, n| {
        let z: f64 = waves
            .iter()
            .map(|[fu, fv, phase, a]| a * (2.0 * PI * (fu * gu[m] + fv * gv[n]) + phase).sin())
            .sum();
        Vector3::new(0.0, 0.0, z)
    });
    let bump = BsplineSurface::new(offsets.clone(), truth.knots_u().clone(), truth.knots_v().clone())?;
    let peak = bump
        .eval(&UvGrid::new(PEAK_GRID, PEAK_GRID).samples(&bump))?
        .iter()
        .map(|p| p.z.abs())
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(truth.clone());
    }
    let scale = spec.amplitude * eye_distance(truth, features)? / peak;
    let b = truth.control_vector() + offsets.to_vector() * scale;
    truth.with_control_vector(&b)
}

fn gauss(x: f64, y: f64, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    (-0.5 * (((x - cx) / sx).powi(2) + ((y - cy) / sy).powi(2))).exp()
}

/// Procedural face height over `[-60, 60]²`, eyes at `(±25, 0)`.
fn face_height(x: f64, y: f64) -> f64 {
    let dome = 34.0 * gauss(x, y, 0.0, 4.0, 40.0, 52.0);
    let nose = 9.0 * gauss(x, y, 0.0, 8.0, 6.5, 13.0) + 3.0 * gauss(x, y, 0.0, -6.0, 5.0, 8.0);
    let brows = 3.0 * (gauss(x, y, -22.0, -13.0, 10.0, 4.5) + gauss(x, y, 22.0, -13.0, 10.0, 4.5));
    let sockets = -4.0 * (gauss(x, y, -EYE_X, 0.0, 7.5, 6.0) + gauss(x, y, EYE_X, 0.0, 7.5, 6.0));
    let cheeks = 4.0 * (gauss(x, y, -28.0, 18.0, 10.0, 9.0) + gauss(x, y, 28.0, 18.0, 10.0, 9.0));
    let lips = 2.5 * gauss(x, y, 0.0, 33.0, 11.0, 4.0);
    let chin = 3.0 * gauss(x, y, 0.0, 48.0, 12.0, 6.0);
    dome + nose + brows + sockets + cheeks + lips + chin
}

/// Face-like `size × size` control grid. x and y are affine in (u, v), so
/// `F(u, v).xy = (-60 + 120u, -60 + 120v)`, and z is shifted so the eye
/// centres lie on the x axis.
pub fn canonical_face(size: usize) -> Result<BsplineSurface> {
    if size < 4 {
        return Err(Error::usage(format!("face grid needs at least 4x4 control points, got {size}")));
    }
    let g = KnotVector::clamped_uniform(size)?.greville();
    let span = 2.0 * FACE_HALF_WIDTH;
    let grid = ControlGrid::from_fn(size, size, |m, n| {
        let (x, y) = (-FACE_HALF_WIDTH + span * g[m], -FACE_HALF_WIDTH + span * g[n]);
        Vector3::new(x, y, face_height(x, y))
    });
    let surface = BsplineSurface::clamped(grid)?;
    let eye = surface.point(face_uv(EYE_X, 0.0)[0], 0.5)?;
    let mut b = surface.control_vector();
    for k in 0..b.len() / 3 {
        b[3 * k + 2] -= eye.z;
    }
    surface.with_control_vector(&b)
}

/// Parameters of the canonical face point above `(x, y)`.
pub fn face_uv(x: f64, y: f64) -> [f64; 2] {
    let span = 2.0 * FACE_HALF_WIDTH;
    [(x + FACE_HALF_WIDTH) / span, (y + FACE_HALF_WIDTH) / span]
}

/// 40 landmarks on the canonical face: the two eye centres followed by a
/// symmetric lattice of interior points.
pub fn default_features() -> FeatureTemplate {
    let mut names = vec!["eye_left".to_string(), "eye_right".to_string()];
    let mut uv = vec![face_uv(-EYE_X, 0.0), face_uv(EYE_X, 0.0)];
    let xs = [-42.0, -28.0, -14.0, 0.0, 14.0, 28.0, 42.0];
    let ys = [-40.0, -22.0, -8.0, 12.0, 26.0, 40.0];
    'outer: for (j, &y) in ys.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            if uv.len() == 40 {
                break 'outer;
            }
            names.push(format!("grid_{j}_{i}"));
            uv.push(face_uv(x, y));
        }
    }
    FeatureTemplate { names, uv, eyes: [0, 1] }
}

/// Scale of the frontal camera: maps the face width onto `width - 1` pixels.
pub fn frontal_pose(width: usize, height: usize) -> Pose {
    let s = (width - 1) as f64 / (2.0 * FACE_HALF_WIDTH);
    let t = Vector2::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    Pose::new(s, nalgebra::Matrix3::identity(), t).expect("identity rotation")
}

/// Parameters of the standard 40-image scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Std40 {
    pub width: usize,
    pub height: usize,
    pub grid: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for Std40 {
    fn default() -> Self {
        Self {
            width: 100,
            height: 100,
            grid: 20,
            noise_sigma: 0.0,
            seed: 1,
        }
    }
}

/// Frontal shots with varied lighting.
pub const STD40_FRONTAL: usize = 20;
/// Shots with yaw and pitch in ±30°.
pub const STD40_POSED: usize = 20;

/// The standard scene rendered from `surface`.
pub fn std40_scene(surface: BsplineSurface, features: FeatureTemplate, params: &Std40) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5354_4434_30);
    let light = |rng: &mut ChaCha8Rng| Shot {
        pose: Pose::identity(),
        lights: vec![Light::from_angles(
            rng.random_range(55f64..80.0).to_radians(),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.6..0.75),
        )],
        ambient: rng.random_range(0.0..0.2),
    };
    let frontal = frontal_pose(params.width, params.height);
    let mut shots: Vec<Shot> = (0..STD40_FRONTAL)
        .map(|_| Shot {
            pose: frontal,
            ..light(&mut rng)
        })
        .collect();
    let limit = 30f64.to_radians();
    let centre = Vector2::new((params.width - 1) as f64 / 2.0, (params.height - 1) as f64 / 2.0);
    let scale = 0.7 * frontal.scale();
    while shots.len() < STD40_FRONTAL + STD40_POSED {
        let yaw = rng.random_range(-limit..limit);
        let pitch = rng.random_range(-limit..limit);
        let pose = Pose::from_yaw_pitch(yaw, pitch, scale, centre);
        if pose.rotation_angle() < 10f64.to_radians() {
            continue;
        }
        shots.push(Shot { pose, ..light(&mut rng) });
    }
    SceneSpec {
        surface,
        features,
        shots,
        width: params.width,
        height: params.height,
        noise_sigma: params.noise_sigma,
        seed: params.seed,
    }
}
