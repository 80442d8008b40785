//! Reconstruction scoring and mesh export.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{eye_distance, FeatureTemplate};
use crate::surface::{BsplineSurface, UvGrid};

/// `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SimilarityFile", into = "SimilarityFile")]
pub struct Similarity {
    pub s: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct SimilarityFile {
    s: f64,
    /// Row-major rotation.
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl From<SimilarityFile> for Similarity {
    fn from(f: SimilarityFile) -> Self {
        Self {
            s: f.s,
            r: Matrix3::from_fn(|i, j| f.r[i][j]),
            t: Vector3::from(f.t),
        }
    }
}

impl From<Similarity> for SimilarityFile {
    fn from(a: Similarity) -> Self {
        Self {
            s: a.s,
            r: [0, 1, 2].map(|i| [a.r[(i, 0)], a.r[(i, 1)], a.r[(i, 2)]]),
            t: [a.t.x, a.t.y, a.t.z],
        }
    }
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            s: 1.0,
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.s * self.r * p + self.t
    }

    pub fn inverse(&self) -> Self {
        let r = self.r.transpose();
        Self {
            s: 1.0 / self.s,
            r,
            t: -(r * self.t) / self.s,
        }
    }
}

/// Closed-form similarity minimising `Σ ‖x_i − (s R y_i + t)‖²` over the
/// pairs `(x[a], y[b])` in `pairs`, with `det R = +1`.
pub fn align_absolute_orientation(x: &[Vector3<f64>], y: &[Vector3<f64>], pairs: &[(usize, usize)]) -> Result<Similarity> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 3 correspondences, got {}",
            pairs.len()
        )));
    }
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= x.len() || b >= y.len()) {
        return Err(Error::usage(format!("correspondence ({a}, {b}) out of range")));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|&(a, _)| x[a]).sum::<Vector3<f64>>() / n;
    let my = pairs.iter().map(|&(_, b)| y[b]).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_y = 0.0;
    for &(a, b) in pairs {
        let dx = x[a] - mx;
        let dy = y[b] - my;
        cov += dx * dy.transpose();
        var_y += dy.norm_squared();
    }
    cov /= n;
    var_y /= n;

    let svd = cov.svd(true, true);
    let sigma = svd.singular_values;
    let top = sigma.max();
    if var_y <= 0.0 || top <= 0.0 || sigma.iter().filter(|&&v| v > 1e-12 * top).count() < 2 {
        return Err(Error::Degenerate("correspondences are collinear".into()));
    }
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let s = (d * Matrix3::from_diagonal(&sigma)).trace() / var_y;
    let t = mx - s * r * my;
    Ok(Similarity { s, r, t })
}

/// Exact nearest-neighbour queries over a static 3D point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    /// Implicit balanced tree: the median of `order[lo..hi]` splits on
    /// `axis[mid]`.
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        Self::build(&points, &mut order, &mut axis);
        Self { points, order, axis }
    }

    fn build(points: &[Vector3<f64>], order: &mut [usize], axis: &mut [u8]) {
        if order.len() <= 1 {
            return;
        }
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for &i in order.iter() {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
        }
        let a = (hi - lo).imax();
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&i, &j| points[i][a].total_cmp(&points[j][a]));
        axis[mid] = a as u8;
        let (left, right) = order.split_at_mut(mid);
        let (axis_left, axis_right) = axis.split_at_mut(mid);
        Self::build(points, left, axis_left);
        Self::build(points, &mut right[1..], &mut axis_right[1..]);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point to `q`.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, q: &Vector3<f64>, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            *best = (i, d2);
        }
        if hi - lo == 1 {
            return;
        }
        let a = self.axis[mid] as usize;
        let diff = q[a] - p[a];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_pct: f64,
    pub rms_pct: f64,
    pub n_samples: usize,
    pub alignment: Similarity,
    /// Symmetric Hausdorff distance in percent of the eye distance.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hausdorff_pct: Option<f64>,
}

impl EvalReport {
    /// Copy with the percentages rounded to two decimals.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        Self {
            mean_pct: r(self.mean_pct),
            rms_pct: r(self.rms_pct),
            hausdorff_pct: self.hausdorff_pct.map(r),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub density: UvGrid,
    pub hausdorff: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            density: UvGrid::new(200, 200),
            hausdorff: false,
        }
    }
}

/// Nearest-neighbour distances from every point of `from` to `to`.
pub fn nearest_distances(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Vec<f64> {
    let tree = KdTree::new(to.to_vec());
    from.iter()
        .map(|p| tree.nearest(p).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY))
        .collect()
}

/// Aligns `recon` onto `truth` through the shared features, then measures
/// truth-to-recon point distances on dense samples, normalised by the eye
/// distance of `truth`.
pub fn surface_distance(
    truth: &BsplineSurface,
    recon: &BsplineSurface,
    features: &FeatureTemplate,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    features.validate(truth)?;
    features.validate(recon)?;
    if opts.density.nu < 2 || opts.density.nv < 2 {
        return Err(Error::usage("evaluation density must be at least 2x2"));
    }
    let x = features.points(truth)?;
    let y = features.points(recon)?;
    let pairs: Vec<_> = (0..features.len()).map(|i| (i, i)).collect();
    let alignment = align_absolute_orientation(&x, &y, &pairs)?;

    let truth_cloud = truth.eval(&opts.density.samples(truth))?;
    let recon_cloud: Vec<_> = recon
        .eval(&opts.density.samples(recon))?
        .iter()
        .map(|p| alignment.apply(p))
        .collect();
    let eye = eye_distance(truth, features)?;
    if !(eye > 0.0) {
        return Err(Error::Degenerate("eye features coincide on the truth surface".into()));
    }
    let d = nearest_distances(&truth_cloud, &recon_cloud);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let rms = (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let hausdorff_pct = opts.hausdorff.then(|| {
        let back = nearest_distances(&recon_cloud, &truth_cloud);
        let h = d.iter().chain(&back).copied().fold(0.0, f64::max);
        100.0 * h / eye
    });
    Ok(EvalReport {
        mean_pct: 100.0 * mean / eye,
        rms_pct: 100.0 * rms / eye,
        n_samples: d.len(),
        alignment,
        hausdorff_pct,
    })
}

/// ASCII OBJ of a regular `density` grid: `v`, `vn` and triangle `f`
/// records with 1-based `v//vn` indices.
pub fn mesh_obj(surface: &BsplineSurface, density: UvGrid) -> Result<String> {
    if density.nu < 2 || density.nv < 2 {
        return Err(Error::usage("mesh density must be at least 2x2"));
    }
    let uv = density.samples(surface);
    let normals = surface.normals_at(&uv)?;
    let mut out = String::new();
    for p in surface.eval(&uv)? {
        let _ = writeln!(out, "v {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
    }
    for (n, &ok) in normals.normals.iter().zip(&normals.valid) {
        let n = if ok { *n } else { Vector3::z() };
        let _ = writeln!(out, "vn {:.17e} {:.17e} {:.17e}", n.x, n.y, n.z);
    }
    let idx = |iu: usize, iv: usize| iv * density.nu + iu + 1;
    for iv in 0..density.nv - 1 {
        for iu in 0..density.nu - 1 {
            let (a, b, c, d) = (idx(iu, iv), idx(iu + 1, iv), idx(iu + 1, iv + 1), idx(iu, iv + 1));
            let _ = writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}");
            let _ = writeln!(out, "f {a}//{a} {c}//{c} {d}//{d}");
        }
    }
    Ok(out)
}

pub fn export_mesh(surface: &BsplineSurface, density: UvGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mesh_obj(surface, density)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{ControlGrid, KnotVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn alignment_of_identical_clouds_is_identity() {
        let x = cloud(10, 1);
        let pairs: Vec<_> = (0..10).map(|i| (i, i)).collect();
        let a = align_absolute_orientation(&x, &x, &pairs).unwrap();
        assert!((a.s - 1.0).abs() < 1e-10);
        assert!((a.r - Matrix3::identity()).abs().max() < 1e-10);
        assert!(a.t.norm() < 1e-10);
    }

    #[test]
    fn collinear_alignment_is_degenerate() {
        let x: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let pairs: Vec<_> = (0..5).map(|i| (i, i)).collect();
        assert!(matches!(align_absolute_orientation(&x, &x, &pairs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn kd_tree_matches_linear_scan() {
        let pts = cloud(300, 2);
        let tree = KdTree::new(pts.clone());
        for q in cloud(50, 3) {
            let (_, d2) = tree.nearest(&q).unwrap();
            let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert_eq!(d2, brute);
        }
        assert!(KdTree::new(Vec::new()).nearest(&Vector3::zeros()).is_none());
    }

    fn flat(size: usize) -> BsplineSurface {
        let g = KnotVector::clamped_uniform(size).unwrap().greville();
        BsplineSurface::clamped(ControlGrid::from_fn(size, size, |m, n| Vector3::new(g[m], g[n], 0.0))).unwrap()
    }

    #[test]
    fn two_by_two_mesh() {
        let obj = mesh_obj(&flat(4), UvGrid::new(2, 2)).unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 2);
        for l in obj.lines().filter(|l| l.starts_with("vn ")) {
            let v: Vec<f64> = l[3..].split_whitespace().map(|t| t.parse().unwrap()).collect();
            assert_eq!(v, vec![0.0, 0.0, 1.0]);
        }
        assert!(mesh_obj(&flat(4), UvGrid { nu: 1, nv: 3 }).is_err());
    }

    #[test]
    fn rounded_report_keeps_two_decimals() {
        let r = EvalReport {
            mean_pct: 1.23456,
            rms_pct: 2.0049,
            n_samples: 4,
            alignment: Similarity::identity(),
            hausdorff_pct: None,
        }
        .rounded();
        assert_eq!((r.mean_pct, r.rms_pct), (1.23, 2.0));
        assert!(!serde_json::to_string(&r).unwrap().contains("hausdorff"));
    }
}
