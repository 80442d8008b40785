//! Tensor-product cubic B-spline surfaces and the sparse coefficient
//! matrices that relate control points to sampled positions and
//! derivatives.
//!
//! Control points are flattened into the vector `b` (length 3MN) row-major
//! over the grid: index `3 * (m * N + n) + c` holds component `c` (x, y, z)
//! of control point `(m, n)`. Every module shares this order.

mod coeff;
mod knots;

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use coeff::{CoeffKind, CoeffMatrix, Selection, Stencil, STENCIL};
pub use knots::{KnotVector, DEGREE, ORDER};

use crate::error::{Error, Result};
use crate::io;

/// Below this length of `F_u × F_v` a sample's normal is considered undefined.
pub const DEGENERATE_NORMAL: f64 = 1e-12;

/// M×N grid of 3D control points.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    rows: usize,
    cols: usize,
    points: Vec<Vector3<f64>>,
}

impl ControlGrid {
    pub fn new(rows: usize, cols: usize, points: Vec<Vector3<f64>>) -> Result<Self> {
        if rows < ORDER || cols < ORDER {
            return Err(Error::usage(format!(
                "control grid must be at least {ORDER}x{ORDER}, got {rows}x{cols}"
            )));
        }
        if points.len() != rows * cols {
            return Err(Error::usage(format!(
                "{}x{} grid needs {} points, got {}",
                rows,
                cols,
                rows * cols,
                points.len()
            )));
        }
        Ok(Self { rows, cols, points })
    }

    /// Panics if the grid is smaller than 4×4.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Vector3<f64>) -> Self {
        let points = (0..rows)
            .flat_map(|m| (0..cols).map(move |n| (m, n)))
            .map(|(m, n)| f(m, n))
            .collect();
        Self::new(rows, cols, points).expect("grid dimensions")
    }

    pub fn from_vector(rows: usize, cols: usize, b: &DVector<f64>) -> Result<Self> {
        if b.len() != 3 * rows * cols {
            return Err(Error::usage(format!(
                "control vector of length {} does not fit a {rows}x{cols} grid",
                b.len()
            )));
        }
        let points = b
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Self::new(rows, cols, points)
    }

    /// M, the number of control points along u.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// N, the number of control points along v.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self, m: usize, n: usize) -> usize {
        m * self.cols + n
    }

    pub fn get(&self, m: usize, n: usize) -> Vector3<f64> {
        self.points[self.index(m, n)]
    }

    pub fn set(&mut self, m: usize, n: usize, p: Vector3<f64>) {
        let i = self.index(m, n);
        self.points[i] = p;
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.len(), self.points.iter().flat_map(|p| [p.x, p.y, p.z]))
    }
}

/// Parameter pairs `(u, v)` at which a surface is sampled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UvSamples {
    points: Vec<[f64; 2]>,
}

impl UvSamples {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, [f64; 2]> {
        self.points.iter()
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.points
    }
}

/// Regular `nu × nv` lattice spanning a surface's full domain.
///
/// Sample `k = iv * nu + iu` sits at `u = lo_u + iu / (nu - 1) * (hi_u - lo_u)`
/// (likewise for v), so the lattice doubles as a row-major pixel grid with
/// columns along u.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UvGrid {
    pub nu: usize,
    pub nv: usize,
}

impl UvGrid {
    /// Panics on fewer than two samples per direction.
    pub fn new(nu: usize, nv: usize) -> Self {
        assert!(nu >= 2 && nv >= 2, "uv grid needs at least 2x2 samples");
        Self { nu, nv }
    }

    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self, surface: &BsplineSurface) -> UvSamples {
        let (ulo, uhi) = surface.knots_u().domain();
        let (vlo, vhi) = surface.knots_v().domain();
        let lerp = |lo: f64, hi: f64, i: usize, n: usize| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let points = (0..self.nv)
            .flat_map(|iv| (0..self.nu).map(move |iu| (iu, iv)))
            .map(|(iu, iv)| [lerp(ulo, uhi, iu, self.nu), lerp(vlo, vhi, iv, self.nv)])
            .collect();
        UvSamples { points }
    }
}

/// Position and first/second partial derivatives at one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vector3<f64>,
    pub du: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub duu: Vector3<f64>,
    pub dvv: Vector3<f64>,
    pub duv: Vector3<f64>,
}

impl SurfacePoint {
    /// Unit normal `F_u × F_v / |F_u × F_v|`, `None` when degenerate.
    pub fn normal(&self) -> Option<Vector3<f64>> {
        let n = self.du.cross(&self.dv);
        let len = n.norm();
        (len >= DEGENERATE_NORMAL).then(|| n / len)
    }
}

/// Per-sample unit normals with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
    pub uv: UvSamples,
}

impl NormalField {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// The stacked 3p vector `h`; invalid entries are zero.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.len(),
            self.normals
                .iter()
                .zip(&self.valid)
                .flat_map(|(n, &ok)| if ok { [n.x, n.y, n.z] } else { [0.0; 3] }),
        )
    }
}

/// Cubic tensor-product B-spline surface `F(u, v) = Σ N_m(u) N_n(v) b_mn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurfaceFile", into = "SurfaceFile")]
pub struct BsplineSurface {
    grid: ControlGrid,
    knots_u: KnotVector,
    knots_v: KnotVector,
}

impl BsplineSurface {
    pub fn new(grid: ControlGrid, knots_u: KnotVector, knots_v: KnotVector) -> Result<Self> {
        if knots_u.control_count() != grid.rows() || knots_v.control_count() != grid.cols() {
            return Err(Error::usage(format!(
                "knot vectors of length {}/{} do not match a {}x{} grid",
                knots_u.as_slice().len(),
                knots_v.as_slice().len(),
                grid.rows(),
                grid.cols()
            )));
        }
        Ok(Self {
            grid,
            knots_u,
            knots_v,
        })
    }

    /// Surface over `[0, 1]²` with clamped-uniform knots in both directions.
    pub fn clamped(grid: ControlGrid) -> Result<Self> {
        let ku = KnotVector::clamped_uniform(grid.rows())?;
        let kv = KnotVector::clamped_uniform(grid.cols())?;
        Self::new(grid, ku, kv)
    }

    pub fn grid(&self) -> &ControlGrid {
        &self.grid
    }

    pub fn knots_u(&self) -> &KnotVector {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &KnotVector {
        &self.knots_v
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.knots_u.contains(u) && self.knots_v.contains(v)
    }

    pub fn control_vector(&self) -> DVector<f64> {
        self.grid.to_vector()
    }

    /// Same knots, control points replaced by `b`.
    pub fn with_control_vector(&self, b: &DVector<f64>) -> Result<Self> {
        let grid = ControlGrid::from_vector(self.grid.rows(), self.grid.cols(), b)?;
        Ok(Self {
            grid,
            knots_u: self.knots_u.clone(),
            knots_v: self.knots_v.clone(),
        })
    }

    pub fn point(&self, u: f64, v: f64) -> Result<Vector3<f64>> {
        Ok(self.evaluate(u, v)?.position)
    }

    /// Position and partial derivatives up to second order, via the local
    /// 4×4 block of control points around the sample's knot span.
    pub fn evaluate(&self, u: f64, v: f64) -> Result<SurfacePoint> {
        let bu = self.knots_u.local(u)?;
        let bv = self.knots_v.local(v)?;
        let mut acc = [Vector3::zeros(); 6];
        for a in 0..ORDER {
            for c in 0..ORDER {
                let p = self.grid.get(bu.first + a, bv.first + c);
                let (nu, nv) = (bu.values, bv.values);
                acc[0] += nu[0][a] * nv[0][c] * p;
                acc[1] += nu[1][a] * nv[0][c] * p;
                acc[2] += nu[0][a] * nv[1][c] * p;
                acc[3] += nu[2][a] * nv[0][c] * p;
                acc[4] += nu[0][a] * nv[2][c] * p;
                acc[5] += nu[1][a] * nv[1][c] * p;
            }
        }
        Ok(SurfacePoint {
            position: acc[0],
            du: acc[1],
            dv: acc[2],
            duu: acc[3],
            dvv: acc[4],
            duv: acc[5],
        })
    }

    pub fn eval(&self, uv: &UvSamples) -> Result<Vec<Vector3<f64>>> {
        uv.iter().map(|&[u, v]| self.point(u, v)).collect()
    }

    /// Unit normals at the samples; degenerate samples are flagged invalid.
    pub fn normals_at(&self, uv: &UvSamples) -> Result<NormalField> {
        let mut normals = Vec::with_capacity(uv.len());
        let mut valid = Vec::with_capacity(uv.len());
        for &[u, v] in uv.iter() {
            match self.evaluate(u, v)?.normal() {
                Some(n) => {
                    normals.push(n);
                    valid.push(true);
                }
                None => {
                    normals.push(Vector3::zeros());
                    valid.push(false);
                }
            }
        }
        Ok(NormalField {
            normals,
            valid,
            uv: uv.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, self)
    }
}

#[derive(Serialize, Deserialize)]
struct SurfaceFile {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    points: Vec<[f64; 3]>,
}

impl TryFrom<SurfaceFile> for BsplineSurface {
    type Error = Error;

    fn try_from(f: SurfaceFile) -> Result<Self> {
        let points = f.points.iter().map(|p| Vector3::from(*p)).collect();
        let grid = ControlGrid::new(f.m, f.n, points)?;
        BsplineSurface::new(grid, KnotVector::new(f.knots_u)?, KnotVector::new(f.knots_v)?)
    }
}

impl From<BsplineSurface> for SurfaceFile {
    fn from(s: BsplineSurface) -> Self {
        SurfaceFile {
            m: s.grid.rows,
            n: s.grid.cols,
            knots_u: s.knots_u.as_slice().to_vec(),
            knots_v: s.knots_v.as_slice().to_vec(),
            points: s.grid.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

/// Skew-symmetric matrix `[w]×` with `[w]× v = w × v`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Blockwise cross product `w ⊗ v` of two stacked 3p vectors.
pub fn cross_stack(w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    assert_eq!(w.len(), v.len(), "stacked vectors differ in length");
    assert_eq!(w.len() % 3, 0, "stacked vector length must be a multiple of 3");
    let mut out = DVector::zeros(w.len());
    for k in 0..w.len() / 3 {
        let c = w.fixed_rows::<3>(3 * k).cross(&v.fixed_rows::<3>(3 * k));
        out.fixed_rows_mut::<3>(3 * k).copy_from(&c);
    }
    out
}

/// The diagonal of `Λ`: reciprocal lengths of the stacked 3-vectors, each
/// repeated three times. Zero-length blocks map to zero.
pub fn inverse_lengths(w: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(w.len());
    for k in 0..w.len() / 3 {
        let len = w.fixed_rows::<3>(3 * k).norm();
        let inv = if len >= DEGENERATE_NORMAL { 1.0 / len } else { 0.0 };
        out.fixed_rows_mut::<3>(3 * k).fill(inv);
    }
    out
}
