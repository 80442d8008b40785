use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};

use super::{BsplineSurface, UvSamples};
use crate::error::{Error, Result};
use crate::surface::knots::ORDER;

/// Number of control points influencing one sample.
pub const STENCIL: usize = ORDER * ORDER;

/// Which derivative of the surface a coefficient matrix maps `b` onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoeffKind {
    /// Position `F`.
    T,
    /// `∂F/∂u`.
    T1,
    /// `∂F/∂v`.
    T2,
    /// `∂²F/∂u²`.
    T11,
    /// `∂²F/∂v²`.
    T22,
    /// `∂²F/∂u∂v`.
    T12,
}

impl CoeffKind {
    pub const ALL: [CoeffKind; 6] = [
        CoeffKind::T,
        CoeffKind::T1,
        CoeffKind::T2,
        CoeffKind::T11,
        CoeffKind::T22,
        CoeffKind::T12,
    ];

    /// Derivative orders in (u, v).
    fn orders(self) -> (usize, usize) {
        match self {
            CoeffKind::T => (0, 0),
            CoeffKind::T1 => (1, 0),
            CoeffKind::T2 => (0, 1),
            CoeffKind::T11 => (2, 0),
            CoeffKind::T22 => (0, 2),
            CoeffKind::T12 => (1, 1),
        }
    }
}

impl fmt::Display for CoeffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CoeffKind::T => "T",
            CoeffKind::T1 => "T1",
            CoeffKind::T2 => "T2",
            CoeffKind::T11 => "T11",
            CoeffKind::T22 => "T22",
            CoeffKind::T12 => "T12",
        };
        f.write_str(s)
    }
}

impl FromStr for CoeffKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoeffKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::usage(format!("unknown coefficient kind `{s}`")))
    }
}

/// Scalar weights of the 16 control points that shape one sample.
///
/// The 3×3MN row block of the sample is `weights ⊗ I₃`: the same scalar
/// weight applies to each of a control point's x, y and z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub points: [usize; STENCIL],
    pub weights: [f64; STENCIL],
}

impl Stencil {
    pub fn apply(&self, b: &[f64]) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (&p, &w) in self.points.iter().zip(&self.weights) {
            acc += w * Vector3::new(b[3 * p], b[3 * p + 1], b[3 * p + 2]);
        }
        acc
    }
}

/// Row selection / column masking applied to a coefficient matrix.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    /// Keep the sample blocks whose mask entry is true (valid normal pixels).
    Normals(&'a [bool]),
    /// Zero every column acting on a z component.
    Xy,
    /// Keep the listed sample blocks, in order (feature points).
    Features(&'a [usize]),
}

/// Sparse linear map from the flattened control vector `b` (3MN) to stacked
/// 3-vectors, one 3-row block per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMatrix {
    kind: CoeffKind,
    cols: usize,
    stencils: Vec<Stencil>,
    xy_only: bool,
}

impl CoeffMatrix {
    pub fn assemble(surface: &BsplineSurface, uv: &UvSamples, kind: CoeffKind) -> Result<Self> {
        let n = surface.grid().cols();
        let (du, dv) = kind.orders();
        let stencils = uv
            .iter()
            .map(|&[u, v]| {
                let bu = surface.knots_u().local(u)?;
                let bv = surface.knots_v().local(v)?;
                let mut st = Stencil {
                    points: [0; STENCIL],
                    weights: [0.0; STENCIL],
                };
                for a in 0..ORDER {
                    for c in 0..ORDER {
                        let k = a * ORDER + c;
                        st.points[k] = (bu.first + a) * n + bv.first + c;
                        st.weights[k] = bu.values[du][a] * bv.values[dv][c];
                    }
                }
                Ok(st)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            cols: 3 * surface.grid().len(),
            stencils,
            xy_only: false,
        })
    }

    pub fn kind(&self) -> CoeffKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        3 * self.stencils.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn samples(&self) -> usize {
        self.stencils.len()
    }

    pub fn stencil(&self, sample: usize) -> &Stencil {
        &self.stencils[sample]
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    /// True once the z columns have been zeroed by [`Selection::Xy`].
    pub fn is_xy_only(&self) -> bool {
        self.xy_only
    }

    /// Non-zero entries `(col, value)` of the row for `component` of `sample`.
    pub fn row(&self, sample: usize, component: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let st = &self.stencils[sample];
        let live = !(self.xy_only && component == 2);
        st.points
            .iter()
            .zip(st.weights.iter())
            .filter(move |_| live)
            .map(move |(&p, &w)| (3 * p + component, w))
    }

    /// The 3-vector produced by `sample`'s row block.
    pub fn apply_sample(&self, sample: usize, b: &DVector<f64>) -> Vector3<f64> {
        let mut v = self.stencils[sample].apply(b.as_slice());
        if self.xy_only {
            v.z = 0.0;
        }
        v
    }

    pub fn mul_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.cols, "control vector length mismatch");
        let mut out = DVector::zeros(self.rows());
        for k in 0..self.samples() {
            let v = self.apply_sample(k, b);
            out.fixed_rows_mut::<3>(3 * k).copy_from(&v);
        }
        out
    }

    /// Sparse `(row, col, value)` triplets, zero entries omitted.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.rows() * STENCIL);
        for k in 0..self.samples() {
            for c in 0..3 {
                out.extend(
                    self.row(k, c)
                        .filter(|&(_, w)| w != 0.0)
                        .map(|(col, w)| (3 * k + c, col, w)),
                );
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn select(&self, selection: Selection<'_>) -> Result<Self> {
        let mut out = self.clone();
        match selection {
            Selection::Xy => out.xy_only = true,
            Selection::Normals(mask) => {
                if mask.len() != self.samples() {
                    return Err(Error::usage(format!(
                        "normal mask has {} entries for {} samples",
                        mask.len(),
                        self.samples()
                    )));
                }
                out.stencils = self
                    .stencils
                    .iter()
                    .zip(mask)
                    .filter(|(_, &keep)| keep)
                    .map(|(s, _)| *s)
                    .collect();
            }
            Selection::Features(indices) => {
                out.stencils = indices
                    .iter()
                    .map(|&i| {
                        self.stencils.get(i).copied().ok_or_else(|| {
                            Error::usage(format!(
                                "sample index {i} out of range ({} samples)",
                                self.samples()
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
            }
        }
        Ok(out)
    }
}
