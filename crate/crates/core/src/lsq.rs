//! Accumulation and solution of sparse linear least-squares problems through
//! banded normal equations.
//!
//! Every system in the reconstruction touches control points only through
//! 4×4 stencils, so with the row-major control layout the normal matrix is
//! banded with half-bandwidth `3 * (3N + 3) + 2`. Rows are streamed into the
//! accumulator and never stored.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot size below which the normal matrix is declared singular.
const PIVOT_TOL: f64 = 1e-12;

/// Receives weighted least-squares rows `Σ entries · x ≈ rhs`.
pub trait RowSink {
    fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64);
}

/// Half-bandwidth of normal matrices for a grid with `cols` control points
/// along v.
pub fn stencil_bandwidth(cols: usize) -> usize {
    3 * (3 * cols + 3) + 2
}

/// Symmetric banded normal equations `AᵀA x = Aᵀy`, lower band stored.
#[derive(Debug, Clone)]
pub struct BandedNormalEquations {
    n: usize,
    kd: usize,
    band: Vec<f64>,
    rhs: Vec<f64>,
}

impl BandedNormalEquations {
    pub fn new(n: usize, kd: usize) -> Self {
        let kd = kd.min(n.saturating_sub(1));
        Self {
            n,
            kd,
            band: vec![0.0; n * (kd + 1)],
            rhs: vec![0.0; n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.kd);
        i * (self.kd + 1) + (i - j)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, (0..self.n).map(|i| self.band[self.at(i, i)]))
    }

    pub fn mean_diagonal(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.diagonal().sum() / self.n as f64
        }
    }

    /// Adds `weight · ‖x − target‖²` to the objective.
    pub fn add_ridge(&mut self, weight: f64, target: &DVector<f64>) {
        assert_eq!(target.len(), self.n);
        for i in 0..self.n {
            let k = self.at(i, i);
            self.band[k] += weight;
            self.rhs[i] += weight * target[i];
        }
    }

    /// Dense copies of the normal matrix and right-hand side.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(self.kd)..=i {
                let v = self.band[self.at(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        (m, DVector::from_column_slice(&self.rhs))
    }

    /// Banded Cholesky factorisation followed by two triangular solves.
    pub fn solve(&self) -> Result<DVector<f64>> {
        let n = self.n;
        let kd = self.kd;
        let w = kd + 1;
        let max_diag = self.diagonal().amax();
        let tol = PIVOT_TOL * max_diag.max(f64::MIN_POSITIVE);
        let mut l = self.band.clone();

        for j in 0..n {
            let lo = j.saturating_sub(kd);
            let mut d = l[j * w];
            for k in lo..j {
                let v = l[j * w + (j - k)];
                d -= v * v;
            }
            if !(d > tol) {
                return Err(self.rank_deficiency());
            }
            let d = d.sqrt();
            l[j * w] = d;
            for i in j + 1..(j + kd + 1).min(n) {
                let lo_i = i.saturating_sub(kd).max(lo);
                let mut s = l[i * w + (i - j)];
                for k in lo_i..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                l[i * w + (i - j)] = s / d;
            }
        }

        let mut x = self.rhs.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(kd)..i {
                s -= l[i * w + (i - k)] * x[k];
            }
            x[i] = s / l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + kd + 1).min(n) {
                s -= l[k * w + (k - i)] * x[k];
            }
            x[i] = s / l[i * w];
        }
        Ok(DVector::from_vec(x))
    }

    fn rank_deficiency(&self) -> Error {
        let (dense, _) = self.to_dense();
        let eig = dense.symmetric_eigenvalues();
        let max = eig.amax();
        let null_dim = eig.iter().filter(|&&e| e <= PIVOT_TOL * max).count().max(1);
        Error::RankDeficient {
            size: self.n,
            null_dim,
        }
    }
}

impl RowSink for BandedNormalEquations {
    fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        let w = self.kd + 1;
        for &(ca, va) in entries {
            for &(cb, vb) in entries {
                if ca >= cb {
                    assert!(ca - cb <= self.kd, "row entries {ca}, {cb} exceed the bandwidth");
                    self.band[ca * w + (ca - cb)] += va * vb;
                }
            }
            self.rhs[ca] += va * rhs;
        }
    }
}
