use crate::error::{Error, Result};

/// Polynomial degree of the surface basis in each parameter direction.
pub const DEGREE: usize = 3;
/// Basis order (degree + 1); each sample touches `ORDER × ORDER` control points.
pub const ORDER: usize = DEGREE + 1;

/// Non-decreasing knot sequence for one parameter direction.
///
/// A vector of length `M + 4` serves `M` control points. The evaluation
/// domain is `[knots[3], knots[M]]` (0-based), i.e. the span over which a
/// full set of four cubic basis functions is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
}

/// Non-zero basis values and derivatives at one parameter.
///
/// `values[d][j]` is the `d`-th derivative of `N_{first + j, 4}`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalBasis {
    pub first: usize,
    pub values: [[f64; ORDER]; 3],
}

impl KnotVector {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * ORDER {
            return Err(Error::usage(format!(
                "knot vector needs at least {} knots, got {}",
                2 * ORDER,
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::usage("knot vector contains non-finite values"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::usage("knot vector must be non-decreasing"));
        }
        let kv = Self { knots };
        let (lo, hi) = kv.domain();
        if hi <= lo {
            return Err(Error::usage(format!("empty evaluation domain [{lo}, {hi}]")));
        }
        Ok(kv)
    }

    /// Open knots on `[0, 1]`: end knots repeated four times, interior uniform.
    pub fn clamped_uniform(control_count: usize) -> Result<Self> {
        if control_count < ORDER {
            return Err(Error::usage(format!(
                "need at least {ORDER} control points per direction, got {control_count}"
            )));
        }
        let spans = control_count - DEGREE;
        let mut knots = vec![0.0; ORDER];
        knots.extend((1..spans).map(|i| i as f64 / spans as f64));
        knots.extend([1.0; ORDER]);
        Self::new(knots)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_count(&self) -> usize {
        self.knots.len() - ORDER
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[DEGREE], self.knots[self.control_count()])
    }

    pub fn contains(&self, u: f64) -> bool {
        let (lo, hi) = self.domain();
        (lo..=hi).contains(&u)
    }

    fn check(&self, u: f64) -> Result<()> {
        if self.contains(u) {
            Ok(())
        } else {
            let (lo, hi) = self.domain();
            Err(Error::Domain { value: u, lo, hi })
        }
    }

    /// Index `s` of the knot span with `knots[s] <= u < knots[s + 1]`.
    ///
    /// The upper domain bound belongs to the last non-empty span so that the
    /// closed domain is evaluable.
    pub fn span(&self, u: f64) -> Result<usize> {
        self.check(u)?;
        let last = self.control_count() - 1;
        let (_, hi) = self.domain();
        if u >= hi {
            let mut s = last;
            while self.knots[s] >= self.knots[s + 1] {
                s -= 1;
            }
            return Ok(s);
        }
        let count_le = self.knots.partition_point(|&k| k <= u);
        Ok((count_le - 1).clamp(DEGREE, last))
    }

    /// `N_{i,order}(u)` by the Cox–de Boor recursion; `0/0` terms vanish.
    pub fn basis(&self, order: usize, i: usize, u: f64) -> Result<f64> {
        if !(1..=ORDER).contains(&order) {
            return Err(Error::usage(format!("basis order must be in 1..={ORDER}")));
        }
        if i + order >= self.knots.len() {
            return Err(Error::usage(format!(
                "basis index {i} out of range for order {order}"
            )));
        }
        let span = self.span(u)?;
        Ok(cox_de_boor(&self.knots, span, order, i, u))
    }

    /// Greville abscissae; placing control points at these parameters
    /// reproduces affine functions exactly.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.control_count())
            .map(|i| self.knots[i + 1..=i + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }

    /// Non-zero cubic basis functions and their first two derivatives.
    pub(crate) fn local(&self, u: f64) -> Result<LocalBasis> {
        let span = self.span(u)?;
        Ok(LocalBasis {
            first: span - DEGREE,
            values: basis_derivatives(&self.knots, span, u),
        })
    }
}

fn cox_de_boor(knots: &[f64], span: usize, order: usize, i: usize, u: f64) -> f64 {
    if order == 1 {
        return if i == span { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let left = knots[i + order - 1] - knots[i];
    if left > 0.0 {
        value += (u - knots[i]) / left * cox_de_boor(knots, span, order - 1, i, u);
    }
    let right = knots[i + order] - knots[i + 1];
    if right > 0.0 {
        value += (knots[i + order] - u) / right * cox_de_boor(knots, span, order - 1, i + 1, u);
    }
    value
}

// Triangular table of basis values and divided differences, after
// Piegl & Tiller's `DersBasisFuns`, specialised to cubic and two derivatives.
fn basis_derivatives(knots: &[f64], span: usize, u: f64) -> [[f64; ORDER]; 3] {
    const P: usize = DEGREE;
    let mut ndu = [[0.0f64; ORDER]; ORDER];
    let mut left = [0.0f64; ORDER];
    let mut right = [0.0f64; ORDER];
    ndu[0][0] = 1.0;
    for j in 1..=P {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = [[0.0f64; ORDER]; 3];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }
    let mut a = [[0.0f64; ORDER]; 2];
    for r in 0..=P {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=2usize {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = P - k;
            if rk >= 0 {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { P - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = P as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= factor;
        }
        factor *= (P - k) as f64;
    }
    ders
}
