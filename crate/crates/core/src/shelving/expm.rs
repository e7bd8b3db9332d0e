//! Dense matrices and the exponential of a rate-equation generator.

use crate::error::{ReadoutError, Result};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ReadoutError::invalid("matrix", "rows must form a square matrix"));
        }
        Ok(Matrix {
            n,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self[(i, j)]).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    fn normalize_columns(&mut self) {
        for j in 0..self.n {
            let s = self.column_sum(j);
            if s > 0.0 {
                for i in 0..self.n {
                    self.data[i * self.n + j] /= s;
                }
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Checks that `g` is a rate generator: non-negative off-diagonal entries and
/// column sums zero up to rounding.
pub fn check_generator(g: &Matrix) -> Result<()> {
    let scale = g.max_abs().max(f64::MIN_POSITIVE);
    for j in 0..g.dim() {
        for i in 0..g.dim() {
            let x = g[(i, j)];
            if !x.is_finite() {
                return Err(ReadoutError::NotStochastic(format!("entry ({i}, {j}) is {x}")));
            }
            if i != j && x < 0.0 {
                return Err(ReadoutError::NotStochastic(format!(
                    "negative off-diagonal entry ({i}, {j}) = {x}"
                )));
            }
        }
        let s = g.column_sum(j);
        if s.abs() > 1e-12 * scale * g.dim() as f64 {
            return Err(ReadoutError::NotStochastic(format!("column {j} sums to {s}")));
        }
    }
    Ok(())
}

/// `exp(g t)` for a generator `g`.
///
/// Shifts `g` by its largest exit rate `q` so that `g + qI` is non-negative,
/// sums the Taylor series of the shifted matrix over a step with `q h <= 1/2`
/// (no cancellation since every term is non-negative) and squares back up.
/// Columns are renormalized after every squaring, so the result stays
/// column-stochastic however stiff `g` is.
pub fn expm_generator(g: &Matrix, t: f64) -> Result<Matrix> {
    check_generator(g)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(ReadoutError::invalid("duration", format!("must be finite and >= 0, got {t}")));
    }
    let n = g.dim();
    let q = (0..n).fold(0.0f64, |m, i| m.max(-g[(i, i)]));
    if q == 0.0 || t == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let mut squarings = 0u32;
    let mut h = t;
    while q * h > 0.5 {
        h *= 0.5;
        squarings += 1;
    }
    let mut shifted = g.clone();
    for i in 0..n {
        for j in 0..n {
            shifted[(i, j)] *= h;
        }
        shifted[(i, i)] += q * h;
    }
    // Taylor series of exp(shifted); terms fall at least as 2^-k / k!.
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..40 {
        term = term.mul(&shifted);
        let inv = 1.0 / k as f64;
        term.data.iter_mut().for_each(|x| *x *= inv);
        let mut largest = 0.0f64;
        for (s, x) in sum.data.iter_mut().zip(&term.data) {
            *s += x;
            largest = largest.max(*x);
        }
        if largest < 1e-18 {
            break;
        }
    }
    let damp = (-q * h).exp();
    sum.data.iter_mut().for_each(|x| *x *= damp);
    sum.normalize_columns();
    for _ in 0..squarings {
        sum = sum.mul(&sum);
        sum.normalize_columns();
    }
    Ok(sum)
}
