use rand::Rng;
use rand_distr::StandardNormal;

use super::{Matrix, NumericError};

/// Largest jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-4;

/// Lower-triangular factor together with the diagonal jitter that made it succeed.
#[derive(Clone, Debug)]
pub struct Cholesky {
    pub factor: Matrix,
    pub jitter: f64,
}

/// Factors `c + jitter·I = L·Lᵀ`.
///
/// On failure the jitter is raised tenfold (starting from 1e-12 when zero)
/// until it exceeds [`MAX_JITTER`].
pub fn cholesky(c: &Matrix, jitter: f64) -> Result<Cholesky, NumericError> {
    if c.rows() != c.cols() {
        return Err(NumericError::ShapeMismatch { op: "cholesky", left: c.shape(), right: c.shape() });
    }
    let mut j = jitter.max(0.0);
    loop {
        if let Some(factor) = try_cholesky(c, j) {
            return Ok(Cholesky { factor, jitter: j });
        }
        j = if j == 0.0 { 1e-12 } else { j * 10.0 };
        if j > MAX_JITTER * (1.0 + 1e-9) {
            return Err(NumericError::NotPositiveDefinite { max_jitter: MAX_JITTER });
        }
    }
}

fn try_cholesky(c: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = c.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = c[(i, j)];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solves `L·Lᵀ·x = b` for a column `b`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    x
}

/// Ridge added to the normal equations of [`least_squares`].
pub const LEAST_SQUARES_RIDGE: f64 = 1e-8;

/// Minimises `‖A·x − b‖² + 1e-8·‖x‖²` through the normal equations.
pub fn least_squares(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericError> {
    if a.rows() != b.len() {
        return Err(NumericError::ShapeMismatch {
            op: "least_squares",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    let mut gram = a.t_matmul(a)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += LEAST_SQUARES_RIDGE;
    }
    let rhs = a.t_matmul(&Matrix::column(b))?;
    let chol = cholesky(&gram, 0.0)?;
    Ok(cholesky_solve(&chol.factor, rhs.data()))
}

/// One draw `L·g` with `g` standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(l: &Matrix, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..l.cols()).map(|_| rng.sample(StandardNormal)).collect();
    (0..l.rows()).map(|i| (0..=i.min(l.cols() - 1)).map(|k| l[(i, k)] * g[k]).sum()).collect()
}
