use rand::Rng;

use crate::numeric::{cholesky, mvn_sample, Matrix, NumericError};

/// Zero-mean multivariate normal over `N` frames whose covariance decays
/// linearly with frame distance: `C[j][j'] = 1 − |j − j'| / (2N)`.
#[derive(Clone, Debug)]
pub struct SmoothedNoiseSampler {
    len: usize,
    covariance: Matrix,
    factor: Matrix,
    jitter: f64,
}

impl SmoothedNoiseSampler {
    pub fn new(len: usize) -> Result<Self, NumericError> {
        let covariance = Matrix::from_fn(len, len, |j, k| smoothed_covariance(len, j, k));
        let chol = cholesky(&covariance, 0.0)?;
        Ok(Self { len, covariance, factor: chol.factor, jitter: chol.jitter })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// Diagonal jitter the factorization needed (0 when `C` factored as is).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `N x dims` matrix; every column is an independent draw from `MN(0, C)`
    /// multiplied by `scale`, so each entry has standard deviation `scale`.
    pub fn sample<R: Rng + ?Sized>(&self, dims: usize, scale: f64, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(self.len, dims);
        if scale == 0.0 {
            return out;
        }
        for d in 0..dims {
            let draw = mvn_sample(&self.factor, rng);
            for (j, v) in draw.into_iter().enumerate() {
                out[(j, d)] = v * scale;
            }
        }
        out
    }
}

pub fn smoothed_covariance(len: usize, j: usize, k: usize) -> f64 {
    1.0 - j.abs_diff(k) as f64 / (2.0 * len as f64)
}
