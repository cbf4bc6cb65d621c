use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::numeric::Matrix;
use crate::skeleton::PoseParamSequence;

use super::AugmentError;

/// Fraction of pose variance retained by default.
pub const EXPLAINED_VARIANCE: f64 = 0.95;

/// Linear pose latent: whitened principal components of pose parameters.
///
/// `encode(θ) = ((θ − mean) · W) / s` and `decode(z) = mean + (z ∘ s) · Wᵀ`
/// with orthonormal columns `W` and per-component standard deviations `s`,
/// so latent coordinates of the training poses have unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaLatentSpace {
    pub mean: Vec<f64>,
    /// `P x k`, orthonormal columns sorted by decreasing variance.
    pub components: Matrix,
    pub scales: Vec<f64>,
}

impl PcaLatentSpace {
    /// Fits on the rows of `data` (`frames x P`), keeping the fewest leading
    /// components whose variance reaches `threshold` of the total.
    pub fn fit(data: &Matrix, threshold: f64) -> Result<Self, AugmentError> {
        let (n, p) = data.shape();
        if n < 2 {
            return Err(AugmentError::LatentNotFitted("need at least two poses"));
        }
        let mean: Vec<f64> = data.sum_rows().data().iter().map(|s| s / n as f64).collect();
        let centered = Matrix::from_fn(n, p, |r, c| data[(r, c)] - mean[c]);
        let cov = centered.t_matmul(&centered).expect("square").scale(1.0 / (n - 1) as f64);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(p, p, cov.data()));

        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        if !(total > 0.0) {
            return Err(AugmentError::LatentNotFitted("pose data has no variance"));
        }
        let mut keep = 0;
        let mut acc = 0.0;
        for &i in &order {
            acc += eig.eigenvalues[i].max(0.0);
            keep += 1;
            if acc >= threshold * total {
                break;
            }
        }
        let chosen = &order[..keep];
        let components = Matrix::from_fn(p, keep, |r, c| eig.eigenvectors[(r, chosen[c])]);
        let scales = chosen.iter().map(|&i| eig.eigenvalues[i].max(1e-12).sqrt()).collect();
        Ok(Self { mean, components, scales })
    }

    /// Fits on every frame of `poses` at [`EXPLAINED_VARIANCE`].
    pub fn fit_poses(poses: &[PoseParamSequence]) -> Result<Self, AugmentError> {
        let first = poses.first().ok_or(AugmentError::LatentNotFitted("no pose sequences"))?;
        let rows: usize = poses.iter().map(PoseParamSequence::len).sum();
        let mut stacked = Matrix::zeros(rows, first.params.cols());
        let mut r = 0;
        for ps in poses {
            if ps.params.cols() != stacked.cols() {
                return Err(AugmentError::PoseMismatch("pose sequences differ in width".into()));
            }
            for i in 0..ps.len() {
                stacked.row_mut(r).copy_from_slice(ps.params.row(i));
                r += 1;
            }
        }
        Self::fit(&stacked, EXPLAINED_VARIANCE)
    }

    pub fn latent_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn pose_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn encode(&self, poses: &Matrix) -> Matrix {
        let centered = Matrix::from_fn(poses.rows(), poses.cols(), |r, c| poses[(r, c)] - self.mean[c]);
        let mut z = centered.matmul(&self.components).expect("pose width checked by caller");
        for r in 0..z.rows() {
            for (v, s) in z.row_mut(r).iter_mut().zip(&self.scales) {
                *v /= s;
            }
        }
        z
    }

    pub fn decode(&self, latent: &Matrix) -> Matrix {
        let scaled = Matrix::from_fn(latent.rows(), latent.cols(), |r, c| latent[(r, c)] * self.scales[c]);
        let mut poses = scaled.matmul_t(&self.components).expect("latent width checked by caller");
        for r in 0..poses.rows() {
            for (v, m) in poses.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        poses
    }
}
