use crate::numeric::{pairwise_distance_matrix, Matrix, NumericError, Tape, Var};

/// `γ` (`N x M`): row `j` is the softmax of `−‖z'_j − z_i‖ / λ` over original frames `i`.
pub fn match_probabilities(z: &Matrix, z_aug: &Matrix, temperature: f64) -> Result<Matrix, NumericError> {
    if z.cols() != z_aug.cols() {
        return Err(NumericError::ShapeMismatch { op: "match_probabilities", left: z.shape(), right: z_aug.shape() });
    }
    Ok(pairwise_distance_matrix(z_aug, z).scale(-1.0).row_softmax(temperature))
}

/// Expected 0-based index under the probabilities of one row.
pub fn predicted_index(gamma_row: &[f64]) -> f64 {
    gamma_row.iter().enumerate().map(|(i, g)| g * i as f64).sum()
}

fn index_column(m: usize) -> Matrix {
    Matrix::from_fn(m, 1, |i, _| i as f64)
}

/// Regression loss recorded on `tape`; `targets[j]` is the original index
/// matched by augmented frame `j` (integral for augmented pairs).
pub fn regression_loss_var(
    tape: &mut Tape,
    z: Var,
    z_aug: Var,
    targets: &[f64],
    temperature: f64,
) -> Result<Var, NumericError> {
    let (m, n) = (tape.value(z).rows(), tape.value(z_aug).rows());
    if targets.len() != n {
        return Err(NumericError::ShapeMismatch { op: "regression_loss", left: (n, 1), right: (targets.len(), 1) });
    }
    let d = tape.pairwise_distances(z_aug, z)?;
    let neg = tape.scale(d, -1.0);
    let gamma = tape.row_softmax(neg, temperature);
    let idx = tape.constant(index_column(m));
    let j_hat = tape.matmul(gamma, idx)?;
    let gt = tape.constant(Matrix::column(targets));
    let diff = tape.sub(j_hat, gt)?;
    let sq = tape.hadamard(diff, diff)?;
    Ok(tape.mean(sq))
}

/// Contrastive loss recorded on `tape`.
///
/// For augmented frame `j` with positive `i = j_gt[j]`, the logits are
/// `−‖z_i − z'_m‖ / λ` over augmented frames `m`; the term is the negative
/// log-probability of `m = j`. Averaged over `j`.
pub fn contrastive_loss_var(
    tape: &mut Tape,
    z: Var,
    z_aug: Var,
    j_gt: &[usize],
    temperature: f64,
) -> Result<Var, NumericError> {
    let n = tape.value(z_aug).rows();
    if j_gt.len() != n {
        return Err(NumericError::ShapeMismatch { op: "contrastive_loss", left: (n, 1), right: (j_gt.len(), 1) });
    }
    let anchors = tape.select_rows(z, j_gt)?;
    let d = tape.pairwise_distances(anchors, z_aug)?;
    let neg = tape.scale(d, -1.0);
    let logp = tape.row_log_softmax(neg, temperature);
    let eye = tape.constant(Matrix::identity(n));
    let diag = tape.hadamard(logp, eye)?;
    let total = tape.sum(diag);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Value of [`regression_loss_var`] for fixed projections.
pub fn regression_loss(z: &Matrix, z_aug: &Matrix, j_gt: &[usize], temperature: f64) -> Result<f64, NumericError> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(z.clone()), tape.constant(z_aug.clone()));
    let targets: Vec<f64> = j_gt.iter().map(|&i| i as f64).collect();
    let l = regression_loss_var(&mut tape, a, b, &targets, temperature)?;
    Ok(tape.value(l)[(0, 0)])
}

/// Value of [`contrastive_loss_var`] for fixed projections.
pub fn contrastive_loss(z: &Matrix, z_aug: &Matrix, j_gt: &[usize], temperature: f64) -> Result<f64, NumericError> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(z.clone()), tape.constant(z_aug.clone()));
    let l = contrastive_loss_var(&mut tape, a, b, j_gt, temperature)?;
    Ok(tape.value(l)[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{check_gradients, random_matrix};
    use crate::numeric::substream;

    #[test]
    fn gamma_examples() {
        let z = Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.0, 3.0]]).unwrap();
        let g = match_probabilities(&z, &q, 0.1).unwrap();
        assert!((g[(0, 0)] - 0.5).abs() < 1e-15);

        let z = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let g = match_probabilities(&z, &q, 0.1).unwrap();
        let e = (-10f64).exp();
        assert!((g[(0, 0)] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((g[(0, 1)] - e / (1.0 + e)).abs() < 1e-18);
        assert!((g[(0, 0)] - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn predicted_index_examples() {
        assert_eq!(predicted_index(&[0.0, 0.0, 0.0, 1.0, 0.0]), 3.0);
        assert!((predicted_index(&[0.2; 5]) - 2.0).abs() < 1e-15);
        assert_eq!(predicted_index(&[0.25, 0.75]), 0.75);
    }

    #[test]
    fn regression_examples() {
        // uniform γ over 3 frames: ĵ = 1, target 0
        let z = Matrix::zeros(3, 2);
        let q = Matrix::zeros(1, 2);
        assert!((regression_loss(&z, &q, &[0], 0.1).unwrap() - 1.0).abs() < 1e-15);
        // separated embeddings, exact copies
        let z = Matrix::from_fn(5, 2, |i, c| if c == 0 { 2.0 * i as f64 } else { 0.0 });
        let j_gt = [0, 2, 3];
        let q = z.select_rows(&j_gt);
        assert!(regression_loss(&z, &q, &j_gt, 0.1).unwrap() < 1e-3);
    }

    #[test]
    fn contrastive_examples() {
        let z = Matrix::from_rows(&[vec![0.3, 1.0]]).unwrap();
        assert!(contrastive_loss(&z, &z, &[0], 0.1).unwrap().abs() < 1e-15);
        // positive at distance 0, single negative at distance 1
        let z = Matrix::from_rows(&[vec![0.0], vec![5.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(z), tape.constant(q));
        let anchors = tape.select_rows(a, &[0]).unwrap();
        let d = tape.pairwise_distances(anchors, b).unwrap();
        let neg = tape.scale(d, -1.0);
        let lp = tape.row_log_softmax(neg, 0.1);
        let term = -tape.value(lp)[(0, 0)];
        let expected = -(1.0 / (1.0 + (-10f64).exp())).ln();
        assert!((term - expected).abs() < 1e-15);
        assert!((term - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn translation_invariance() {
        let mut rng = substream(8, &[]);
        let z = random_matrix(&mut rng, 6, 4, 1.0);
        let q = random_matrix(&mut rng, 4, 4, 1.0);
        let shift = [0.7, -2.0, 3.5, 0.1];
        let add = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)] + shift[c]);
        let j_gt = [0, 1, 3, 5];
        let a = regression_loss(&z, &q, &j_gt, 0.1).unwrap();
        let b = regression_loss(&add(&z), &add(&q), &j_gt, 0.1).unwrap();
        assert!((a - b).abs() < 1e-10);
        let a = contrastive_loss(&z, &q, &j_gt, 0.1).unwrap();
        let b = contrastive_loss(&add(&z), &add(&q), &j_gt, 0.1).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn loss_gradients() {
        let mut rng = substream(9, &[]);
        let z = random_matrix(&mut rng, 4, 3, 1.0);
        let q = random_matrix(&mut rng, 3, 3, 1.0);
        let report = check_gradients(&[z.clone(), q.clone()], 1e-6, |t, v| {
            regression_loss_var(t, v[0], v[1], &[0.0, 2.0, 3.0], 0.5).unwrap()
        });
        assert!(report.max_rel_error < 1e-5, "{report:?}");
        let report = check_gradients(&[z, q], 1e-6, |t, v| contrastive_loss_var(t, v[0], v[1], &[0, 2, 3], 0.5).unwrap());
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
