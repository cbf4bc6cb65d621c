use rand::seq::index;
use rand::Rng;

use super::EvalError;
use crate::numeric::{dot, least_squares, Matrix};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kendall's tau-a of a frame mapping: over pairs `i < i'`, `+1` if
/// `nn[i] < nn[i']`, `−1` if greater, 0 on ties, divided by `M(M−1)/2`.
pub fn kendalls_tau(nn: &[usize]) -> Result<f64, EvalError> {
    let m = nn.len();
    if m < 2 {
        return Err(EvalError::TooShort(m));
    }
    let mut score: i64 = 0;
    for i in 0..m {
        for j in i + 1..m {
            score += (nn[j] as i64 - nn[i] as i64).signum();
        }
    }
    Ok(score as f64 / (m * (m - 1) / 2) as f64)
}

/// Coefficient of determination `1 − Σ(y − ŷ)² / Σ(y − ȳ)²` on the test set.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::DimMismatch { left: y.len(), right: y_hat.len() });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(EvalError::DegenerateLabels);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fits `y ≈ [u, 1]·w` by least squares on the training rows and returns the
/// R² of its predictions on the test rows.
pub fn phase_progress_r2(u_train: &Matrix, y_train: &[f64], u_test: &Matrix, y_test: &[f64]) -> Result<f64, EvalError> {
    if u_train.rows() != y_train.len() || u_test.rows() != y_test.len() {
        return Err(EvalError::DimMismatch { left: u_train.rows(), right: y_train.len() });
    }
    if u_train.cols() != u_test.cols() {
        return Err(EvalError::DimMismatch { left: u_train.cols(), right: u_test.cols() });
    }
    let with_bias = |u: &Matrix| Matrix::from_fn(u.rows(), u.cols() + 1, |r, c| if c < u.cols() { u[(r, c)] } else { 1.0 });
    let w = least_squares(&with_bias(u_train), y_train)?;
    let x_test = with_bias(u_test);
    let y_hat: Vec<f64> = (0..x_test.rows()).map(|r| dot(x_test.row(r), &w)).collect();
    r_squared(y_test, &y_hat)
}

/// Indices of the `k` rows of `pool` nearest to `q` (ties by smaller index).
pub(crate) fn nearest(pool: &Matrix, rows: &[usize], q: &[f64], k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = rows.iter().map(|&r| (sq_dist(pool.row(r), q), r)).collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, r)| r).collect()
}

/// k-NN phase classification accuracy.
///
/// `⌈fraction·|train|⌉` training frames are drawn uniformly without
/// replacement; every test frame takes the majority label of its `k` nearest
/// drawn frames, ties going to the smallest label.
pub fn phase_classification<R: Rng + ?Sized>(
    u_train: &Matrix,
    labels_train: &[i64],
    u_test: &Matrix,
    labels_test: &[i64],
    fraction: f64,
    k: usize,
    rng: &mut R,
) -> Result<f64, EvalError> {
    if u_train.rows() != labels_train.len() || u_test.rows() != labels_test.len() {
        return Err(EvalError::DimMismatch { left: u_train.rows(), right: labels_train.len() });
    }
    if u_train.cols() != u_test.cols() {
        return Err(EvalError::DimMismatch { left: u_train.cols(), right: u_test.cols() });
    }
    if k == 0 || k % 2 == 0 {
        return Err(EvalError::InvalidConfig("k must be odd and positive".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::InvalidConfig("fraction must be in (0, 1]".into()));
    }
    let n = u_train.rows();
    let take = ((fraction * n as f64).ceil() as usize).min(n);
    if take == 0 || u_test.rows() == 0 {
        return Err(EvalError::EmptyTrainSubset);
    }
    let mut subset = index::sample(rng, n, take).into_vec();
    subset.sort_unstable();
    let mut correct = 0usize;
    for t in 0..u_test.rows() {
        let nbrs = nearest(u_train, &subset, u_test.row(t), k);
        let mut votes: Vec<(i64, usize)> = Vec::new();
        for r in nbrs {
            let l = labels_train[r];
            match votes.iter_mut().find(|(lab, _)| *lab == l) {
                Some(v) => v.1 += 1,
                None => votes.push((l, 1)),
            }
        }
        let best = votes.iter().map(|v| v.1).max().unwrap_or(0);
        let predicted = votes.iter().filter(|v| v.1 == best).map(|v| v.0).min();
        if predicted == Some(labels_test[t]) {
            correct += 1;
        }
    }
    Ok(correct as f64 / u_test.rows() as f64)
}

/// Mean precision@K of frame retrieval.
///
/// `sequences[s]` holds the embeddings of sequence `s` and `labels[s]` its
/// per-frame phase labels. Each frame queries the frames of every other
/// sequence; precision@K is the share of its `K` nearest with the same label.
pub fn retrieval_ap_at_k(sequences: &[Matrix], labels: &[Vec<i64>], k: usize) -> Result<f64, EvalError> {
    if sequences.len() != labels.len() {
        return Err(EvalError::DimMismatch { left: sequences.len(), right: labels.len() });
    }
    if k == 0 {
        return Err(EvalError::InvalidConfig("K must be positive".into()));
    }
    for (s, l) in sequences.iter().zip(labels) {
        if s.rows() != l.len() {
            return Err(EvalError::DimMismatch { left: s.rows(), right: l.len() });
        }
    }
    let total_frames: usize = sequences.iter().map(Matrix::rows).sum();
    let mut sum = 0.0;
    let mut queries = 0usize;
    for (s, (seq, lab)) in sequences.iter().zip(labels).enumerate() {
        let pool = total_frames - seq.rows();
        if pool < k {
            return Err(EvalError::PoolTooSmall { pool, k });
        }
        for q in 0..seq.rows() {
            let query = seq.row(q);
            let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(pool);
            for (o, other) in sequences.iter().enumerate() {
                if o == s {
                    continue;
                }
                for r in 0..other.rows() {
                    cand.push((sq_dist(other.row(r), query), o, r));
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let hits = cand[..k].iter().filter(|&&(_, o, r)| labels[o][r] == lab[q]).count();
            sum += hits as f64 / k as f64;
            queries += 1;
        }
    }
    if queries == 0 {
        return Err(EvalError::PoolTooSmall { pool: 0, k });
    }
    Ok(sum / queries as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::substream;

    #[test]
    fn tau_examples() {
        assert_eq!(kendalls_tau(&[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(kendalls_tau(&[3, 2, 1, 0]).unwrap(), -1.0);
        assert!((kendalls_tau(&[0, 2, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendalls_tau(&[4, 4]).unwrap(), 0.0);
        assert!(matches!(kendalls_tau(&[1]), Err(EvalError::TooShort(1))));
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r_squared(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(r_squared(&[0.2, 0.4, 0.9], &[0.2, 0.4, 0.9]).unwrap(), 1.0);
        assert!(matches!(r_squared(&[0.3, 0.3], &[0.3, 0.3]), Err(EvalError::DegenerateLabels)));
    }

    #[test]
    fn progress_from_perfect_embeddings() {
        let y: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let u = Matrix::from_fn(20, 4, |r, _| y[r]);
        assert!(phase_progress_r2(&u, &y, &u, &y).unwrap() > 0.999);
    }

    #[test]
    fn classification_examples() {
        let u = Matrix::from_fn(6, 2, |r, c| (r * 3 + c) as f64);
        let labels = [0, 0, 1, 1, 2, 2];
        let acc = phase_classification(&u, &labels, &u, &labels, 1.0, 1, &mut substream(0, &[])).unwrap();
        assert_eq!(acc, 1.0);
        let same = [5; 6];
        let acc = phase_classification(&u, &same, &u, &labels, 0.5, 1, &mut substream(0, &[])).unwrap();
        assert_eq!(acc, 0.0);
        assert!(phase_classification(&u, &labels, &u, &labels, 1.0, 2, &mut substream(0, &[])).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let a = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.1], vec![1.1], vec![2.1], vec![3.1]]).unwrap();
        let labels = vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1]];
        assert_eq!(retrieval_ap_at_k(&[a.clone(), b.clone()], &labels, 1).unwrap(), 1.0);
        // frames 2 of a and 1 of b have one wrong neighbour among their two nearest
        assert_eq!(retrieval_ap_at_k(&[a.clone(), b.clone()], &labels, 2).unwrap(), 0.875);
        let none = vec![vec![0, 0, 0, 0], vec![1, 1, 1, 1]];
        assert_eq!(retrieval_ap_at_k(&[a.clone(), b.clone()], &none, 3).unwrap(), 0.0);
        assert!(matches!(retrieval_ap_at_k(&[a, b], &labels, 5), Err(EvalError::PoolTooSmall { pool: 4, k: 5 })));
    }
}
