//! Brute-force reference implementations and random instance builders shared
//! by the property tests and the acceptance run.

#![allow(dead_code)]

use casa_core::numeric::Matrix;
use casa_core::skeleton::{euler_xyz, Skeleton, SkeletonSequence, SkeletonTopology};
use rand::Rng;

/// Kendall's tau-a over all ordered pairs `(i, j)`, `i ≠ j`.
pub fn tau(nn: &[usize]) -> f64 {
    let m = nn.len();
    let mut s: i64 = 0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let a = (j as i64 - i as i64).signum();
                let b = (nn[j] as i64 - nn[i] as i64).signum();
                s += a * b;
            }
        }
    }
    s as f64 / (m * (m - 1)) as f64
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// True when candidate `r` ranks among the `k` nearest of `q` within `pool`,
/// ordering by distance and then by position in `pool`.
fn in_top_k(dists: &[f64], r: usize, k: usize) -> bool {
    let ahead = (0..dists.len()).filter(|&o| dists[o] < dists[r] || (dists[o] == dists[r] && o < r)).count();
    ahead < k
}

/// k-NN accuracy using the training rows listed in `subset`.
pub fn knn_accuracy(
    u_train: &Matrix,
    labels_train: &[i64],
    subset: &[usize],
    u_test: &Matrix,
    labels_test: &[i64],
    k: usize,
) -> f64 {
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    let mut correct = 0;
    for t in 0..u_test.rows() {
        let dists: Vec<f64> = sorted.iter().map(|&r| sq(u_train.row(r), u_test.row(t))).collect();
        let mut votes = std::collections::BTreeMap::<i64, usize>::new();
        for (p, &r) in sorted.iter().enumerate() {
            if in_top_k(&dists, p, k) {
                *votes.entry(labels_train[r]).or_default() += 1;
            }
        }
        let top = votes.values().copied().max().unwrap_or(0);
        // BTreeMap iterates labels in increasing order
        let pred = votes.iter().find(|(_, &c)| c == top).map(|(&l, _)| l);
        if pred == Some(labels_test[t]) {
            correct += 1;
        }
    }
    correct as f64 / u_test.rows() as f64
}

/// Mean precision@K where each frame queries all frames of other sequences.
pub fn ap_at_k(seqs: &[Matrix], labels: &[Vec<i64>], k: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for s in 0..seqs.len() {
        let pool: Vec<(usize, usize)> =
            (0..seqs.len()).filter(|&o| o != s).flat_map(|o| (0..seqs[o].rows()).map(move |r| (o, r))).collect();
        for q in 0..seqs[s].rows() {
            let dists: Vec<f64> = pool.iter().map(|&(o, r)| sq(seqs[o].row(r), seqs[s].row(q))).collect();
            let hits = (0..pool.len())
                .filter(|&p| in_top_k(&dists, p, k) && labels[pool[p].0][pool[p].1] == labels[s][q])
                .count();
            total += hits as f64 / k as f64;
            n += 1;
        }
    }
    total / n as f64
}

pub fn r_squared(y: &[f64], y_hat: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut tot = 0.0;
    let mut res = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        tot += (a - mean) * (a - mean);
        res += (a - b) * (a - b);
    }
    1.0 - res / tot
}

/// Ordinary least squares by Gauss–Jordan elimination on the normal equations.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * t;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != c {
                let f = a[r][c];
                for j in 0..=p {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    a.iter().map(|r| r[p]).collect()
}

/// Explicit linear attention: for each head, `out_i = Σ_j (φ(q_i)·φ(k_j)) v_j / Σ_j φ(q_i)·φ(k_j)`
/// with `φ(x) = elu(x) + 1`.
pub fn linear_attention(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Matrix {
    let phi = |x: f64| if x > 0.0 { x + 1.0 } else { x.exp() };
    let hd = q.cols() / heads;
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..q.rows() {
            let mut num = vec![0.0; hd];
            let mut den = 0.0;
            for j in 0..k.rows() {
                let w: f64 = cols.clone().map(|c| phi(q[(i, c)]) * phi(k[(j, c)])).sum();
                den += w;
                for (o, c) in cols.clone().enumerate() {
                    num[o] += w * v[(j, c)];
                }
            }
            for (o, c) in cols.clone().enumerate() {
                out[(i, c)] = num[o] / den;
            }
        }
    }
    out
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Sequence of `m` frames with every joint uniform in `[-1, 1]³`.
pub fn random_sequence<R: Rng>(rng: &mut R, topology: &SkeletonTopology, m: usize) -> SkeletonSequence {
    let frames = (0..m)
        .map(|_| {
            Skeleton::new(
                (0..topology.joint_count).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect(),
            )
        })
        .collect();
    SkeletonSequence {
        action_name: "random".into(),
        fps: 30.0,
        topology: topology.clone(),
        frames,
        phase_labels: None,
        progress: None,
    }
}

/// `x ↦ s·R·x + t` with random rotation, scale in `[0.2, 5]` and translation.
pub fn random_similarity<R: Rng>(rng: &mut R) -> impl Fn(&[f64; 3]) -> [f64; 3] {
    let pi = std::f64::consts::PI;
    let r = euler_xyz(rng.random_range(-pi..pi), rng.random_range(-pi..pi), rng.random_range(-pi..pi));
    let s: f64 = rng.random_range(0.2..5.0);
    let t = [0, 1, 2].map(|_| rng.random_range(-10.0..10.0));
    move |p| [0, 1, 2].map(|i| s * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + t[i])
}

pub fn transform(seq: &SkeletonSequence, f: &impl Fn(&[f64; 3]) -> [f64; 3]) -> SkeletonSequence {
    let frames = seq.frames.iter().map(|fr| Skeleton::new(fr.joints.iter().map(f).collect())).collect();
    seq.with_frames(frames)
}

pub fn max_frame_diff(a: &SkeletonSequence, b: &SkeletonSequence) -> f64 {
    a.to_matrix().max_abs_diff(&b.to_matrix())
}
