//! Nearest-neighbour alignment in embedding space and the evaluation suite.
//!
//! Everything here consumes the pre-projection embeddings `U`.

mod metrics;

pub use metrics::{kendalls_tau, phase_classification, phase_progress_r2, r_squared, retrieval_ap_at_k};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataError, DatasetManifest, Split};
use crate::encoder::{encode_causal, encode_single, Checkpoint, EncoderError, ModelConfig, ModelParams};
use crate::numeric::{substream, Matrix, NumericError};
use crate::skeleton::SkeletonSequence;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("need at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("test labels need at least two distinct values")]
    DegenerateLabels,
    #[error("empty training subset")]
    EmptyTrainSubset,
    #[error("retrieval pool of {pool} frames is smaller than K = {k}")]
    PoolTooSmall { pool: usize, k: usize },
    #[error("sequence {0} has no phase labels or progress")]
    MissingLabels(String),
    #[error("manifest has no {0} split")]
    MissingSplit(Split),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Nearest target frame of every source frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub source_len: usize,
    pub target_len: usize,
    pub nn: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Alignment {
    pub fn kendalls_tau(&self) -> Result<f64, EvalError> {
        kendalls_tau(&self.nn)
    }
}

/// Plot-ready alignment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentExport {
    pub source: String,
    pub target: String,
    pub nn: Vec<usize>,
    pub distances: Vec<f64>,
}

fn nearest_row(u_b: &Matrix, q: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..u_b.rows() {
        let d: f64 = u_b.row(j).iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// `nn[i] = argmin_j ‖u_a[i] − u_b[j]‖`, ties to the smallest `j`.
pub fn align(u_a: &Matrix, u_b: &Matrix) -> Result<Alignment, EvalError> {
    if u_a.cols() != u_b.cols() {
        return Err(EvalError::DimMismatch { left: u_a.cols(), right: u_b.cols() });
    }
    if u_b.rows() == 0 {
        return Err(EvalError::TooShort(0));
    }
    let (nn, distances) = (0..u_a.rows()).map(|i| nearest_row(u_b, u_a.row(i))).unzip();
    Ok(Alignment { source_len: u_a.rows(), target_len: u_b.rows(), nn, distances })
}

/// Causal alignment: frame `t` of `a` is matched using embeddings computed
/// from `a[0..=t]` and the full `b`.
pub fn align_online(
    a: &SkeletonSequence,
    b: &SkeletonSequence,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Alignment, EvalError> {
    let steps = (0..a.len())
        .into_par_iter()
        .map(|t| {
            let (ea, eb) = encode_causal(a, b, params, cfg, t)?;
            Ok(nearest_row(&eb.u, ea.u.row(t)))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let (nn, distances) = steps.into_iter().unzip();
    Ok(Alignment { source_len: a.len(), target_len: b.len(), nn, distances })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    /// Neighbours of the phase classifier (odd).
    pub k: usize,
    pub label_fractions: Vec<f64>,
    pub ap_ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 0, k: 1, label_fractions: vec![0.1, 0.5, 1.0], ap_ks: vec![5, 10, 15] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub kendalls_tau: f64,
    pub phase_progress_r2: f64,
    /// Keyed by label fraction (`"0.1"`, `"0.5"`, `"1.0"`).
    pub phase_classification: BTreeMap<String, f64>,
    /// Keyed by K.
    pub ap_at_k: BTreeMap<String, f64>,
    pub num_pairs: usize,
    pub seed: u64,
}

pub fn fraction_key(f: f64) -> String {
    format!("{f:?}")
}

struct Embedded<'a> {
    seq: &'a SkeletonSequence,
    u: Matrix,
}

fn embed_all<'a>(seqs: &'a [SkeletonSequence], params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<Embedded<'a>>, EvalError> {
    seqs.par_iter()
        .map(|s| Ok(Embedded { seq: s, u: encode_single(s, params, cfg)?.u }))
        .collect()
}

fn stack(parts: &[&Embedded]) -> Matrix {
    let rows: usize = parts.iter().map(|e| e.u.rows()).sum();
    let cols = parts.first().map_or(0, |e| e.u.cols());
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for e in parts {
        for i in 0..e.u.rows() {
            out.row_mut(r).copy_from_slice(e.u.row(i));
            r += 1;
        }
    }
    out
}

fn labels_of(s: &SkeletonSequence) -> Result<&[i64], EvalError> {
    s.phase_labels.as_deref().ok_or_else(|| EvalError::MissingLabels(s.action_name.clone()))
}

fn progress_of(s: &SkeletonSequence) -> Result<&[f64], EvalError> {
    s.progress.as_deref().ok_or_else(|| EvalError::MissingLabels(s.action_name.clone()))
}

fn actions(seqs: &[SkeletonSequence]) -> Vec<String> {
    let mut names: Vec<String> = seqs.iter().map(|s| s.action_name.clone()).collect();
    names.sort();
    names.dedup();
    names
}

/// Ordered pairs `(a, b)`, `a ≠ b`, of sequences with the same action.
pub fn same_action_pairs(seqs: &[SkeletonSequence]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for a in 0..seqs.len() {
        for b in 0..seqs.len() {
            if a != b && seqs[a].action_name == seqs[b].action_name {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Mean Kendall's tau over ordered same-action pairs, offline or online.
pub fn mean_pair_tau(
    seqs: &[SkeletonSequence],
    params: &ModelParams,
    cfg: &ModelConfig,
    online: bool,
) -> Result<(f64, usize), EvalError> {
    let pairs = same_action_pairs(seqs);
    if pairs.is_empty() {
        return Err(EvalError::InvalidConfig("no pair of sequences shares an action".into()));
    }
    let taus: Vec<f64> = if online {
        pairs
            .iter()
            .map(|&(a, b)| align_online(&seqs[a], &seqs[b], params, cfg)?.kendalls_tau())
            .collect::<Result<_, _>>()?
    } else {
        let emb = embed_all(seqs, params, cfg)?;
        pairs.iter().map(|&(a, b)| align(&emb[a].u, &emb[b].u)?.kendalls_tau()).collect::<Result<_, _>>()?
    };
    Ok((taus.iter().sum::<f64>() / taus.len() as f64, taus.len()))
}

/// Full metric suite.
///
/// Tau averages over ordered validation pairs of the same action. Progress
/// R², phase classification and retrieval are computed per action (regressor
/// and classifier fitted on that action's training frames, evaluated on its
/// validation frames; retrieval among validation sequences) and averaged over
/// actions.
pub fn evaluate_sequences(
    train: &[SkeletonSequence],
    val: &[SkeletonSequence],
    params: &ModelParams,
    cfg: &ModelConfig,
    eval: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if val.is_empty() {
        return Err(EvalError::MissingSplit(Split::Val));
    }
    if train.is_empty() {
        return Err(EvalError::MissingSplit(Split::Train));
    }
    let train_emb = embed_all(train, params, cfg)?;
    let val_emb = embed_all(val, params, cfg)?;

    let pairs = same_action_pairs(val);
    if pairs.is_empty() {
        return Err(EvalError::InvalidConfig("no two validation sequences share an action".into()));
    }
    let mut tau_sum = 0.0;
    for &(a, b) in &pairs {
        tau_sum += align(&val_emb[a].u, &val_emb[b].u)?.kendalls_tau()?;
    }

    let names = actions(val);
    let mut r2 = 0.0;
    let mut cls: BTreeMap<String, f64> = eval.label_fractions.iter().map(|&f| (fraction_key(f), 0.0)).collect();
    let mut ap: BTreeMap<String, f64> = eval.ap_ks.iter().map(|k| (k.to_string(), 0.0)).collect();
    for (ai, name) in names.iter().enumerate() {
        let tr: Vec<&Embedded> = train_emb.iter().filter(|e| &e.seq.action_name == name).collect();
        let va: Vec<&Embedded> = val_emb.iter().filter(|e| &e.seq.action_name == name).collect();
        if tr.is_empty() {
            return Err(EvalError::MissingSplit(Split::Train));
        }
        let (u_tr, u_va) = (stack(&tr), stack(&va));
        let y_tr: Vec<f64> = tr.iter().map(|e| progress_of(e.seq)).collect::<Result<Vec<_>, _>>()?.concat();
        let y_va: Vec<f64> = va.iter().map(|e| progress_of(e.seq)).collect::<Result<Vec<_>, _>>()?.concat();
        r2 += phase_progress_r2(&u_tr, &y_tr, &u_va, &y_va)?;

        let l_tr: Vec<i64> = tr.iter().map(|e| labels_of(e.seq)).collect::<Result<Vec<_>, _>>()?.concat();
        let l_va: Vec<i64> = va.iter().map(|e| labels_of(e.seq)).collect::<Result<Vec<_>, _>>()?.concat();
        for (fi, &f) in eval.label_fractions.iter().enumerate() {
            let mut rng = substream(eval.seed, &[ai as u64, fi as u64]);
            *cls.get_mut(&fraction_key(f)).expect("key") +=
                phase_classification(&u_tr, &l_tr, &u_va, &l_va, f, eval.k, &mut rng)?;
        }

        let seq_u: Vec<Matrix> = va.iter().map(|e| e.u.clone()).collect();
        let seq_l: Vec<Vec<i64>> = va.iter().map(|e| labels_of(e.seq).map(<[i64]>::to_vec)).collect::<Result<_, _>>()?;
        for &k in &eval.ap_ks {
            *ap.get_mut(&k.to_string()).expect("key") += retrieval_ap_at_k(&seq_u, &seq_l, k)?;
        }
    }
    let n = names.len() as f64;
    cls.values_mut().for_each(|v| *v /= n);
    ap.values_mut().for_each(|v| *v /= n);
    Ok(EvalReport {
        kendalls_tau: tau_sum / pairs.len() as f64,
        phase_progress_r2: r2 / n,
        phase_classification: cls,
        ap_at_k: ap,
        num_pairs: pairs.len(),
        seed: eval.seed,
    })
}

/// [`evaluate_sequences`] on a checkpoint and the splits of a manifest.
pub fn evaluate(ckpt: &Checkpoint, manifest: &DatasetManifest, eval: &EvalConfig) -> Result<EvalReport, EvalError> {
    if !manifest.has_split(Split::Val) {
        return Err(EvalError::MissingSplit(Split::Val));
    }
    if !manifest.has_split(Split::Train) {
        return Err(EvalError::MissingSplit(Split::Train));
    }
    let train = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Val)?;
    evaluate_sequences(&train, &val, &ckpt.params, &ckpt.config, eval)
}
