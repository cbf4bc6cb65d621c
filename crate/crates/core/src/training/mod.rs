//! Matching objective and the optimisation loop.
//!
//! For an original sequence with projections `Z` (`M x d`) and its augmented
//! copy `Z'` (`N x d`), every augmented frame `j` defines a distribution over
//! original frames
//!
//! ```text
//! γ[j][i] = softmax_i(−‖z'_j − z_i‖ / λ)
//! ```
//!
//! and the regression loss is `mean_j (j_gt[j] − Σ_i γ[j][i]·i)²` with 0-based
//! indices. The contrastive variant scores the positive `(j_gt[j], j)` against
//! every augmented frame instead.

mod losses;

pub use losses::{
    contrastive_loss, contrastive_loss_var, match_probabilities, predicted_index, regression_loss, regression_loss_var,
};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{make_pair, AugmentConfig, AugmentError, AugmentedPair, PcaLatentSpace};
use crate::dataio::{DataError, DatasetManifest, Split};
use crate::encoder::{forward_pair, Checkpoint, EncoderError, ModelConfig, ModelParams};
use crate::numeric::{substream, AdamState, Matrix, NumericError, Tape};
use crate::skeleton::{inverse_kinematics_angles, PoseParamSequence, SkeletonError, SkeletonSequence};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training sequences")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Regression,
    Contrastive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::Regression, temperature: crate::encoder::DEFAULT_TEMPERATURE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pairs per optimiser step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Total epochs; a resumed run stops at the same count.
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Model shape; derived from the data's joint count when absent.
    pub model: Option<ModelConfig>,
    pub loss: LossConfig,
    /// Write a checkpoint every this many epochs (the final one is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 3e-4,
            epochs: 200,
            seed: 0,
            augment: AugmentConfig::default(),
            model: None,
            loss: LossConfig::default(),
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |s: &str| Err(TrainError::InvalidConfig(s.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        if !(self.loss.temperature > 0.0 && self.loss.temperature.is_finite()) {
            return bad("loss.temperature must be positive");
        }
        self.augment.validate()?;
        if let Some(m) = &self.model {
            m.validate()?;
        }
        Ok(())
    }

    /// Model config for `joint_count` joints, carrying the loss temperature.
    pub fn model_config(&self, joint_count: usize) -> ModelConfig {
        let base = self.model.unwrap_or_else(|| ModelConfig::for_joints(joint_count));
        ModelConfig { temperature: self.loss.temperature, ..base }
    }
}

/// Loss of one pair and its gradient for every tensor (in name order).
pub fn pair_loss_and_gradients(
    params: &ModelParams,
    model: &ModelConfig,
    loss: &LossConfig,
    pair: &AugmentedPair,
) -> Result<(f64, Vec<Matrix>), TrainError> {
    let mut tape = Tape::new();
    let net = params.register(&mut tape, true);
    let (orig, aug) = forward_pair(&mut tape, &net, model, &pair.original.to_matrix(), &pair.augmented.to_matrix())?;
    let targets: Vec<f64> = pair.j_gt.iter().map(|&i| i as f64).collect();
    let l = match loss.kind {
        LossKind::Regression => regression_loss_var(&mut tape, orig.z, aug.z, &targets, loss.temperature)?,
        LossKind::Contrastive => contrastive_loss_var(&mut tape, orig.z, aug.z, &pair.j_gt, loss.temperature)?,
    };
    let value = tape.value(l)[(0, 0)];
    let grads = tape.backward(l)?;
    Ok((value, net.ordered().iter().map(|&v| grads.get(v)).collect()))
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Records of the epochs run by this call.
    pub history: Vec<EpochRecord>,
}

/// Training sequences with what augmentation needs precomputed.
struct Prepared {
    seqs: Vec<SkeletonSequence>,
    poses: Vec<PoseParamSequence>,
    latent: Option<PcaLatentSpace>,
}

fn prepare(seqs: &[SkeletonSequence], aug: &AugmentConfig) -> Result<Prepared, TrainError> {
    let poses = seqs.iter().map(inverse_kinematics_angles).collect::<Result<Vec<_>, _>>()?;
    let latent = if aug.enabled.latent { Some(PcaLatentSpace::fit_poses(&poses)?) } else { None };
    Ok(Prepared { seqs: seqs.to_vec(), poses, latent })
}

const EPOCH_STREAM: u64 = 0xE90C;
const PAIR_STREAM: u64 = 0x9A12;

/// The augmented pair drawn for sequence `index` in `epoch`.
pub fn epoch_pair(
    seq: &SkeletonSequence,
    poses: &PoseParamSequence,
    latent: Option<&PcaLatentSpace>,
    aug: &AugmentConfig,
    seed: u64,
    epoch: usize,
    index: usize,
) -> Result<AugmentedPair, AugmentError> {
    let mut rng = substream(seed, &[PAIR_STREAM, epoch as u64, index as u64]);
    make_pair(seq, poses, latent, aug, &mut rng)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Trains on `seqs` (normalized, one skeleton topology).
///
/// With `resume`, parameters, optimiser moments and the epoch counter are
/// restored and training continues to `cfg.epochs`; the random schedule of
/// every epoch depends only on `(seed, epoch)`, so a resumed run matches an
/// uninterrupted one. When `out_dir` is given, `metrics.jsonl` (appended on
/// resume) and checkpoints are written there.
pub fn train(
    seqs: &[SkeletonSequence],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let topology = &seqs[0].topology;
    for s in seqs {
        s.validate()?;
        if &s.topology != topology {
            return Err(TrainError::InvalidConfig("training sequences use different topologies".into()));
        }
    }
    let model = cfg.model_config(topology.joint_count);
    model.validate()?;
    let data = prepare(seqs, &cfg.augment)?;

    let (mut params, mut adam, start) = match resume {
        Some(ckpt) => {
            ckpt.validate()?;
            if ckpt.config != model {
                return Err(TrainError::InvalidConfig("checkpoint model config differs from the training config".into()));
            }
            if ckpt.rng_seed != cfg.seed {
                return Err(TrainError::InvalidConfig("checkpoint seed differs from the training config".into()));
            }
            let mut adam =
                ckpt.optimizer.clone().ok_or_else(|| TrainError::InvalidConfig("checkpoint has no optimizer state".into()))?;
            adam.lr = cfg.learning_rate;
            (ckpt.params, adam, ckpt.epoch)
        }
        None => {
            let params = ModelParams::init(&model, cfg.seed)?;
            let adam = AdamState::new(cfg.learning_rate, params.shapes());
            (params, adam, 0)
        }
    };

    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("metrics.jsonl");
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(start > 0)
                .truncate(start == 0)
                .open(&path)
                .map_err(io_err(&path))?;
            Some((path, file))
        }
        None => None,
    };

    info!(
        "training {} sequences, {} parameters, epochs {}..{}",
        seqs.len(),
        params.scalar_count(),
        start + 1,
        cfg.epochs
    );
    let mut history = Vec::new();
    for epoch in start..cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut substream(cfg.seed, &[EPOCH_STREAM, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let pair = epoch_pair(
                        &data.seqs[i],
                        &data.poses[i],
                        data.latent.as_ref(),
                        &cfg.augment,
                        cfg.seed,
                        epoch,
                        i,
                    )?;
                    pair_loss_and_gradients(&params, &model, &cfg.loss, &pair)
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut mean_grads: Vec<Matrix> = params.shapes().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
            for (loss, grads) in &results {
                total += loss;
                for (acc, g) in mean_grads.iter_mut().zip(grads) {
                    acc.add_assign(&g.scale(scale))?;
                }
            }
            adam.step(&mut params.tensors_mut(), &mean_grads)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: total / seqs.len() as f64,
            lr: cfg.learning_rate,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        debug!("epoch {} loss {:.6}", record.epoch, record.mean_loss);
        if let Some((path, file)) = metrics.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(file, "{line}").map_err(io_err(path))?;
        }
        history.push(record);

        let done = epoch + 1;
        if let Some(dir) = out_dir {
            if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
                let mut ckpt = Checkpoint::new(model, params.clone(), cfg.seed, done);
                ckpt.optimizer = Some(adam.clone());
                let path = dir.join(format!("checkpoint_{done:04}.json"));
                ckpt.save(&path)?;
                if done == cfg.epochs {
                    ckpt.save(dir.join("final.json"))?;
                }
            }
        }
    }
    if let Some(last) = history.last() {
        info!("final epoch {} mean loss {:.6}", last.epoch, last.mean_loss);
    }
    let mut checkpoint = Checkpoint::new(model, params, cfg.seed, cfg.epochs.max(start));
    checkpoint.optimizer = Some(adam);
    Ok(TrainOutcome { checkpoint, history })
}

/// Trains on the `train` split of a manifest.
pub fn train_manifest(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    let seqs = manifest.load_split(Split::Train)?;
    train(&seqs, cfg, out_dir, resume)
}

/// Regression loss on pairs of distinct real sequences of the same action.
///
/// For each unordered pair, the shorter sequence plays the augmented side and
/// its frame `j` targets the (fractional) index of the longer sequence with
/// the same progress label, `progress[j]·(M_long − 1)`. Returns the mean over
/// pairs; sequences without progress labels are skipped.
pub fn cross_sequence_loss(
    seqs: &[SkeletonSequence],
    params: &ModelParams,
    model: &ModelConfig,
    temperature: f64,
) -> Result<f64, TrainError> {
    let mut pairs = Vec::new();
    for a in 0..seqs.len() {
        for b in a + 1..seqs.len() {
            if seqs[a].action_name == seqs[b].action_name
                && seqs[a].progress.is_some()
                && seqs[b].progress.is_some()
            {
                pairs.push((a, b));
            }
        }
    }
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let losses = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (long, short) = if seqs[a].len() >= seqs[b].len() { (&seqs[a], &seqs[b]) } else { (&seqs[b], &seqs[a]) };
            let scale = (long.len() - 1) as f64;
            let targets: Vec<f64> = short.progress.as_ref().expect("checked").iter().map(|p| p * scale).collect();
            let (zl, zs) = crate::encoder::encode_pair(long, short, params, model)?;
            let mut tape = Tape::new();
            let (vl, vs) = (tape.constant(zl.z), tape.constant(zs.z));
            let l = regression_loss_var(&mut tape, vl, vs, &targets, temperature)?;
            Ok(tape.value(l)[(0, 0)])
        })
        .collect::<Result<Vec<f64>, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate, wave};

    fn tiny_data() -> Vec<SkeletonSequence> {
        let spec = crate::dataio::SyntheticActionSpec { phase_duration_range: [3, 4], ..wave() };
        generate(&spec, 3, &mut substream(0, &[])).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 2,
            seed: 5,
            model: Some(ModelConfig { num_attention_layers: 1, ..ModelConfig::for_joints(8) }),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, ..tiny_cfg() };
        let out = train(&tiny_data(), &cfg, None, None).unwrap();
        let model = cfg.model_config(8);
        assert_eq!(out.checkpoint.params, ModelParams::init(&model, 5).unwrap());
    }

    #[test]
    fn deterministic_and_resumable() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let a = train(&data, &cfg, None, None).unwrap();
        let b = train(&data, &cfg, None, None).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history.len(), 2);

        let first = train(&data, &TrainConfig { epochs: 1, ..cfg.clone() }, None, None).unwrap();
        let resumed = train(&data, &cfg, None, Some(first.checkpoint)).unwrap();
        assert_eq!(resumed.checkpoint, a.checkpoint);
        assert_eq!(resumed.history.len(), 1);
        assert_eq!(resumed.history[0].epoch, 2);
        assert_eq!(resumed.history[0].mean_loss, a.history[1].mean_loss);
    }

    #[test]
    fn writes_metrics_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { checkpoint_every: 1, ..tiny_cfg() };
        train(&tiny_data(), &cfg, Some(dir.path()), None).unwrap();
        let text = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        let records: Vec<EpochRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2]);
        let ckpt = Checkpoint::load(dir.path().join("final.json")).unwrap();
        assert_eq!(ckpt.epoch, 2);
        assert!(dir.path().join("checkpoint_0001.json").is_file());
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        assert!(matches!(train(&[], &tiny_cfg(), None, None), Err(TrainError::EmptyDataset)));
        let cfg = TrainConfig { batch_size: 0, ..tiny_cfg() };
        assert!(matches!(train(&tiny_data(), &cfg, None, None), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn cross_sequence_loss_is_finite() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let model = cfg.model_config(8);
        let params = ModelParams::init(&model, 1).unwrap();
        let l = cross_sequence_loss(&data, &params, &model, 0.1).unwrap();
        assert!(l.is_finite() && l >= 0.0);
    }
}
