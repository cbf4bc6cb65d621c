//! Labelled synthetic motion on a toy humanoid.
//!
//! Toy humanoid (world x forward, y left, z up; rest pose is a T-pose):
//!
//! | index | joint        | parent | rest direction | length |
//! |-------|--------------|--------|----------------|--------|
//! | 0     | pelvis       | root   | –              | 0      |
//! | 1     | chest        | 0      | +z             | 1.0    |
//! | 2     | l_shoulder   | 1      | +y             | 0.35   |
//! | 3     | l_elbow      | 2      | +y             | 0.55   |
//! | 4     | l_wrist      | 3      | +y             | 0.5    |
//! | 5     | r_shoulder   | 1      | −y             | 0.35   |
//! | 6     | r_elbow      | 5      | −y             | 0.55   |
//! | 7     | r_wrist      | 6      | −y             | 0.5    |
//!
//! Normalization uses chest (origin), pelvis (axis) and right shoulder
//! (plane). The chest–pelvis bone has unit length, so normalized frames keep
//! rest bone lengths and stay consistent with the kinematic chain.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_sequence, DataError, DatasetManifest, ManifestEntry, Split};
use crate::numeric::{substream, Matrix};
use crate::skeleton::{fk_transform, normalize, PoseParamSequence, ReferenceJoints, SkeletonSequence, SkeletonTopology};

pub const DEFAULT_BENCHMARK_SEED: u64 = 42;
pub const TRAIN_PER_ACTION: usize = 20;
pub const VAL_PER_ACTION: usize = 8;

const FPS: f64 = 30.0;

pub fn toy_humanoid() -> SkeletonTopology {
    SkeletonTopology {
        joint_count: 8,
        bone_parents: vec![0, 0, 1, 2, 3, 1, 5, 6],
        reference_joints: ReferenceJoints { origin: 1, axis: 0, plane: 5 },
        mirror_map: vec![0, 1, 5, 6, 7, 2, 3, 4],
        bone_rest_lengths: vec![0.0, 1.0, 0.35, 0.55, 0.5, 0.35, 0.55, 0.5],
        bone_rest_directions: Some(vec![
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, -1.0, 0.0],
        ]),
    }
}

/// Phase anchor poses and the randomness applied around them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticActionSpec {
    pub action_name: String,
    /// `phases + 1` pose-parameter vectors; phase `p` moves from keypose `p`
    /// to keypose `p + 1`.
    pub phase_keyposes: Vec<Vec<f64>>,
    /// Inclusive range of frames spent in each phase.
    pub phase_duration_range: [usize; 2],
    /// Standard deviation (radians) of per-subject offsets added to every
    /// keypose angle.
    pub subject_variation_std: f64,
    /// Amplitude bound of the per-phase time warp `u + a·sin(πu)/π`, `|a| ≤ speed_jitter < 1`.
    pub speed_jitter: f64,
    pub topology: SkeletonTopology,
}

impl SyntheticActionSpec {
    pub fn phase_count(&self) -> usize {
        self.phase_keyposes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |s: &str| Err(DataError::InvalidSpec(s.to_string()));
        self.topology.validate()?;
        if self.phase_keyposes.len() < 2 {
            return bad("phase_keyposes needs at least two poses");
        }
        let p = self.topology.pose_param_count();
        if self.phase_keyposes.iter().any(|k| k.len() != p || k.iter().any(|v| !v.is_finite())) {
            return bad("phase_keyposes must be finite vectors of the topology's pose width");
        }
        let [lo, hi] = self.phase_duration_range;
        if lo < 2 || hi < lo {
            return bad("phase_duration_range must satisfy 2 <= min <= max");
        }
        if !(self.subject_variation_std.is_finite() && self.subject_variation_std >= 0.0) {
            return bad("subject_variation_std must be >= 0");
        }
        if !(0.0..1.0).contains(&self.speed_jitter) {
            return bad("speed_jitter must be in [0, 1)");
        }
        Ok(())
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Monotone on `[0, 1]` with fixed endpoints whenever `|a| < 1`.
fn warp(u: f64, a: f64) -> f64 {
    u + a * (std::f64::consts::PI * u).sin() / std::f64::consts::PI
}

/// Pose vector with angles `(a, b, c)` set for the listed joints.
fn pose(topology: &SkeletonTopology, angles: &[(usize, [f64; 3])]) -> Vec<f64> {
    let mut p = vec![0.0; topology.pose_param_count()];
    for &(joint, abc) in angles {
        let o = 3 + 3 * (joint - 1);
        p[o..o + 3].copy_from_slice(&abc);
    }
    p
}

const CHEST: usize = 1;
const L_SHOULDER: usize = 2;
const L_ELBOW: usize = 3;
const L_WRIST: usize = 4;
const R_SHOULDER: usize = 5;
const R_ELBOW: usize = 6;
const R_WRIST: usize = 7;

/// Arms hanging down, slightly bent.
fn rest_pose(t: &SkeletonTopology) -> Vec<f64> {
    pose(
        t,
        &[(L_ELBOW, [-1.25, 0.0, 0.0]), (L_WRIST, [-0.2, 0.1, 0.0]), (R_ELBOW, [1.25, 0.0, 0.0]), (R_WRIST, [0.2, 0.1, 0.0])],
    )
}

/// Right arm reaches forward, lifts overhead, then places low in front.
pub fn reach_lift_place() -> SyntheticActionSpec {
    let t = toy_humanoid();
    let reach = pose(
        &t,
        &[
            (CHEST, [0.3, 0.0, 0.0]),
            (L_ELBOW, [-1.25, 0.0, 0.0]),
            (L_WRIST, [-0.2, 0.1, 0.0]),
            (R_SHOULDER, [0.0, 0.3, 0.0]),
            (R_ELBOW, [0.0, 1.5, 0.0]),
            (R_WRIST, [0.0, 0.2, 0.0]),
        ],
    );
    let lift = pose(
        &t,
        &[
            (CHEST, [-0.2, 0.0, 0.0]),
            (L_ELBOW, [-0.6, 0.0, 0.0]),
            (L_WRIST, [-0.6, 0.0, 0.0]),
            (R_SHOULDER, [-0.3, 0.0, 0.0]),
            (R_ELBOW, [-1.4, 0.3, 0.0]),
            (R_WRIST, [-0.6, 0.0, 0.0]),
        ],
    );
    let place = pose(
        &t,
        &[
            (CHEST, [0.6, 0.0, 0.3]),
            (L_ELBOW, [-1.2, -0.8, 0.0]),
            (L_WRIST, [0.2, 0.5, 0.0]),
            (R_SHOULDER, [0.2, -0.2, 0.0]),
            (R_ELBOW, [0.9, 0.9, 0.0]),
            (R_WRIST, [1.2, 0.0, 0.0]),
        ],
    );
    SyntheticActionSpec {
        action_name: "reach-lift-place".into(),
        phase_keyposes: vec![rest_pose(&t), reach, lift, place],
        phase_duration_range: [13, 26],
        subject_variation_std: 0.08,
        speed_jitter: 0.5,
        topology: t,
    }
}

/// Left arm rises sideways, swings the forearm outward, then sweeps down
/// across the body while the right arm comes forward.
pub fn wave() -> SyntheticActionSpec {
    let t = toy_humanoid();
    let raise = pose(
        &t,
        &[
            (CHEST, [0.0, 0.2, 0.0]),
            (L_SHOULDER, [-0.4, 0.0, 0.0]),
            (L_ELBOW, [0.4, 0.0, 0.0]),
            (L_WRIST, [-1.5, 0.0, 0.0]),
            (R_ELBOW, [1.25, 0.0, 0.0]),
            (R_WRIST, [0.2, 0.1, 0.0]),
        ],
    );
    let wave_out = pose(
        &t,
        &[
            (CHEST, [0.0, -0.2, 0.0]),
            (L_SHOULDER, [-0.4, 0.0, 0.0]),
            (L_ELBOW, [0.4, 0.9, 0.0]),
            (L_WRIST, [-0.6, 1.3, 0.0]),
            (R_ELBOW, [0.8, 0.6, 0.0]),
            (R_WRIST, [0.2, 0.1, 0.0]),
        ],
    );
    let lower = pose(
        &t,
        &[
            (CHEST, [0.3, 0.0, 0.0]),
            (L_ELBOW, [-0.6, 1.4, 0.0]),
            (L_WRIST, [-0.2, 0.0, 0.0]),
            (R_ELBOW, [0.3, 1.3, 0.0]),
            (R_WRIST, [0.9, 0.3, 0.0]),
        ],
    );
    SyntheticActionSpec {
        action_name: "wave".into(),
        phase_keyposes: vec![rest_pose(&t), raise, wave_out, lower],
        phase_duration_range: [13, 26],
        subject_variation_std: 0.08,
        speed_jitter: 0.5,
        topology: t,
    }
}

pub fn default_actions() -> Vec<SyntheticActionSpec> {
    vec![reach_lift_place(), wave()]
}

/// Pose parameters, phase labels and progress for one sequence.
fn sample_poses<R: Rng + ?Sized>(spec: &SyntheticActionSpec, rng: &mut R) -> (Matrix, Vec<i64>, Vec<f64>) {
    let p = spec.topology.pose_param_count();
    let phases = spec.phase_count();
    let normal = Normal::new(0.0, spec.subject_variation_std).expect("validated std");
    let keys: Vec<Vec<f64>> = spec
        .phase_keyposes
        .iter()
        .map(|k| k.iter().enumerate().map(|(c, v)| if c < 3 { *v } else { v + normal.sample(rng) }).collect())
        .collect();
    let [lo, hi] = spec.phase_duration_range;
    let durations: Vec<usize> = (0..phases).map(|_| rng.random_range(lo..=hi)).collect();
    let warps: Vec<f64> = (0..phases)
        .map(|_| if spec.speed_jitter > 0.0 { rng.random_range(-spec.speed_jitter..=spec.speed_jitter) } else { 0.0 })
        .collect();

    let m = durations.iter().sum::<usize>() + 1;
    let mut params = Matrix::zeros(m, p);
    let mut labels = Vec::with_capacity(m);
    let mut f = 0;
    for (phase, (&dur, &a)) in durations.iter().zip(&warps).enumerate() {
        for step in 0..dur {
            let s = smoothstep(warp(step as f64 / dur as f64, a));
            for (c, out) in params.row_mut(f).iter_mut().enumerate() {
                *out = keys[phase][c] + s * (keys[phase + 1][c] - keys[phase][c]);
            }
            labels.push(phase as i64);
            f += 1;
        }
    }
    params.row_mut(m - 1).copy_from_slice(&keys[phases]);
    labels.push(phases as i64 - 1);
    let progress = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    (params, labels, progress)
}

/// `count` normalized, labelled sequences of one action.
///
/// One key is drawn from `rng`; sequence `i` uses the sub-stream `(key, i)`.
pub fn generate<R: Rng + ?Sized>(
    spec: &SyntheticActionSpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SkeletonSequence>, DataError> {
    spec.validate()?;
    let key: u64 = rng.random();
    (0..count)
        .map(|i| {
            let (params, labels, progress) = sample_poses(spec, &mut substream(key, &[i as u64]));
            let poses = PoseParamSequence::new(params, spec.topology.clone())?;
            let raw = SkeletonSequence {
                action_name: spec.action_name.clone(),
                fps: FPS,
                topology: spec.topology.clone(),
                frames: fk_transform(&poses),
                phase_labels: None,
                progress: None,
            };
            let mut seq = normalize(&raw)?;
            seq.phase_labels = Some(labels);
            seq.progress = Some(progress);
            Ok(seq)
        })
        .collect()
}

/// Writes the two-action benchmark (20 train + 8 val sequences per action)
/// and its `manifest.json` into `dir`.
pub fn default_benchmark(dir: &Path, seed: u64) -> Result<DatasetManifest, DataError> {
    write_benchmark(dir, seed, &default_actions(), "default_benchmark")
}

/// Writes `TRAIN_PER_ACTION + VAL_PER_ACTION` sequences of every spec as
/// `{action}_{split}_{idx:02}.json`, plus `manifest.json`. Action `a` draws
/// from the sub-stream `(seed, a)`.
pub fn write_benchmark(
    dir: &Path,
    seed: u64,
    specs: &[SyntheticActionSpec],
    generator: &str,
) -> Result<DatasetManifest, DataError> {
    if specs.is_empty() {
        return Err(DataError::InvalidSpec("no action specs given".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut entries = Vec::new();
    for (a, spec) in specs.iter().enumerate() {
        let seqs = generate(spec, TRAIN_PER_ACTION + VAL_PER_ACTION, &mut substream(seed, &[a as u64]))?;
        for (i, seq) in seqs.iter().enumerate() {
            let (split, idx) = if i < TRAIN_PER_ACTION { (Split::Train, i) } else { (Split::Val, i - TRAIN_PER_ACTION) };
            let name = format!("{}_{split}_{idx:02}.json", spec.action_name);
            save_sequence(seq, dir.join(&name))?;
            entries.push(ManifestEntry { path: name.into(), action: spec.action_name.clone(), split });
        }
    }
    let manifest = DatasetManifest { seed, entries, generator: Some(generator.into()), base_dir: dir.to_path_buf() };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
