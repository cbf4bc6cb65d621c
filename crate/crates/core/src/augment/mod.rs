//! Space-time augmentation of skeleton sequences with exact correspondences.
//!
//! [`make_pair`] composes the pipeline in a fixed order:
//!
//! 1. latent, then joint-angle perturbation of the pose parameters, each
//!    firing independently with `geometric_probability`;
//! 2. forward kinematics (skipped when neither fired, so the original frames
//!    are reused bit for bit);
//! 3. temporal subsampling (always, when enabled), which alone defines `j_gt`;
//! 4. translation noise and flipping, each firing with `geometric_probability`.
//!
//! Every step draws from its own random stream, so the temporal selection of a
//! pair does not depend on which geometric steps are enabled.

mod latent;
mod noise;

pub use latent::{PcaLatentSpace, EXPLAINED_VARIANCE};
pub use noise::{smoothed_covariance, SmoothedNoiseSampler};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{substream, CasaRng, NumericError};
use crate::skeleton::{fk_transform, flip, PoseParamSequence, SkeletonError, SkeletonSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("latent space not fitted: {0}")]
    LatentNotFitted(&'static str),
    #[error("pose parameters do not match the sequence: {0}")]
    PoseMismatch(String),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnabledOps {
    pub temporal: bool,
    pub translation: bool,
    pub flip: bool,
    pub angle: bool,
    pub latent: bool,
}

impl Default for EnabledOps {
    fn default() -> Self {
        Self::all()
    }
}

impl EnabledOps {
    pub fn all() -> Self {
        Self { temporal: true, translation: true, flip: true, angle: true, latent: true }
    }

    pub fn none() -> Self {
        Self { temporal: false, translation: false, flip: false, angle: false, latent: false }
    }

    pub fn temporal_only() -> Self {
        Self { temporal: true, ..Self::none() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Standard deviation of joint-angle noise, degrees.
    pub sigma_angle: f64,
    /// Standard deviation of per-coordinate translation noise, length units.
    pub sigma_translation: f64,
    /// Standard deviation of noise in the whitened pose latent.
    pub sigma_latent: f64,
    /// Firing probability of each geometric augmentation.
    pub geometric_probability: f64,
    /// Smallest fraction of frames kept by temporal subsampling.
    pub temporal_min_fraction: f64,
    pub enabled: EnabledOps,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sigma_angle: 10.0,
            sigma_translation: 0.1,
            sigma_latent: 0.1,
            geometric_probability: 0.3,
            temporal_min_fraction: 0.5,
            enabled: EnabledOps::all(),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: EnabledOps::none(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |f: &str| Err(AugmentError::InvalidConfig(f.to_string()));
        for (name, v) in [
            ("sigma_angle", self.sigma_angle),
            ("sigma_translation", self.sigma_translation),
            ("sigma_latent", self.sigma_latent),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name);
            }
        }
        if !(0.0..=1.0).contains(&self.geometric_probability) {
            return bad("geometric_probability");
        }
        if !(self.temporal_min_fraction > 0.0 && self.temporal_min_fraction <= 1.0) {
            return bad("temporal_min_fraction");
        }
        Ok(())
    }
}

/// Which augmentations fired for a pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedOps {
    pub latent: bool,
    pub angle: bool,
    pub temporal: bool,
    pub translation: bool,
    pub flip: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub original: SkeletonSequence,
    pub augmented: SkeletonSequence,
    /// Original-frame index of every augmented frame; strictly increasing.
    pub j_gt: Vec<usize>,
    pub applied_ops: AppliedOps,
}

const STREAM_FIRE: u64 = 1;
const STREAM_LATENT: u64 = 2;
const STREAM_ANGLE: u64 = 3;
const STREAM_TEMPORAL: u64 = 4;
const STREAM_TRANSLATION: u64 = 5;

/// Subsequence of `N` frames, `N` uniform in `[⌈fraction·M⌉, M]`, chosen as a
/// uniformly random sorted subset. Returns the frames and their indices.
pub fn temporal_augment<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> (SkeletonSequence, Vec<usize>) {
    let m = seq.len();
    let min = ((cfg.temporal_min_fraction * m as f64).ceil() as usize).clamp(1, m);
    let n = rng.random_range(min..=m);
    let mut idx = index::sample(rng, m, n).into_vec();
    idx.sort_unstable();
    (seq.select_frames(&idx), idx)
}

/// Adds i.i.d. noise uniform on `[−σ√3, σ√3]` (standard deviation σ) to every coordinate.
pub fn translation_augment<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> SkeletonSequence {
    let half_width = cfg.sigma_translation * 3f64.sqrt();
    if half_width == 0.0 {
        return seq.clone();
    }
    let mut out = seq.clone();
    for frame in &mut out.frames {
        for joint in &mut frame.joints {
            for v in joint.iter_mut() {
                *v += rng.random_range(-half_width..=half_width);
            }
        }
    }
    out
}

/// Adds temporally smoothed noise with marginal std `sigma_angle` (converted to
/// radians) to every angle column; the root translation is left alone.
pub fn angle_augment<R: Rng + ?Sized>(
    poses: &PoseParamSequence,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<PoseParamSequence, AugmentError> {
    let sigma = cfg.sigma_angle.to_radians();
    let mut out = poses.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let cols = poses.angle_columns();
    let sampler = SmoothedNoiseSampler::new(poses.len())?;
    let noise = sampler.sample(cols.len(), sigma, rng);
    for r in 0..poses.len() {
        for (k, c) in cols.clone().enumerate() {
            out.params[(r, c)] += noise[(r, k)];
        }
    }
    Ok(out)
}

/// `decode(encode(θ) + noise)` with temporally smoothed latent noise of
/// per-frame std `sigma_latent`.
pub fn latent_augment<R: Rng + ?Sized>(
    poses: &PoseParamSequence,
    latent: Option<&PcaLatentSpace>,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<PoseParamSequence, AugmentError> {
    let latent = latent.ok_or(AugmentError::LatentNotFitted("no latent space supplied"))?;
    if latent.pose_dim() != poses.params.cols() {
        return Err(AugmentError::LatentNotFitted("latent fitted on a different pose layout"));
    }
    let mut z = latent.encode(&poses.params);
    if cfg.sigma_latent > 0.0 {
        let sampler = SmoothedNoiseSampler::new(poses.len())?;
        let noise = sampler.sample(latent.latent_dim(), cfg.sigma_latent, rng);
        z.add_assign(&noise)?;
    }
    Ok(PoseParamSequence { params: latent.decode(&z), topology: poses.topology.clone() })
}

/// Builds one training pair from `seq` and its pose parameters.
///
/// One `u64` is drawn from `rng` as the key of the pair; every step then uses
/// a sub-stream of that key.
pub fn make_pair<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    poses: &PoseParamSequence,
    latent: Option<&PcaLatentSpace>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedPair, AugmentError> {
    cfg.validate()?;
    if poses.len() != seq.len() || poses.topology != seq.topology {
        return Err(AugmentError::PoseMismatch(format!(
            "{} pose frames for {} skeleton frames",
            poses.len(),
            seq.len()
        )));
    }
    let key: u64 = rng.random();
    let stream = |tag: u64| -> CasaRng { substream(key, &[tag]) };
    let on = cfg.enabled;
    let p = cfg.geometric_probability;

    let mut fire = stream(STREAM_FIRE);
    let mut applied = AppliedOps {
        latent: fire.random_bool(p) && on.latent,
        angle: fire.random_bool(p) && on.angle,
        translation: fire.random_bool(p) && on.translation,
        flip: fire.random_bool(p) && on.flip,
        temporal: on.temporal,
    };

    let mut augmented = if applied.latent || applied.angle {
        let mut theta = poses.clone();
        if applied.latent {
            theta = latent_augment(&theta, latent, &mut stream(STREAM_LATENT), cfg)?;
        }
        if applied.angle {
            theta = angle_augment(&theta, &mut stream(STREAM_ANGLE), cfg)?;
        }
        seq.with_frames(fk_transform(&theta))
    } else {
        seq.clone()
    };

    let j_gt = if applied.temporal && seq.len() >= 2 {
        let (sub, idx) = temporal_augment(&augmented, &mut stream(STREAM_TEMPORAL), cfg);
        augmented = sub;
        idx
    } else {
        applied.temporal = false;
        (0..seq.len()).collect()
    };

    if applied.translation {
        augmented = translation_augment(&augmented, &mut stream(STREAM_TRANSLATION), cfg);
    }
    if applied.flip {
        augmented = flip(&augmented);
    }

    Ok(AugmentedPair { original: seq.clone(), augmented, j_gt, applied_ops: applied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::toy_humanoid;
    use crate::numeric::Matrix;
    use crate::skeleton::{inverse_kinematics_angles, normalize, Skeleton};

    fn wave_sequence(m: usize) -> SkeletonSequence {
        let topo = toy_humanoid();
        let p = topo.pose_param_count();
        let params = Matrix::from_fn(m, p, |r, c| {
            let t = r as f64 / m as f64;
            if c < 3 {
                0.0
            } else {
                0.4 * (t * 3.0 + c as f64).sin() + 0.05 * c as f64
            }
        });
        let poses = PoseParamSequence::new(params, topo.clone()).unwrap();
        let raw = SkeletonSequence {
            action_name: "wave".into(),
            fps: 30.0,
            topology: topo,
            frames: fk_transform(&poses),
            phase_labels: None,
            progress: None,
        };
        normalize(&raw).unwrap()
    }

    fn frames_equal(a: &Skeleton, b: &Skeleton) -> bool {
        a.joints == b.joints
    }

    #[test]
    fn temporal_identity_when_full_length() {
        let seq = wave_sequence(6);
        let cfg = AugmentConfig { temporal_min_fraction: 1.0, ..AugmentConfig::default() };
        let (sub, idx) = temporal_augment(&seq, &mut substream(1, &[]), &cfg);
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        assert_eq!(sub, seq);
    }

    #[test]
    fn translation_support_and_identity() {
        let seq = wave_sequence(5);
        let zero = AugmentConfig { sigma_translation: 0.0, ..AugmentConfig::default() };
        assert_eq!(translation_augment(&seq, &mut substream(2, &[]), &zero), seq);
        let cfg = AugmentConfig::default();
        let out = translation_augment(&seq, &mut substream(2, &[]), &cfg);
        let bound = 0.1 * 3f64.sqrt();
        for (a, b) in out.frames.iter().zip(&seq.frames) {
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                for k in 0..3 {
                    assert!((ja[k] - jb[k]).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn angle_identity_at_zero_sigma_and_translation_untouched() {
        let seq = wave_sequence(7);
        let poses = inverse_kinematics_angles(&seq).unwrap();
        let zero = AugmentConfig { sigma_angle: 0.0, ..AugmentConfig::default() };
        assert_eq!(angle_augment(&poses, &mut substream(3, &[]), &zero).unwrap(), poses);
        let out = angle_augment(&poses, &mut substream(3, &[]), &AugmentConfig::default()).unwrap();
        for r in 0..7 {
            assert_eq!(&out.params.row(r)[..3], &poses.params.row(r)[..3]);
        }
        assert_ne!(out, poses);
    }

    #[test]
    fn latent_requires_fit() {
        let seq = wave_sequence(4);
        let poses = inverse_kinematics_angles(&seq).unwrap();
        let err = latent_augment(&poses, None, &mut substream(4, &[]), &AugmentConfig::default());
        assert!(matches!(err, Err(AugmentError::LatentNotFitted(_))));
    }

    #[test]
    fn latent_zero_noise_is_projection() {
        let seq = wave_sequence(30);
        let poses = inverse_kinematics_angles(&seq).unwrap();
        let pca = PcaLatentSpace::fit(&poses.params, EXPLAINED_VARIANCE).unwrap();
        let cfg = AugmentConfig { sigma_latent: 0.0, ..AugmentConfig::default() };
        let once = latent_augment(&poses, Some(&pca), &mut substream(5, &[]), &cfg).unwrap();
        let expected = pca.decode(&pca.encode(&poses.params));
        assert_eq!(once.params, expected);
        let twice = latent_augment(&once, Some(&pca), &mut substream(5, &[]), &cfg).unwrap();
        assert!(twice.params.max_abs_diff(&once.params) < 1e-10);
    }

    #[test]
    fn disabled_pipeline_is_identity() {
        let seq = wave_sequence(12);
        let poses = inverse_kinematics_angles(&seq).unwrap();
        for s in 0..20 {
            let pair = make_pair(&seq, &poses, None, &AugmentConfig::disabled(), &mut substream(s, &[])).unwrap();
            assert_eq!(pair.augmented, seq);
            assert_eq!(pair.j_gt, (0..12).collect::<Vec<_>>());
            assert_eq!(pair.applied_ops, AppliedOps::default());
        }
    }

    #[test]
    fn temporal_only_preserves_frames_exactly() {
        let seq = wave_sequence(20);
        let poses = inverse_kinematics_angles(&seq).unwrap();
        let cfg = AugmentConfig { enabled: EnabledOps::temporal_only(), ..AugmentConfig::default() };
        for s in 0..20 {
            let pair = make_pair(&seq, &poses, None, &cfg, &mut substream(s, &[9])).unwrap();
            assert!(pair.j_gt.windows(2).all(|w| w[0] < w[1]));
            assert!(pair.j_gt.len() >= 10);
            for (j, &i) in pair.j_gt.iter().enumerate() {
                assert!(frames_equal(&pair.augmented.frames[j], &seq.frames[i]));
            }
        }
    }

    #[test]
    fn geometric_ops_do_not_change_j_gt_and_pipeline_is_deterministic() {
        let seq = wave_sequence(25);
        let poses = inverse_kinematics_angles(&seq).unwrap();
        let pca = PcaLatentSpace::fit(&poses.params, EXPLAINED_VARIANCE).unwrap();
        let all = AugmentConfig { geometric_probability: 1.0, ..AugmentConfig::default() };
        let temporal = AugmentConfig { enabled: EnabledOps::temporal_only(), ..all };
        for s in 0..10 {
            let a = make_pair(&seq, &poses, Some(&pca), &all, &mut substream(s, &[])).unwrap();
            let b = make_pair(&seq, &poses, Some(&pca), &all, &mut substream(s, &[])).unwrap();
            let t = make_pair(&seq, &poses, Some(&pca), &temporal, &mut substream(s, &[])).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.j_gt, t.j_gt);
            assert!(a.applied_ops.flip && a.applied_ops.angle && a.applied_ops.latent);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = AugmentConfig { geometric_probability: 1.5, ..AugmentConfig::default() };
        assert_eq!(cfg.validate(), Err(AugmentError::InvalidConfig("geometric_probability".into())));
    }
}
