//! Skeleton and sequence types, canonical normalization and mirror flipping.

mod kinematics;

pub use kinematics::{euler_xyz, fk_transform, inverse_kinematics_angles, PoseParamSequence, BONE_LENGTH_TOLERANCE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Matrix;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("degenerate frame {frame}: {reason}")]
    DegenerateFrame { frame: usize, reason: &'static str },
    #[error("frame {frame}, joint {joint}: bone length {observed} differs from rest length {rest} by more than 5%")]
    InconsistentBoneLengths { frame: usize, joint: usize, observed: f64, rest: f64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// Joints used to fix the canonical frame of every skeleton.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceJoints {
    /// Placed at the origin (chest for bodies, wrist for hands).
    pub origin: usize,
    /// Placed at distance 1 on +z (pelvis, middle MCP).
    pub axis: usize,
    /// Rotated into the +y half of the y-z plane (right shoulder, index MCP).
    pub plane: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joint_count: usize,
    /// Parent of every joint; the root is its own parent.
    pub bone_parents: Vec<usize>,
    pub reference_joints: ReferenceJoints,
    /// Left/right pairing; midline joints map to themselves.
    pub mirror_map: Vec<usize>,
    /// Length of the bone ending at each joint (0 for the root).
    pub bone_rest_lengths: Vec<f64>,
    /// Unit direction of each bone in the rest pose. Absent means +z for all bones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bone_rest_directions: Option<Vec<Vec3>>,
}

impl SkeletonTopology {
    pub fn root(&self) -> usize {
        self.bone_parents.iter().enumerate().find(|(i, &p)| *i == p).map_or(0, |(i, _)| i)
    }

    pub fn is_root(&self, joint: usize) -> bool {
        self.bone_parents[joint] == joint
    }

    pub fn rest_direction(&self, joint: usize) -> Vec3 {
        self.bone_rest_directions.as_ref().map_or([0.0, 0.0, 1.0], |d| d[joint])
    }

    /// Number of pose parameters per frame: root translation plus three
    /// Euler angles for every non-root joint.
    pub fn pose_param_count(&self) -> usize {
        3 + 3 * (self.joint_count - 1)
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let j = self.joint_count;
        let mut order = Vec::with_capacity(j);
        let mut placed = vec![false; j];
        let root = self.root();
        order.push(root);
        placed[root] = true;
        while order.len() < j {
            let before = order.len();
            for i in 0..j {
                if !placed[i] && placed[self.bone_parents[i]] {
                    placed[i] = true;
                    order.push(i);
                }
            }
            if order.len() == before {
                break;
            }
        }
        order
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        let j = self.joint_count;
        let fail = |what: &str| Err(SkeletonError::InvariantViolation(what.to_string()));
        if j == 0 {
            return fail("joint_count");
        }
        if self.bone_parents.len() != j || self.bone_parents.iter().any(|&p| p >= j) {
            return fail("bone_parents");
        }
        let roots = (0..j).filter(|&i| self.is_root(i)).count();
        if roots != 1 || self.topological_order().len() != j {
            return fail("bone_parents");
        }
        if self.mirror_map.len() != j
            || self.mirror_map.iter().any(|&m| m >= j)
            || (0..j).any(|i| self.mirror_map[self.mirror_map[i]] != i)
        {
            return fail("mirror_map");
        }
        let r = self.reference_joints;
        if r.origin >= j || r.axis >= j || r.plane >= j || r.origin == r.axis {
            return fail("reference_joints");
        }
        if self.bone_rest_lengths.len() != j
            || self.bone_rest_lengths.iter().any(|&l| !(l.is_finite() && l >= 0.0))
        {
            return fail("bone_rest_lengths");
        }
        if let Some(dirs) = &self.bone_rest_directions {
            let unit = |d: &Vec3| d.iter().all(|v| v.is_finite()) && (vnorm(d) - 1.0).abs() < 1e-9;
            if dirs.len() != j || !dirs.iter().all(unit) {
                return fail("bone_rest_directions");
            }
        }
        Ok(())
    }
}

/// One frame: `J` joint positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Skeleton {
    pub joints: Vec<Vec3>,
}

impl Skeleton {
    pub fn new(joints: Vec<Vec3>) -> Self {
        Self { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub action_name: String,
    pub fps: f64,
    pub topology: SkeletonTopology,
    pub frames: Vec<Skeleton>,
    pub phase_labels: Option<Vec<i64>>,
    pub progress: Option<Vec<f64>>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.topology.joint_count
    }

    /// Checks every type invariant, naming the first one that fails.
    pub fn validate(&self) -> Result<(), SkeletonError> {
        let fail = |what: &str| Err(SkeletonError::InvariantViolation(what.to_string()));
        self.topology.validate()?;
        if self.frames.is_empty() {
            return fail("frames");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail("fps");
        }
        for f in &self.frames {
            if f.joint_count() != self.topology.joint_count {
                return fail("frames");
            }
            if !f.is_finite() {
                return fail("frames");
            }
        }
        if let Some(labels) = &self.phase_labels {
            if labels.len() != self.frames.len() {
                return fail("phase_labels");
            }
        }
        if let Some(progress) = &self.progress {
            if progress.len() != self.frames.len()
                || progress.iter().any(|p| !(0.0..=1.0).contains(p))
                || progress.windows(2).any(|w| w[1] < w[0])
            {
                return fail("progress");
            }
        }
        Ok(())
    }

    /// Frames flattened to an `M x 3J` matrix, joint-major (`x0 y0 z0 x1 ...`).
    pub fn to_matrix(&self) -> Matrix {
        let d = 3 * self.joint_count();
        Matrix::from_fn(self.len(), d, |r, c| self.frames[r].joints[c / 3][c % 3])
    }

    /// Frames `indices`, labels carried along.
    pub fn select_frames(&self, indices: &[usize]) -> Self {
        Self {
            action_name: self.action_name.clone(),
            fps: self.fps,
            topology: self.topology.clone(),
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            phase_labels: self.phase_labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            progress: self.progress.as_ref().map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// First `len` frames.
    pub fn prefix(&self, len: usize) -> Self {
        self.select_frames(&(0..len).collect::<Vec<_>>())
    }

    pub fn with_frames(&self, frames: Vec<Skeleton>) -> Self {
        Self { frames, ..self.clone() }
    }
}

/// Distance below which origin and axis joints count as coincident.
pub const MIN_AXIS_LENGTH: f64 = 1e-9;
/// Minimum angle between origin→plane and origin→axis, in radians.
pub const MIN_PLANE_ANGLE: f64 = 1e-6;

/// Expresses one frame in the canonical frame of its reference joints.
pub fn normalize_frame(frame: &Skeleton, refs: ReferenceJoints, index: usize) -> Result<Skeleton, SkeletonError> {
    let origin = frame.joints[refs.origin];
    let axis = vsub(frame.joints[refs.axis], origin);
    let axis_len = vnorm(&axis);
    if !(axis_len >= MIN_AXIS_LENGTH) {
        return Err(SkeletonError::DegenerateFrame { frame: index, reason: "origin and axis joints coincide" });
    }
    let e3 = vscale(axis, 1.0 / axis_len);
    let p = vsub(frame.joints[refs.plane], origin);
    let p_perp = vsub(p, vscale(e3, vdot(&p, &e3)));
    let p_len = vnorm(&p);
    if p_len == 0.0 || !(vnorm(&p_perp) > p_len * MIN_PLANE_ANGLE.sin()) {
        return Err(SkeletonError::DegenerateFrame { frame: index, reason: "plane joint is parallel to the axis" });
    }
    let e2 = vscale(p_perp, 1.0 / vnorm(&p_perp));
    let e1 = vcross(&e2, &e3);
    let s = 1.0 / axis_len;
    let joints = frame
        .joints
        .iter()
        .map(|&j| {
            let v = vsub(j, origin);
            [vdot(&v, &e1) * s, vdot(&v, &e2) * s, vdot(&v, &e3) * s]
        })
        .collect();
    Ok(Skeleton { joints })
}

/// Moves the origin joint to 0, scales origin→axis to unit length along +z and
/// rotates the plane joint into the +y half-plane, frame by frame.
pub fn normalize(seq: &SkeletonSequence) -> Result<SkeletonSequence, SkeletonError> {
    let refs = seq.topology.reference_joints;
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| normalize_frame(f, refs, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(seq.with_frames(frames))
}

/// Mirror image of one frame: joint `i` takes the x-negated position of
/// joint `mirror_map[i]`.
pub fn flip_frame(frame: &Skeleton, mirror_map: &[usize]) -> Skeleton {
    Skeleton {
        joints: mirror_map
            .iter()
            .map(|&src| {
                let [x, y, z] = frame.joints[src];
                [-x, y, z]
            })
            .collect(),
    }
}

pub fn flip(seq: &SkeletonSequence) -> SkeletonSequence {
    let frames = seq.frames.iter().map(|f| flip_frame(f, &seq.topology.mirror_map)).collect();
    seq.with_frames(frames)
}

#[inline]
pub(crate) fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn vdot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn vcross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub(crate) fn vnorm(a: &Vec3) -> f64 {
    vdot(a, a).sqrt()
}
