//! Toy forward kinematics: every non-root joint carries XYZ Euler angles that
//! rotate its bone about the parent's accumulated orientation.
//!
//! Pose parameter layout per frame: `[tx, ty, tz, a_1, b_1, c_1, a_2, ...]`
//! where the translation places the root and `(a, b, c)` are the angles of the
//! non-root joints in increasing index order. Angles act in a per-bone frame
//! whose +z is the rest direction, so `c` is always the twist about the bone.

use super::{vadd, vcross, vdot, vnorm, vscale, vsub, Skeleton, SkeletonError, SkeletonSequence, SkeletonTopology, Vec3};
use crate::numeric::Matrix;

/// Relative bone-length mismatch accepted by [`inverse_kinematics_angles`].
pub const BONE_LENGTH_TOLERANCE: f64 = 0.05;

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [vdot(&a[0], v), vdot(&a[1], v), vdot(&a[2], v)]
}

fn mat_t_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
        a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
        a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
    ]
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// `Rx(a) · Ry(b) · Rz(c)`.
pub fn euler_xyz(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&rx, &ry), &rz)
}

/// Rotation taking +z onto the unit vector `dir` (minimal rotation).
fn bone_frame(dir: Vec3) -> Mat3 {
    let z = [0.0, 0.0, 1.0];
    let c = vdot(&z, &dir);
    if c > 1.0 - 1e-12 {
        return IDENTITY;
    }
    if c < -1.0 + 1e-12 {
        return [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    }
    let axis = vcross(&z, &dir);
    let s = vnorm(&axis);
    let k = vscale(axis, 1.0 / s);
    // Rodrigues: R = I + sinθ K + (1 − cosθ) K²
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let kx2 = mat_mul(&kx, &kx);
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * kx[i][j] + (1.0 - c) * kx2[i][j];
        }
    }
    r
}

/// Per-joint data shared by the forward and inverse passes.
struct Chain {
    order: Vec<usize>,
    frames: Vec<Mat3>,
    /// Column of the first angle of each non-root joint in the parameter row.
    param_offset: Vec<Option<usize>>,
}

impl Chain {
    fn new(topology: &SkeletonTopology) -> Self {
        let j = topology.joint_count;
        let mut param_offset = vec![None; j];
        let mut next = 3;
        for (i, slot) in param_offset.iter_mut().enumerate() {
            if !topology.is_root(i) {
                *slot = Some(next);
                next += 3;
            }
        }
        Self {
            order: topology.topological_order(),
            frames: (0..j).map(|i| bone_frame(topology.rest_direction(i))).collect(),
            param_offset,
        }
    }
}

fn fk_frame(topology: &SkeletonTopology, chain: &Chain, params: &[f64]) -> Skeleton {
    let j = topology.joint_count;
    let mut pos = vec![[0.0; 3]; j];
    let mut orient = vec![IDENTITY; j];
    for &joint in &chain.order {
        let len = topology.bone_rest_lengths[joint];
        let b = &chain.frames[joint];
        match chain.param_offset[joint] {
            None => {
                let t = [params[0], params[1], params[2]];
                pos[joint] = vadd(t, vscale(mat_vec(b, &[0.0, 0.0, 1.0]), len));
            }
            Some(o) => {
                let parent = topology.bone_parents[joint];
                let e = euler_xyz(params[o], params[o + 1], params[o + 2]);
                let local = mat_mul(&mat_mul(b, &e), &transpose(b));
                orient[joint] = mat_mul(&orient[parent], &local);
                // R_local · rest_dir = B · E · z
                let dir = mat_vec(&orient[parent], &mat_vec(b, &mat_vec(&e, &[0.0, 0.0, 1.0])));
                pos[joint] = vadd(pos[parent], vscale(dir, len));
            }
        }
    }
    Skeleton { joints: pos }
}

/// Per-frame pose parameters (`M x P`, layout in the module docs).
#[derive(Clone, Debug, PartialEq)]
pub struct PoseParamSequence {
    pub params: Matrix,
    pub topology: SkeletonTopology,
}

impl PoseParamSequence {
    pub fn new(params: Matrix, topology: SkeletonTopology) -> Result<Self, SkeletonError> {
        if params.cols() != topology.pose_param_count() || params.rows() == 0 {
            return Err(SkeletonError::InvariantViolation("pose_params".into()));
        }
        if !params.is_finite() {
            return Err(SkeletonError::InvariantViolation("pose_params".into()));
        }
        Ok(Self { params, topology })
    }

    pub fn len(&self) -> usize {
        self.params.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.params.rows() == 0
    }

    /// Columns holding Euler angles (everything except the root translation).
    pub fn angle_columns(&self) -> std::ops::Range<usize> {
        3..self.params.cols()
    }

    pub fn select_frames(&self, indices: &[usize]) -> Self {
        Self { params: self.params.select_rows(indices), topology: self.topology.clone() }
    }
}

/// Joint positions for every frame of `poses`.
pub fn fk_transform(poses: &PoseParamSequence) -> Vec<Skeleton> {
    let chain = Chain::new(&poses.topology);
    (0..poses.len()).map(|r| fk_frame(&poses.topology, &chain, poses.params.row(r))).collect()
}

/// Closed-form per-bone angle recovery with zero twist.
///
/// [`fk_transform`] of the result reproduces the input joints whenever bone
/// lengths match the rest lengths.
pub fn inverse_kinematics_angles(seq: &SkeletonSequence) -> Result<PoseParamSequence, SkeletonError> {
    let topology = &seq.topology;
    let chain = Chain::new(topology);
    let root = topology.root();
    let mut out = Matrix::zeros(seq.len(), topology.pose_param_count());
    for (f, frame) in seq.frames.iter().enumerate() {
        let row = out.row_mut(f);
        let root_dir = mat_vec(&chain.frames[root], &[0.0, 0.0, 1.0]);
        let t = vsub(frame.joints[root], vscale(root_dir, topology.bone_rest_lengths[root]));
        row[..3].copy_from_slice(&t);
        let mut orient = vec![IDENTITY; topology.joint_count];
        for &joint in chain.order.iter().skip(1) {
            let parent = topology.bone_parents[joint];
            let rest = topology.bone_rest_lengths[joint];
            let bone = vsub(frame.joints[joint], frame.joints[parent]);
            let observed = vnorm(&bone);
            if (observed - rest).abs() > BONE_LENGTH_TOLERANCE * rest || (rest == 0.0 && observed > 1e-9) {
                return Err(SkeletonError::InconsistentBoneLengths { frame: f, joint, observed, rest });
            }
            let o = chain.param_offset[joint].expect("non-root joint");
            let (a, b) = if rest == 0.0 {
                (0.0, 0.0)
            } else {
                let local = mat_t_vec(&orient[parent], &vscale(bone, 1.0 / observed));
                let w = mat_t_vec(&chain.frames[joint], &local);
                // E(a, b, 0)·z = (sin b, −sin a cos b, cos a cos b)
                (f64::atan2(-w[1], w[2]), w[0].clamp(-1.0, 1.0).asin())
            };
            row[o] = a;
            row[o + 1] = b;
            row[o + 2] = 0.0;
            let bf = &chain.frames[joint];
            let local = mat_mul(&mat_mul(bf, &euler_xyz(a, b, 0.0)), &transpose(bf));
            orient[joint] = mat_mul(&orient[parent], &local);
        }
    }
    Ok(PoseParamSequence { params: out, topology: topology.clone() })
}
