//! Shape blending, forward kinematics, and linear blend skinning for the
//! body rig.
//!
//! Conventions:
//! - A pose stores one local rotation per joint (body then hands) plus a
//!   root translation.
//! - `PosedBody::joint_transforms[j]` is the rigid map from rest space to
//!   posed space for joint `j` (the skinning transform), so
//!   `A_j(rest_j) = posed_j` holds by construction.
//! - The recursion composes `A_j = A_parent ∘ (rotate about rest_j)`, which
//!   keeps an all-identity pose bit-exact: every `A_j` is then exactly the
//!   identity transform.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;

use crate::assets::{BodyRig, NUM_BODY_JOINTS};
use crate::error::{Error, Result};
use crate::math::{check_rotation, RigidTransform};

/// Per-joint local rotations plus root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Local rotations for the body joints (root first).
    pub body_rotations: Vec<Matrix3<f64>>,
    /// Local rotations for the hand joints, appended after the body.
    pub hand_rotations: Vec<Matrix3<f64>>,
    pub root_translation: Vector3<f64>,
}

impl Pose {
    pub fn identity(rig: &BodyRig) -> Self {
        let j = rig.joint_count();
        let nb = NUM_BODY_JOINTS.min(j);
        Self {
            body_rotations: vec![Matrix3::identity(); nb],
            hand_rotations: vec![Matrix3::identity(); j - nb],
            root_translation: Vector3::zeros(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.body_rotations.len() + self.hand_rotations.len()
    }

    pub fn rotation(&self, j: usize) -> &Matrix3<f64> {
        if j < self.body_rotations.len() {
            &self.body_rotations[j]
        } else {
            &self.hand_rotations[j - self.body_rotations.len()]
        }
    }

    pub fn rotation_mut(&mut self, j: usize) -> &mut Matrix3<f64> {
        if j < self.body_rotations.len() {
            &mut self.body_rotations[j]
        } else {
            let nb = self.body_rotations.len();
            &mut self.hand_rotations[j - nb]
        }
    }

    /// All rotations must be valid rotation matrices within `tol`.
    pub fn validate(&self, rig: &BodyRig, tol: f64) -> Result<()> {
        if self.joint_count() != rig.joint_count() {
            return Err(Error::DimensionMismatch {
                what: "pose rotations".into(),
                expected: rig.joint_count().to_string(),
                actual: self.joint_count().to_string(),
            });
        }
        for j in 0..self.joint_count() {
            check_rotation(self.rotation(j), tol, &format!("pose rotation {j}"))?;
        }
        if !self.root_translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvariantViolation {
                field: "root_translation".into(),
                detail: format!("{:?}", self.root_translation),
            });
        }
        Ok(())
    }
}

/// FK output: per-joint rest-to-posed transforms and posed joint positions.
#[derive(Debug, Clone)]
pub struct PosedBody {
    /// `A_j`: rigid rest-space → posed-space transform per joint.
    pub joint_transforms: Vec<RigidTransform>,
    /// Posed joint positions, `A_j(rest_j)`.
    pub posed_joints: Vec<Vector3<f64>>,
    /// The (possibly shape-adjusted) rest joints FK ran against.
    pub rest_joints: Vec<Vector3<f64>>,
    pub root_joint: usize,
}

impl PosedBody {
    pub fn root_position(&self) -> Vector3<f64> {
        self.posed_joints[self.root_joint]
    }
}

/// `T(β) = mean + Σ_k β_k basis_k` (vertex displacement blending).
pub fn shape_blend(rig: &BodyRig, beta: &[f64]) -> Result<Array2<f64>> {
    let k = rig.shape_basis.shape()[0];
    if beta.len() != k {
        return Err(Error::DimensionMismatch {
            what: "shape coefficients".into(),
            expected: k.to_string(),
            actual: beta.len().to_string(),
        });
    }
    let mut out = rig.mean_vertices.clone();
    for (ki, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        out.scaled_add(b, &rig.shape_basis.index_axis(ndarray::Axis(0), ki));
    }
    Ok(out)
}

/// Rest joints after shape blending. Joint displacements are regressed from
/// vertex displacements with the column-normalized skinning weights, so zero
/// coefficients return the stored rest joints bit-for-bit.
pub fn shaped_rest_joints(rig: &BodyRig, beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
    let mut joints: Vec<Vector3<f64>> =
        (0..rig.joint_count()).map(|j| rig.rest_joint(j)).collect();
    if beta.iter().all(|&b| b == 0.0) {
        if beta.len() != rig.shape_basis.shape()[0] {
            return Err(Error::DimensionMismatch {
                what: "shape coefficients".into(),
                expected: rig.shape_basis.shape()[0].to_string(),
                actual: beta.len().to_string(),
            });
        }
        return Ok(joints);
    }
    let shaped = shape_blend(rig, beta)?;
    let delta = &shaped - &rig.mean_vertices;
    let n = rig.vertex_count();
    let jn = rig.joint_count();
    // Column-normalized weights: r_ij = w_ij / Σ_i w_ij.
    let col_sums: Vec<f64> = (0..jn).map(|j| rig.skinning_weights.column(j).sum()).collect();
    for j in 0..jn {
        if col_sums[j] <= 0.0 {
            continue; // joint influences no vertex; keep its stored offset
        }
        let mut acc = Vector3::zeros();
        for i in 0..n {
            let w = rig.skinning_weights[[i, j]];
            if w != 0.0 {
                acc += Vector3::new(delta[[i, 0]], delta[[i, 1]], delta[[i, 2]]) * w;
            }
        }
        joints[j] += acc / col_sums[j];
    }
    Ok(joints)
}

/// Topological order with every parent before its children.
fn topo_order(parents: &[Option<usize>]) -> Vec<usize> {
    let j = parents.len();
    let mut order = Vec::with_capacity(j);
    let mut placed = vec![false; j];
    while order.len() < j {
        for i in 0..j {
            if placed[i] {
                continue;
            }
            if parents[i].map(|p| placed[p]).unwrap_or(true) {
                placed[i] = true;
                order.push(i);
            }
        }
    }
    order
}

/// Forward kinematics over the joint hierarchy. `beta`, when given, shifts
/// the rest joints through [`shaped_rest_joints`] before posing.
pub fn forward_kinematics(rig: &BodyRig, pose: &Pose, beta: Option<&[f64]>) -> Result<PosedBody> {
    if pose.joint_count() != rig.joint_count() {
        return Err(Error::DimensionMismatch {
            what: "pose rotations".into(),
            expected: rig.joint_count().to_string(),
            actual: pose.joint_count().to_string(),
        });
    }
    let rest: Vec<Vector3<f64>> = match beta {
        Some(b) => shaped_rest_joints(rig, b)?,
        None => (0..rig.joint_count()).map(|j| rig.rest_joint(j)).collect(),
    };
    Ok(fk_from_rest(&rig.parent_index, &rest, pose))
}

/// FK against explicit rest joints (used by the IK gradient path, which
/// re-derives rest joints from shape coefficients itself).
pub fn fk_from_rest(
    parents: &[Option<usize>],
    rest: &[Vector3<f64>],
    pose: &Pose,
) -> PosedBody {
    let jn = parents.len();
    let mut transforms = vec![RigidTransform::identity(); jn];
    let mut posed = vec![Vector3::zeros(); jn];
    let mut root = 0usize;
    for j in topo_order(parents) {
        let r = *pose.rotation(j);
        // Rotation about the joint's rest position: x ↦ R (x − rest_j) + rest_j.
        let local = RigidTransform {
            rotation: r,
            translation: rest[j] - r * rest[j],
        };
        transforms[j] = match parents[j] {
            Some(p) => transforms[p].compose(&local),
            None => {
                root = j;
                let mut t = local;
                t.translation += pose.root_translation;
                t
            }
        };
        posed[j] = transforms[j].apply(&rest[j]);
    }
    PosedBody {
        joint_transforms: transforms,
        posed_joints: posed,
        rest_joints: rest.to_vec(),
        root_joint: root,
    }
}

/// Linear blend skinning. Vertices are blended as weighted displacements
/// from the rest vertex (`v + Σ_j w_ij (A_j v − v)`), which reproduces the
/// input bit-for-bit when every transform is the identity.
pub fn lbs(rig: &BodyRig, rest_vertices: &Array2<f64>, posed: &PosedBody) -> Result<Array2<f64>> {
    let n = rig.vertex_count();
    if rest_vertices.shape() != [n, 3] {
        return Err(Error::DimensionMismatch {
            what: "rest vertices".into(),
            expected: format!("[{n}, 3]"),
            actual: format!("{:?}", rest_vertices.shape()),
        });
    }
    if posed.joint_transforms.len() != rig.joint_count() {
        return Err(Error::DimensionMismatch {
            what: "joint transforms".into(),
            expected: rig.joint_count().to_string(),
            actual: posed.joint_transforms.len().to_string(),
        });
    }
    let mut out = rest_vertices.clone();
    for i in 0..n {
        let v = Vector3::new(rest_vertices[[i, 0]], rest_vertices[[i, 1]], rest_vertices[[i, 2]]);
        let mut acc = Vector3::zeros();
        for (j, t) in posed.joint_transforms.iter().enumerate() {
            let w = rig.skinning_weights[[i, j]];
            if w != 0.0 {
                acc += (t.apply(&v) - v) * w;
            }
        }
        out[[i, 0]] += acc.x;
        out[[i, 1]] += acc.y;
        out[[i, 2]] += acc.z;
    }
    Ok(out)
}

/// Root-relative 3D keypoints regressed from a posed body, together with
/// the basic/extended id split and hand joint blocks.
#[derive(Debug, Clone)]
pub struct Keypoints {
    /// Root-relative position per joint (all `J` joints).
    pub positions: Vec<Vector3<f64>>,
    /// Absolute position of the root joint.
    pub root_position: Vector3<f64>,
    pub basic_ids: Vec<usize>,
    pub extended_ids: Vec<usize>,
}

impl Keypoints {
    pub fn basic(&self) -> Vec<Vector3<f64>> {
        self.basic_ids.iter().map(|&i| self.positions[i]).collect()
    }

    pub fn extended(&self) -> Vec<Vector3<f64>> {
        self.extended_ids.iter().map(|&i| self.positions[i]).collect()
    }

    /// Hand joint positions: `side = 0` selects the first 15 hand joints
    /// (left), `side = 1` the second 15.
    pub fn hand(&self, side: usize) -> Vec<Vector3<f64>> {
        let start = NUM_BODY_JOINTS + side * 15;
        (start..start + 15).map(|i| self.positions[i]).collect()
    }
}

/// Subtract the root so keypoints are root-relative; the delta of the root
/// itself is exactly zero.
pub fn regress_keypoints(rig: &BodyRig, posed: &PosedBody) -> Keypoints {
    let root = posed.posed_joints[posed.root_joint];
    let positions = posed
        .posed_joints
        .iter()
        .map(|p| p - root)
        .collect();
    Keypoints {
        positions,
        root_position: root,
        basic_ids: rig.basic_keypoint_ids.clone(),
        extended_ids: rig.extended_keypoint_ids.clone(),
    }
}
