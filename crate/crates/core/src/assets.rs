//! Asset types for the body rig and the statistical face model, their KBA1
//! serialization, and a seeded synthetic generator producing desk-scale
//! instances with known ground truth.
//!
//! Synthetic rig joint ordering (fixed by this generator, y-up, meters):
//!
//! ```text
//!  0 pelvis (root)        6..=9   left leg (hip knee ankle foot)
//!  1..=3 spine1..3       10..=13  right leg
//!  4 neck, 5 head        14..=17  left clavicle shoulder elbow wrist
//!                        18..=21  right clavicle shoulder elbow wrist
//! 22..=36  left hand: 5 fingers x (proximal, middle, distal)
//! 37..=51  right hand, same layout
//! ```

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2, Array3, ArrayD, Ix1, Ix2, Ix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kba::KbaFile;

pub const NUM_BODY_JOINTS: usize = 22;
pub const NUM_HAND_JOINTS: usize = 30;
pub const NUM_JOINTS: usize = NUM_BODY_JOINTS + NUM_HAND_JOINTS;
pub const NUM_SHAPE_PARAMS: usize = 16;
pub const NUM_FACE_SHAPE_PARAMS: usize = 80;
pub const NUM_FACE_EXPRESSION_PARAMS: usize = 64;
pub const NUM_FACE_REFLECTANCE_PARAMS: usize = 80;

/// Sentinel stored in the parent array for the root joint.
pub const PARENT_NONE: u32 = u32::MAX;

const ASSET_KIND_BODY: u32 = 1;
const ASSET_KIND_FACE: u32 = 2;
const ASSET_KIND_MERGE: u32 = 3;

/// Skinned body-plus-hands rig: template mesh, shape basis, skeleton, and
/// the basic/extended keypoint split.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyRig {
    /// Template vertices, `N x 3`, meters.
    pub mean_vertices: Array2<f64>,
    /// Shape displacement basis, `16 x N x 3`; components are orthonormal
    /// when the whole tensor is viewed as a `(3N) x 16` matrix.
    pub shape_basis: Array3<f64>,
    /// Per-vertex joint weights, `N x J`; rows are nonnegative and sum to 1.
    pub skinning_weights: Array2<f64>,
    /// Parent joint per joint; `None` for the single root.
    pub parent_index: Vec<Option<usize>>,
    /// Rest-pose joint positions, `J x 3`, meters.
    pub rest_joint_positions: Array2<f64>,
    /// Dataset-shared body keypoint ids.
    pub basic_keypoint_ids: Vec<usize>,
    /// Dataset-specific body keypoint ids, disjoint from the basic set.
    pub extended_keypoint_ids: Vec<usize>,
}

impl BodyRig {
    pub fn vertex_count(&self) -> usize {
        self.mean_vertices.nrows()
    }

    pub fn joint_count(&self) -> usize {
        self.parent_index.len()
    }

    pub fn root_joint(&self) -> usize {
        self.parent_index
            .iter()
            .position(|p| p.is_none())
            .expect("validated rig has a root")
    }

    pub fn rest_joint(&self, j: usize) -> Vector3<f64> {
        let row = self.rest_joint_positions.row(j);
        Vector3::new(row[0], row[1], row[2])
    }

    /// Mean length over all bones (every non-root joint defines one bone to
    /// its parent).
    pub fn mean_bone_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (j, parent) in self.parent_index.iter().enumerate() {
            if let Some(p) = parent {
                total += (self.rest_joint(j) - self.rest_joint(*p)).norm();
                count += 1;
            }
        }
        total / count as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean_vertices.nrows();
        let j = self.parent_index.len();
        check_dims(
            "mean_vertices",
            self.mean_vertices.shape(),
            &[n, 3],
        )?;
        check_dims(
            "shape_basis",
            self.shape_basis.shape(),
            &[NUM_SHAPE_PARAMS, n, 3],
        )?;
        check_dims(
            "skinning_weights",
            self.skinning_weights.shape(),
            &[n, j],
        )?;
        check_dims(
            "rest_joint_positions",
            self.rest_joint_positions.shape(),
            &[j, 3],
        )?;
        check_finite("mean_vertices", self.mean_vertices.iter())?;
        check_finite("shape_basis", self.shape_basis.iter())?;
        check_finite("rest_joint_positions", self.rest_joint_positions.iter())?;

        for (i, row) in self.skinning_weights.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &w in row.iter() {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvariantViolation {
                        field: "skinning_weights".into(),
                        detail: format!("row {i} contains a negative or non-finite weight {w}"),
                    });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvariantViolation {
                    field: "skinning_weights".into(),
                    detail: format!("row {i} sums to {sum}, expected 1 within 1e-6"),
                });
            }
        }

        validate_tree(&self.parent_index)?;

        for (name, ids) in [
            ("basic_keypoint_ids", &self.basic_keypoint_ids),
            ("extended_keypoint_ids", &self.extended_keypoint_ids),
        ] {
            for &id in ids.iter() {
                if id >= j {
                    return Err(Error::InvariantViolation {
                        field: name.into(),
                        detail: format!("keypoint id {id} out of range (J = {j})"),
                    });
                }
            }
        }
        for b in &self.basic_keypoint_ids {
            if self.extended_keypoint_ids.contains(b) {
                return Err(Error::InvariantViolation {
                    field: "basic_keypoint_ids".into(),
                    detail: format!("id {b} appears in both the basic and extended sets"),
                });
            }
        }
        Ok(())
    }

    pub fn to_kba(&self) -> KbaFile {
        let mut file = KbaFile::new();
        file.push_u32("asset_kind", Array1::from_vec(vec![ASSET_KIND_BODY]).into_dyn());
        file.push_f64("mean_vertices", self.mean_vertices.clone().into_dyn());
        file.push_f64("shape_basis", self.shape_basis.clone().into_dyn());
        file.push_f64("skinning_weights", self.skinning_weights.clone().into_dyn());
        file.push_u32(
            "parent_index",
            Array1::from_vec(
                self.parent_index
                    .iter()
                    .map(|p| p.map(|v| v as u32).unwrap_or(PARENT_NONE))
                    .collect(),
            )
            .into_dyn(),
        );
        file.push_f64(
            "rest_joint_positions",
            self.rest_joint_positions.clone().into_dyn(),
        );
        file.push_u32("basic_keypoint_ids", ids_to_u32(&self.basic_keypoint_ids));
        file.push_u32(
            "extended_keypoint_ids",
            ids_to_u32(&self.extended_keypoint_ids),
        );
        file
    }

    pub fn from_kba(file: &KbaFile) -> Result<Self> {
        let rig = Self {
            mean_vertices: to_fixed2(file.require_f64("mean_vertices", 2)?, "mean_vertices")?,
            shape_basis: to_fixed3(file.require_f64("shape_basis", 3)?, "shape_basis")?,
            skinning_weights: to_fixed2(
                file.require_f64("skinning_weights", 2)?,
                "skinning_weights",
            )?,
            parent_index: file
                .require_u32("parent_index", 1)?
                .iter()
                .map(|&v| if v == PARENT_NONE { None } else { Some(v as usize) })
                .collect(),
            rest_joint_positions: to_fixed2(
                file.require_f64("rest_joint_positions", 2)?,
                "rest_joint_positions",
            )?,
            basic_keypoint_ids: ids_from_u32(file.require_u32("basic_keypoint_ids", 1)?),
            extended_keypoint_ids: ids_from_u32(file.require_u32("extended_keypoint_ids", 1)?),
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kba().save(path)
    }
}

/// Statistical face model: mean geometry plus shape, expression, and
/// reflectance bases over a fixed triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceAsset {
    pub mean_face: Array2<f64>,
    /// `80 x N_F x 3`.
    pub shape_basis: Array3<f64>,
    /// `64 x N_F x 3`.
    pub expression_basis: Array3<f64>,
    /// Per-vertex RGB in `[0, 1]`.
    pub mean_reflectance: Array2<f64>,
    /// `80 x N_F x 3`.
    pub reflectance_basis: Array3<f64>,
    pub triangles: Vec<[u32; 3]>,
    /// Ordered, closed boundary loop (vertex ids).
    pub boundary_loop: Vec<usize>,
    pub landmark_ids: Vec<usize>,
}

impl FaceAsset {
    pub fn vertex_count(&self) -> usize {
        self.mean_face.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean_face.nrows();
        check_dims("mean_face", self.mean_face.shape(), &[n, 3])?;
        check_dims(
            "shape_basis",
            self.shape_basis.shape(),
            &[NUM_FACE_SHAPE_PARAMS, n, 3],
        )?;
        check_dims(
            "expression_basis",
            self.expression_basis.shape(),
            &[NUM_FACE_EXPRESSION_PARAMS, n, 3],
        )?;
        check_dims(
            "mean_reflectance",
            self.mean_reflectance.shape(),
            &[n, 3],
        )?;
        check_dims(
            "reflectance_basis",
            self.reflectance_basis.shape(),
            &[NUM_FACE_REFLECTANCE_PARAMS, n, 3],
        )?;
        check_finite("mean_face", self.mean_face.iter())?;
        for &v in self.mean_reflectance.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvariantViolation {
                    field: "mean_reflectance".into(),
                    detail: format!("value {v} outside [0, 1]"),
                });
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v as usize >= n {
                    return Err(Error::InvariantViolation {
                        field: "triangles".into(),
                        detail: format!("triangle {t} references vertex {v} (N_F = {n})"),
                    });
                }
            }
        }
        if self.boundary_loop.len() < 3 {
            return Err(Error::InvariantViolation {
                field: "boundary_loop".into(),
                detail: format!("loop has {} vertices, need at least 3", self.boundary_loop.len()),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for &v in &self.boundary_loop {
            if v >= n {
                return Err(Error::InvariantViolation {
                    field: "boundary_loop".into(),
                    detail: format!("vertex id {v} out of range (N_F = {n})"),
                });
            }
            if !seen.insert(v) {
                return Err(Error::InvariantViolation {
                    field: "boundary_loop".into(),
                    detail: format!("vertex id {v} repeats; loop must be simple"),
                });
            }
        }
        // Closed loop on the triangle topology: every consecutive pair
        // (wrapping) is an edge of some triangle.
        let mut edges = std::collections::HashSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k] as usize;
                let b = tri[(k + 1) % 3] as usize;
                edges.insert((a.min(b), a.max(b)));
            }
        }
        for i in 0..self.boundary_loop.len() {
            let a = self.boundary_loop[i];
            let b = self.boundary_loop[(i + 1) % self.boundary_loop.len()];
            if !edges.contains(&(a.min(b), a.max(b))) {
                return Err(Error::InvariantViolation {
                    field: "boundary_loop".into(),
                    detail: format!("({a}, {b}) is not an edge of the triangulation"),
                });
            }
        }
        for &id in &self.landmark_ids {
            if id >= n {
                return Err(Error::InvariantViolation {
                    field: "landmark_ids".into(),
                    detail: format!("landmark id {id} out of range (N_F = {n})"),
                });
            }
        }
        Ok(())
    }

    pub fn to_kba(&self) -> KbaFile {
        let mut file = KbaFile::new();
        file.push_u32("asset_kind", Array1::from_vec(vec![ASSET_KIND_FACE]).into_dyn());
        file.push_f64("mean_face", self.mean_face.clone().into_dyn());
        file.push_f64("shape_basis", self.shape_basis.clone().into_dyn());
        file.push_f64("expression_basis", self.expression_basis.clone().into_dyn());
        file.push_f64("mean_reflectance", self.mean_reflectance.clone().into_dyn());
        file.push_f64("reflectance_basis", self.reflectance_basis.clone().into_dyn());
        let mut tris = Array2::<u32>::zeros((self.triangles.len(), 3));
        for (i, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                tris[[i, k]] = t[k];
            }
        }
        file.push_u32("triangles", tris.into_dyn());
        file.push_u32("boundary_loop", ids_to_u32(&self.boundary_loop));
        file.push_u32("landmark_ids", ids_to_u32(&self.landmark_ids));
        file
    }

    pub fn from_kba(file: &KbaFile) -> Result<Self> {
        let tris_arr = file.require_u32("triangles", 2)?;
        if tris_arr.shape()[1] != 3 {
            return Err(Error::SchemaMismatch {
                detail: format!("triangles: expected T x 3, got {:?}", tris_arr.shape()),
            });
        }
        let triangles = tris_arr
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let asset = Self {
            mean_face: to_fixed2(file.require_f64("mean_face", 2)?, "mean_face")?,
            shape_basis: to_fixed3(file.require_f64("shape_basis", 3)?, "shape_basis")?,
            expression_basis: to_fixed3(
                file.require_f64("expression_basis", 3)?,
                "expression_basis",
            )?,
            mean_reflectance: to_fixed2(
                file.require_f64("mean_reflectance", 2)?,
                "mean_reflectance",
            )?,
            reflectance_basis: to_fixed3(
                file.require_f64("reflectance_basis", 3)?,
                "reflectance_basis",
            )?,
            triangles,
            boundary_loop: ids_from_u32(file.require_u32("boundary_loop", 1)?),
            landmark_ids: ids_from_u32(file.require_u32("landmark_ids", 1)?),
        };
        asset.validate()?;
        Ok(asset)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kba().save(path)
    }
}

/// Alignment between the face asset and the rig's head: how to scale and
/// place the face, which body loop it stitches to, which body vertices it
/// replaces, and which joint it rides on.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeSpec {
    /// Ordered loop of body vertex ids that receives the face boundary.
    pub body_boundary_loop: Vec<usize>,
    /// Body vertices replaced by the face (excluded from merged output).
    pub face_region: Vec<usize>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    /// Joint whose posed transform carries the face (its child holds the
    /// head angles).
    pub neck_joint_id: usize,
}

impl MergeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale <= 0.0 || !self.scale.is_finite() {
            return Err(Error::InvariantViolation {
                field: "scale".into(),
                detail: format!("scale {} must be positive", self.scale),
            });
        }
        crate::math::check_rotation(&self.rotation, 1e-8, "merge_spec.rotation")?;
        if self.body_boundary_loop.len() < 3 {
            return Err(Error::InvariantViolation {
                field: "body_boundary_loop".into(),
                detail: format!(
                    "loop has {} vertices, need at least 3",
                    self.body_boundary_loop.len()
                ),
            });
        }
        Ok(())
    }

    pub fn to_kba(&self) -> KbaFile {
        let mut file = KbaFile::new();
        file.push_u32("asset_kind", Array1::from_vec(vec![ASSET_KIND_MERGE]).into_dyn());
        let mut rot = Array2::<f64>::zeros((3, 3));
        for r in 0..3 {
            for c in 0..3 {
                rot[[r, c]] = self.rotation[(r, c)];
            }
        }
        file.push_f64("rotation", rot.into_dyn());
        file.push_f64(
            "translation",
            Array1::from_vec(vec![self.translation.x, self.translation.y, self.translation.z])
                .into_dyn(),
        );
        file.push_f64("scale", Array1::from_vec(vec![self.scale]).into_dyn());
        file.push_u32("body_boundary_loop", ids_to_u32(&self.body_boundary_loop));
        file.push_u32("face_region", ids_to_u32(&self.face_region));
        file.push_u32(
            "neck_joint_id",
            Array1::from_vec(vec![self.neck_joint_id as u32]).into_dyn(),
        );
        file
    }

    pub fn from_kba(file: &KbaFile) -> Result<Self> {
        let rot = to_fixed2(file.require_f64("rotation", 2)?, "rotation")?;
        check_dims("rotation", rot.shape(), &[3, 3])?;
        let mut rotation = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rotation[(r, c)] = rot[[r, c]];
            }
        }
        let t = file.require_f64("translation", 1)?;
        if t.len() != 3 {
            return Err(Error::SchemaMismatch {
                detail: format!("translation: expected 3 values, got {}", t.len()),
            });
        }
        let spec = Self {
            body_boundary_loop: ids_from_u32(file.require_u32("body_boundary_loop", 1)?),
            face_region: ids_from_u32(file.require_u32("face_region", 1)?),
            rotation,
            translation: Vector3::new(t[[0]], t[[1]], t[[2]]),
            scale: file.require_f64_scalar("scale")?,
            neck_joint_id: file.require_u32_scalar("neck_joint_id")? as usize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kba().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = KbaFile::load(path)?;
        let kind = file.require_u32_scalar("asset_kind")?;
        if kind != ASSET_KIND_MERGE {
            return Err(Error::SchemaMismatch {
                detail: format!("asset_kind {kind} is not a merge spec ({ASSET_KIND_MERGE})"),
            });
        }
        Self::from_kba(&file)
    }
}

/// A loaded rig or face asset.
#[derive(Debug, Clone, PartialEq)]
pub enum Asset {
    Body(BodyRig),
    Face(FaceAsset),
}

/// Load a body rig or face asset, validating every type invariant.
/// Violations are rejected with field-level diagnostics, never repaired.
pub fn load_asset(path: &Path) -> Result<Asset> {
    let file = KbaFile::load(path)?;
    match file.require_u32_scalar("asset_kind")? {
        ASSET_KIND_BODY => Ok(Asset::Body(BodyRig::from_kba(&file)?)),
        ASSET_KIND_FACE => Ok(Asset::Face(FaceAsset::from_kba(&file)?)),
        other => Err(Error::SchemaMismatch {
            detail: format!("unknown asset_kind {other} (expected 1 = body rig, 2 = face)"),
        }),
    }
}

pub fn load_body_rig(path: &Path) -> Result<BodyRig> {
    match load_asset(path)? {
        Asset::Body(rig) => Ok(rig),
        Asset::Face(_) => Err(Error::SchemaMismatch {
            detail: "expected a body rig, found a face asset".into(),
        }),
    }
}

pub fn load_face_asset(path: &Path) -> Result<FaceAsset> {
    match load_asset(path)? {
        Asset::Face(asset) => Ok(asset),
        Asset::Body(_) => Err(Error::SchemaMismatch {
            detail: "expected a face asset, found a body rig".into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Per-purpose RNG derived from one master seed; `stream` keeps the draws
/// for different sub-tasks independent of each other's draw counts.
pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct SkeletonDef {
    parents: Vec<Option<usize>>,
    joints: Vec<Vector3<f64>>,
}

/// Rest skeleton: spine chain with legs, two arms, 15-joint hand trees.
fn skeleton() -> SkeletonDef {
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(NUM_JOINTS);
    let mut joints: Vec<Vector3<f64>> = Vec::with_capacity(NUM_JOINTS);
    macro_rules! add {
        ($parent:expr, $p:expr) => {{
            let p: [f64; 3] = $p;
            parents.push($parent);
            joints.push(Vector3::new(p[0], p[1], p[2]));
        }};
    }

    add!(None, [0.0, 0.0, 0.0]); // 0 pelvis
    add!(Some(0), [0.0, 0.12, 0.0]); // 1 spine1
    add!(Some(1), [0.0, 0.26, 0.0]); // 2 spine2
    add!(Some(2), [0.0, 0.40, 0.0]); // 3 spine3
    add!(Some(3), [0.0, 0.52, 0.0]); // 4 neck
    add!(Some(4), [0.0, 0.62, 0.0]); // 5 head
    add!(Some(0), [0.09, -0.06, 0.0]); // 6 l_hip
    add!(Some(6), [0.10, -0.48, 0.0]); // 7 l_knee
    add!(Some(7), [0.11, -0.88, 0.0]); // 8 l_ankle
    add!(Some(8), [0.11, -0.94, 0.11]); // 9 l_foot
    add!(Some(0), [-0.09, -0.06, 0.0]); // 10 r_hip
    add!(Some(10), [-0.10, -0.48, 0.0]); // 11 r_knee
    add!(Some(11), [-0.11, -0.88, 0.0]); // 12 r_ankle
    add!(Some(12), [-0.11, -0.94, 0.11]); // 13 r_foot
    add!(Some(3), [0.05, 0.46, 0.0]); // 14 l_clavicle
    add!(Some(14), [0.18, 0.45, 0.0]); // 15 l_shoulder
    add!(Some(15), [0.46, 0.44, 0.0]); // 16 l_elbow
    add!(Some(16), [0.72, 0.44, 0.0]); // 17 l_wrist
    add!(Some(3), [-0.05, 0.46, 0.0]); // 18 r_clavicle
    add!(Some(18), [-0.18, 0.45, 0.0]); // 19 r_shoulder
    add!(Some(19), [-0.46, 0.44, 0.0]); // 20 r_elbow
    add!(Some(20), [-0.72, 0.44, 0.0]); // 21 r_wrist

    for side in 0..2 {
        let (wrist, sign) = if side == 0 { (17usize, 1.0) } else { (21usize, -1.0) };
        let wrist_pos = joints[wrist];
        for finger in 0..5 {
            let spread = (finger as f64 - 2.0) * 0.016;
            let prox = wrist_pos + Vector3::new(sign * 0.045, 0.0, spread);
            let mid = prox + Vector3::new(sign * 0.030, 0.0, spread * 0.25);
            let dist = mid + Vector3::new(sign * 0.022, 0.0, spread * 0.15);
            let prox_id = parents.len();
            add!(Some(wrist), [prox.x, prox.y, prox.z]);
            add!(Some(prox_id), [mid.x, mid.y, mid.z]);
            add!(Some(prox_id + 1), [dist.x, dist.y, dist.z]);
        }
    }
    debug_assert_eq!(parents.len(), NUM_JOINTS);
    SkeletonDef { parents, joints }
}

/// Dataset-shared keypoints: pelvis, neck, head, and the major limb joints.
const BASIC_KEYPOINTS: [usize; 15] = [0, 4, 5, 6, 7, 8, 10, 11, 12, 15, 16, 17, 19, 20, 21];
/// The remaining body joints (spine chain, feet, clavicles).
const EXTENDED_KEYPOINTS: [usize; 7] = [1, 2, 3, 9, 13, 14, 18];

const HEAD_RING_SIZE: usize = 12;
const HEAD_TOP_SIZE: usize = 8;

/// Capsule radius for the bone ending at joint `child`.
fn bone_radius(child: usize) -> f64 {
    if child >= NUM_BODY_JOINTS {
        0.009 // fingers
    } else if child == 5 {
        0.075 // head
    } else if matches!(child, 1 | 2 | 3) {
        0.11 // torso
    } else {
        0.045
    }
}

fn any_perpendicular(axis: &Vector3<f64>) -> Vector3<f64> {
    let trial = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    axis.cross(&trial).normalize()
}

/// Gaussian matrix with orthonormalized columns (modified Gram-Schmidt).
/// Returns a `k x rows x 3` tensor whose components, flattened to length
/// `3 * rows`, are mutually orthonormal.
fn orthonormal_basis(rng: &mut ChaCha8Rng, k: usize, rows: usize) -> Array3<f64> {
    let dim = rows * 3;
    assert!(dim >= k, "basis rank {k} exceeds ambient dimension {dim}");
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for i in 0..k {
        for j in 0..i {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            for d in 0..dim {
                cols[i][d] -= dot * cols[j][d];
            }
        }
        let norm: f64 = cols[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[i].iter_mut() {
            *v /= norm;
        }
    }
    let mut basis = Array3::<f64>::zeros((k, rows, 3));
    for (ki, col) in cols.iter().enumerate() {
        for r in 0..rows {
            for c in 0..3 {
                basis[[ki, r, c]] = col[r * 3 + c];
            }
        }
    }
    basis
}

/// Generate a deterministic, seed-reproducible body rig, face asset, and
/// merge spec. `n_body_vertices` must be at least `4 * J` and
/// `n_face_vertices` at least 12.
pub fn generate_synthetic_rig(
    seed: u64,
    n_body_vertices: usize,
    n_face_vertices: usize,
) -> Result<(BodyRig, FaceAsset, MergeSpec)> {
    if n_body_vertices < 4 * NUM_JOINTS {
        return Err(Error::InvalidArgument {
            what: format!(
                "n_body_vertices = {n_body_vertices}, need at least {}",
                4 * NUM_JOINTS
            ),
        });
    }
    if n_face_vertices < 12 {
        return Err(Error::InvalidArgument {
            what: format!("n_face_vertices = {n_face_vertices}, need at least 12"),
        });
    }

    let skel = skeleton();
    let rig = generate_body(seed, n_body_vertices, &skel);
    let face = generate_face(seed, n_face_vertices);
    let spec = make_merge_spec(&rig, &face, n_body_vertices);
    debug_assert!(rig.validate().is_ok());
    debug_assert!(face.validate().is_ok());
    Ok((rig, face, spec))
}

fn generate_body(seed: u64, n: usize, skel: &SkeletonDef) -> BodyRig {
    let mut rng = seeded_stream(seed, 1);
    let n_capsule = n - HEAD_RING_SIZE - HEAD_TOP_SIZE;
    let bones: Vec<(usize, usize)> = (0..NUM_JOINTS)
        .filter_map(|j| skel.parents[j].map(|p| (p, j)))
        .collect();

    let mut vertices = Array2::<f64>::zeros((n, 3));
    for i in 0..n_capsule {
        let (p, c) = bones[i % bones.len()];
        let a = skel.joints[p];
        let b = skel.joints[c];
        let axis_raw = b - a;
        let axis = if axis_raw.norm() > 1e-12 {
            axis_raw.normalize()
        } else {
            Vector3::y()
        };
        let u = any_perpendicular(&axis);
        let v = axis.cross(&u);
        let t: f64 = rng.gen();
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = bone_radius(c) * rng.gen_range(0.85..1.15);
        let pos = a + axis_raw * t + (u * phi.cos() + v * phi.sin()) * r;
        vertices[[i, 0]] = pos.x;
        vertices[[i, 1]] = pos.y;
        vertices[[i, 2]] = pos.z;
    }

    // Head attachment ring (ordered by angle) and the face-region cap above
    // it; both ride the head bone.
    let neck = skel.joints[4];
    let head = skel.joints[5];
    let head_axis = (head - neck).normalize();
    let u = any_perpendicular(&head_axis);
    let v = head_axis.cross(&u);
    let ring_center = neck + (head - neck) * 0.8;
    let ring_radius = 0.06;
    for k in 0..HEAD_RING_SIZE {
        let phi = k as f64 / HEAD_RING_SIZE as f64 * std::f64::consts::TAU;
        let pos = ring_center + (u * phi.cos() + v * phi.sin()) * ring_radius;
        let i = n_capsule + k;
        vertices[[i, 0]] = pos.x;
        vertices[[i, 1]] = pos.y;
        vertices[[i, 2]] = pos.z;
    }
    for k in 0..HEAD_TOP_SIZE {
        let phi = k as f64 / HEAD_TOP_SIZE as f64 * std::f64::consts::TAU + 0.3;
        let pos = ring_center
            + head_axis * (0.02 + 0.004 * k as f64)
            + (u * phi.cos() + v * phi.sin()) * (ring_radius * 0.6);
        let i = n_capsule + HEAD_RING_SIZE + k;
        vertices[[i, 0]] = pos.x;
        vertices[[i, 1]] = pos.y;
        vertices[[i, 2]] = pos.z;
    }

    // Inverse-square-distance weights over the 4 nearest joints.
    let mut weights = Array2::<f64>::zeros((n, NUM_JOINTS));
    for i in 0..n {
        let p = Vector3::new(vertices[[i, 0]], vertices[[i, 1]], vertices[[i, 2]]);
        let mut dists: Vec<(f64, usize)> = (0..NUM_JOINTS)
            .map(|j| ((p - skel.joints[j]).norm_squared(), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut sum = 0.0;
        for &(d2, j) in dists.iter().take(4) {
            let w = 1.0 / (d2 + 1e-4);
            weights[[i, j]] = w;
            sum += w;
        }
        for j in 0..NUM_JOINTS {
            weights[[i, j]] /= sum;
        }
    }

    let mut basis_rng = seeded_stream(seed, 2);
    let shape_basis = orthonormal_basis(&mut basis_rng, NUM_SHAPE_PARAMS, n);

    let mut rest_joint_positions = Array2::<f64>::zeros((NUM_JOINTS, 3));
    for (j, pos) in skel.joints.iter().enumerate() {
        rest_joint_positions[[j, 0]] = pos.x;
        rest_joint_positions[[j, 1]] = pos.y;
        rest_joint_positions[[j, 2]] = pos.z;
    }

    BodyRig {
        mean_vertices: vertices,
        shape_basis,
        skinning_weights: weights,
        parent_index: skel.parents.clone(),
        rest_joint_positions,
        basic_keypoint_ids: BASIC_KEYPOINTS.to_vec(),
        extended_keypoint_ids: EXTENDED_KEYPOINTS.to_vec(),
    }
}

/// Face mesh: a dome built from an apex plus concentric rings, triangulated
/// ring-to-ring with the same monotone zipper used for boundary stitching.
/// The final ring is the (open) boundary loop.
fn generate_face(seed: u64, n: usize) -> FaceAsset {
    let apex_height = 0.055;
    let rim_radius = 0.05;

    // Ring sizes: sectors of 8, remainder absorbed by the boundary ring.
    let sectors = 8usize;
    let n_ring_votes = n - 1;
    let full_rings = n_ring_votes / sectors;
    let remainder = n_ring_votes - full_rings * sectors;
    let mut ring_sizes: Vec<usize> = vec![sectors; full_rings];
    if remainder > 0 {
        if let Some(last) = ring_sizes.last_mut() {
            *last += remainder;
        } else {
            ring_sizes.push(remainder);
        }
    }
    let n_rings = ring_sizes.len();

    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    positions.push(Vector3::new(0.0, 0.0, apex_height));
    let mut ring_starts = Vec::with_capacity(n_rings);
    for (ri, &size) in ring_sizes.iter().enumerate() {
        ring_starts.push(positions.len());
        let frac = (ri + 1) as f64 / n_rings as f64 * std::f64::consts::FRAC_PI_2;
        let radius = rim_radius * frac.sin();
        let z = apex_height * frac.cos();
        for k in 0..size {
            let phi = k as f64 / size as f64 * std::f64::consts::TAU;
            positions.push(Vector3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }
    debug_assert_eq!(positions.len(), n);

    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Apex fan to the first ring.
    let first = ring_starts[0];
    let first_size = ring_sizes[0];
    for k in 0..first_size {
        triangles.push([
            0,
            (first + k) as u32,
            (first + (k + 1) % first_size) as u32,
        ]);
    }
    // Ring-to-ring zipper.
    for ri in 0..n_rings - 1 {
        let (sa, na) = (ring_starts[ri], ring_sizes[ri]);
        let (sb, nb) = (ring_starts[ri + 1], ring_sizes[ri + 1]);
        let pa: Vec<f64> = (0..na).map(|k| k as f64 / na as f64).collect();
        let pb: Vec<f64> = (0..nb).map(|k| k as f64 / nb as f64).collect();
        for tri in crate::face::zipper_triangles(&pa, &pb) {
            triangles.push(tri.map(|v| match v {
                crate::face::LoopVert::A(i) => (sa + i) as u32,
                crate::face::LoopVert::B(j) => (sb + j) as u32,
            }));
        }
    }

    let boundary_start = ring_starts[n_rings - 1];
    let boundary_size = ring_sizes[n_rings - 1];
    let boundary_loop: Vec<usize> = (0..boundary_size).map(|k| boundary_start + k).collect();

    let mut mean_face = Array2::<f64>::zeros((n, 3));
    for (i, p) in positions.iter().enumerate() {
        mean_face[[i, 0]] = p.x;
        mean_face[[i, 1]] = p.y;
        mean_face[[i, 2]] = p.z;
    }

    let mut rng = seeded_stream(seed, 3);
    let shape_basis = orthonormal_basis(&mut rng, NUM_FACE_SHAPE_PARAMS.min(3 * n), n);
    let shape_basis = pad_basis(shape_basis, NUM_FACE_SHAPE_PARAMS, n);
    let expression_basis = orthonormal_basis(&mut rng, NUM_FACE_EXPRESSION_PARAMS.min(3 * n), n);
    let expression_basis = pad_basis(expression_basis, NUM_FACE_EXPRESSION_PARAMS, n);
    let reflectance_basis = orthonormal_basis(&mut rng, NUM_FACE_REFLECTANCE_PARAMS.min(3 * n), n);
    let reflectance_basis = pad_basis(reflectance_basis, NUM_FACE_REFLECTANCE_PARAMS, n);

    let mut mean_reflectance = Array2::<f64>::zeros((n, 3));
    let base = [0.72, 0.55, 0.46]; // skin-ish
    for i in 0..n {
        for c in 0..3 {
            let v: f64 = base[c] + rng.gen_range(-0.04..0.04);
            mean_reflectance[[i, c]] = v.clamp(0.0, 1.0);
        }
    }

    // Landmarks spread across the dome, apex included.
    let n_landmarks = 8.min(n);
    let landmark_ids: Vec<usize> = (0..n_landmarks).map(|k| k * n / n_landmarks).collect();

    FaceAsset {
        mean_face,
        shape_basis,
        expression_basis,
        mean_reflectance,
        reflectance_basis,
        triangles,
        boundary_loop,
        landmark_ids,
    }
}

/// For very small meshes `3 * N_F` can be below the nominal basis rank; the
/// remaining components are zero-padded so file dimensions stay fixed.
fn pad_basis(basis: Array3<f64>, k: usize, rows: usize) -> Array3<f64> {
    if basis.shape()[0] == k {
        return basis;
    }
    let mut padded = Array3::<f64>::zeros((k, rows, 3));
    padded
        .slice_mut(ndarray::s![..basis.shape()[0], .., ..])
        .assign(&basis);
    padded
}

fn make_merge_spec(rig: &BodyRig, _face: &FaceAsset, n_body: usize) -> MergeSpec {
    let n_capsule = n_body - HEAD_RING_SIZE - HEAD_TOP_SIZE;
    let body_boundary_loop: Vec<usize> = (0..HEAD_RING_SIZE).map(|k| n_capsule + k).collect();
    let face_region: Vec<usize> =
        (0..HEAD_TOP_SIZE).map(|k| n_capsule + HEAD_RING_SIZE + k).collect();

    // Ring center/axis in rest pose; the face asset's +z (apex direction)
    // maps onto the head axis.
    let neck = rig.rest_joint(4);
    let head = rig.rest_joint(5);
    let head_axis = (head - neck).normalize();
    let ring_center = neck + (head - neck) * 0.8;
    let ring_radius = 0.06;
    let face_rim = 0.05;

    let z = Vector3::z();
    let rotation = rotation_between(&z, &head_axis);
    // The face rim floats slightly above the body ring so the stitch band
    // is a clean annulus rather than two coincident circles.
    MergeSpec {
        body_boundary_loop,
        face_region,
        rotation,
        translation: ring_center + head_axis * 0.012,
        scale: ring_radius / face_rim,
        neck_joint_id: 4,
    }
}

/// Minimal rotation carrying unit vector `a` onto unit vector `b`.
fn rotation_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let dot = a.dot(b).clamp(-1.0, 1.0);
    if dot > 1.0 - 1e-12 {
        return Matrix3::identity();
    }
    if dot < -1.0 + 1e-12 {
        let axis = any_perpendicular(a);
        return crate::math::axis_angle_to_matrix(&(axis * std::f64::consts::PI));
    }
    let axis = a.cross(b).normalize();
    crate::math::axis_angle_to_matrix(&(axis * dot.acos()))
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

fn ids_to_u32(ids: &[usize]) -> ArrayD<u32> {
    Array1::from_vec(ids.iter().map(|&v| v as u32).collect()).into_dyn()
}

fn ids_from_u32(a: &ArrayD<u32>) -> Vec<usize> {
    a.iter().map(|&v| v as usize).collect()
}

fn to_fixed2(a: &ArrayD<f64>, name: &str) -> Result<Array2<f64>> {
    a.clone()
        .into_dimensionality::<Ix2>()
        .map_err(|e| Error::SchemaMismatch {
            detail: format!("array `{name}`: {e}"),
        })
}

fn to_fixed3(a: &ArrayD<f64>, name: &str) -> Result<Array3<f64>> {
    a.clone()
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::SchemaMismatch {
            detail: format!("array `{name}`: {e}"),
        })
}

#[allow(dead_code)]
fn to_fixed1(a: &ArrayD<f64>, name: &str) -> Result<Array1<f64>> {
    a.clone()
        .into_dimensionality::<Ix1>()
        .map_err(|e| Error::SchemaMismatch {
            detail: format!("array `{name}`: {e}"),
        })
}

fn check_dims(field: &str, actual: &[usize], expected: &[usize]) -> Result<()> {
    if actual != expected {
        return Err(Error::DimensionMismatch {
            what: field.to_string(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        });
    }
    Ok(())
}

fn check_finite<'a>(field: &str, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::InvariantViolation {
                field: field.to_string(),
                detail: format!("element {i} is {v}"),
            });
        }
    }
    Ok(())
}

fn validate_tree(parents: &[Option<usize>]) -> Result<()> {
    let j = parents.len();
    let roots = parents.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(Error::InvalidHierarchy {
            detail: format!("expected exactly one root joint, found {roots}"),
        });
    }
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            if *p >= j {
                return Err(Error::InvalidHierarchy {
                    detail: format!("joint {i} has out-of-range parent {p}"),
                });
            }
            if *p == i {
                return Err(Error::InvalidHierarchy {
                    detail: format!("joint {i} is its own parent"),
                });
            }
        }
    }
    // Every joint must reach the root in at most J steps (no cycles).
    for start in 0..j {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parents[cur] {
            cur = p;
            steps += 1;
            if steps > j {
                return Err(Error::InvalidHierarchy {
                    detail: format!("cycle detected in ancestry of joint {start}"),
                });
            }
        }
    }
    Ok(())
}
