//! Learned inverse kinematics: 6D rotation parameterization, a dense
//! network with hand-written backpropagation (through the layers, the 6D
//! conversion, and forward kinematics), the training loss, synthetic
//! dataset generation, and the mini-batch trainer.
//!
//! Network output layout per sample: `6 J` rotation values (two 3-vectors
//! per joint), then the shape coefficients, then one scale factor `α`.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::assets::{seeded_stream, BodyRig, NUM_BODY_JOINTS};
use crate::body::{fk_from_rest, Pose, PosedBody};
use crate::error::{Error, Result};
use crate::kba::KbaFile;

const ASSET_KIND_IK_PARAMS: u32 = 4;

// ---------------------------------------------------------------------------
// 6D rotations
// ---------------------------------------------------------------------------

/// Two free 3-vectors; the rotation is recovered by Gram-Schmidt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a1: Vector3<f64>,
    pub a2: Vector3<f64>,
}

impl Rot6D {
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            a1: Vector3::new(v[0], v[1], v[2]),
            a2: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Intermediates of the 6D → matrix conversion, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Rot6dTape {
    a2: Vector3<f64>,
    n1: f64,
    b1: Vector3<f64>,
    s: f64,
    n2: f64,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
}

impl Rot6dTape {
    pub(crate) fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b1, self.b2, self.b3])
    }
}

const ROT6D_EPS: f64 = 1e-8;

pub(crate) fn rot6d_forward(r: &Rot6D) -> Result<Rot6dTape> {
    let n1 = r.a1.norm();
    if n1 < ROT6D_EPS {
        return Err(Error::Degenerate6d {
            detail: format!("first vector norm {n1:.3e} below {ROT6D_EPS:.0e}"),
        });
    }
    let b1 = r.a1 / n1;
    let s = b1.dot(&r.a2);
    let u = r.a2 - b1 * s;
    let n2 = u.norm();
    if n2 < ROT6D_EPS {
        return Err(Error::Degenerate6d {
            detail: format!(
                "second vector parallel to first (residual norm {n2:.3e})"
            ),
        });
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(Rot6dTape { a2: r.a2, n1, b1, s, n2, b2, b3 })
}

/// Gram-Schmidt 6D → rotation: `b1 = a1/|a1|`, `b2` the normalized
/// `a1`-orthogonal part of `a2`, `b3 = b1 × b2`, columns `[b1 b2 b3]`.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Matrix3<f64>> {
    Ok(rot6d_forward(r)?.rotation())
}

/// First two columns of a rotation (the canonical 6D encoding of `R`).
pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> Rot6D {
    Rot6D {
        a1: Vector3::new(r[(0, 0)], r[(1, 0)], r[(2, 0)]),
        a2: Vector3::new(r[(0, 1)], r[(1, 1)], r[(2, 1)]),
    }
}

/// Analytic adjoint of [`rot6d_forward`]: gradient with respect to the raw
/// six inputs given the gradient with respect to the rotation columns.
pub(crate) fn rot6d_backward(t: &Rot6dTape, g_r: &Matrix3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut g_b1 = Vector3::new(g_r[(0, 0)], g_r[(1, 0)], g_r[(2, 0)]);
    let mut g_b2 = Vector3::new(g_r[(0, 1)], g_r[(1, 1)], g_r[(2, 1)]);
    let g_b3 = Vector3::new(g_r[(0, 2)], g_r[(1, 2)], g_r[(2, 2)]);

    // b3 = b1 × b2.
    g_b1 += t.b2.cross(&g_b3);
    g_b2 += g_b3.cross(&t.b1);

    // b2 = u / |u|  →  g_u = (I − b2 b2ᵀ) g_b2 / |u|.
    let g_u = (g_b2 - t.b2 * t.b2.dot(&g_b2)) / t.n2;

    // u = a2 − (b1·a2) b1.
    let gu_dot_b1 = g_u.dot(&t.b1);
    let g_a2 = g_u - t.b1 * gu_dot_b1;
    g_b1 += -t.a2 * gu_dot_b1 - g_u * t.s;

    // b1 = a1 / |a1|.
    let g_a1 = (g_b1 - t.b1 * t.b1.dot(&g_b1)) / t.n1;
    (g_a1, g_a2)
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Sigmoid-weighted linear unit, `z · σ(z)`.
    Silu,
    Linear,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-z).exp());
                sig * (1.0 + z * (1.0 - sig))
            }
            Activation::Linear => 1.0,
        }
    }

    fn tag(&self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Linear => 1,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Linear),
            other => Err(Error::SchemaMismatch {
                detail: format!("unknown activation tag {other}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Dense IK network. The final layer is linear with width
/// `6 J + shape_dim + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IKNetParams {
    pub layers: Vec<DenseLayer>,
    pub joint_count: usize,
    pub shape_dim: usize,
}

impl IKNetParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        6 * self.joint_count + self.shape_dim + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvariantViolation {
                field: "layers".into(),
                detail: "network has no layers".into(),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.nrows() {
                return Err(Error::InvariantViolation {
                    field: format!("layer {i} bias"),
                    detail: format!(
                        "bias length {} != weight rows {}",
                        layer.bias.len(),
                        layer.weight.nrows()
                    ),
                });
            }
            if i > 0 && layer.weight.ncols() != self.layers[i - 1].weight.nrows() {
                return Err(Error::InvariantViolation {
                    field: format!("layer {i} weight"),
                    detail: format!(
                        "input width {} != previous output {}",
                        layer.weight.ncols(),
                        self.layers[i - 1].weight.nrows()
                    ),
                });
            }
        }
        let last = self.layers.last().unwrap();
        if last.weight.nrows() != self.output_dim() {
            return Err(Error::InvariantViolation {
                field: "final layer".into(),
                detail: format!(
                    "width {} != 6*{} + {} + 1",
                    last.weight.nrows(),
                    self.joint_count,
                    self.shape_dim
                ),
            });
        }
        Ok(())
    }

    /// Seeded initialization: He-scaled hidden weights, a small-variance
    /// final layer whose bias encodes identity rotations and `α = 1` so the
    /// untrained network starts at the reference pose.
    pub fn init(
        joint_count: usize,
        shape_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeded_stream(seed, 90);
        let input_dim = 3 * joint_count;
        let output_dim = 6 * joint_count + shape_dim + 1;
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for li in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[li], dims[li + 1]);
            let last = li == dims.len() - 2;
            let scale = if last {
                0.01 / (fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let mut weight = Array2::<f64>::zeros((fan_out, fan_in));
            weight.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * scale);
            let mut bias = Array1::<f64>::zeros(fan_out);
            if last {
                for j in 0..joint_count {
                    bias[6 * j] = 1.0; // a1 = e_x
                    bias[6 * j + 4] = 1.0; // a2 = e_y
                }
                bias[6 * joint_count + shape_dim] = 1.0; // α
            }
            layers.push(DenseLayer {
                weight,
                bias,
                activation: if last { Activation::Linear } else { Activation::Silu },
            });
        }
        Self { layers, joint_count, shape_dim }
    }

    pub fn to_kba(&self) -> KbaFile {
        let mut file = KbaFile::new();
        file.push_u32(
            "asset_kind",
            Array1::from_vec(vec![ASSET_KIND_IK_PARAMS]).into_dyn(),
        );
        file.push_u32(
            "joint_count",
            Array1::from_vec(vec![self.joint_count as u32]).into_dyn(),
        );
        file.push_u32(
            "shape_dim",
            Array1::from_vec(vec![self.shape_dim as u32]).into_dyn(),
        );
        file.push_u32(
            "layer_count",
            Array1::from_vec(vec![self.layers.len() as u32]).into_dyn(),
        );
        for (i, layer) in self.layers.iter().enumerate() {
            file.push_f64(&format!("weight_{i}"), layer.weight.clone().into_dyn());
            file.push_f64(&format!("bias_{i}"), layer.bias.clone().into_dyn());
            file.push_u32(
                &format!("activation_{i}"),
                Array1::from_vec(vec![layer.activation.tag()]).into_dyn(),
            );
        }
        file
    }

    pub fn from_kba(file: &KbaFile) -> Result<Self> {
        let kind = file.require_u32_scalar("asset_kind")?;
        if kind != ASSET_KIND_IK_PARAMS {
            return Err(Error::SchemaMismatch {
                detail: format!("asset_kind {kind} is not IK params ({ASSET_KIND_IK_PARAMS})"),
            });
        }
        let joint_count = file.require_u32_scalar("joint_count")? as usize;
        let shape_dim = file.require_u32_scalar("shape_dim")? as usize;
        let layer_count = file.require_u32_scalar("layer_count")? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for i in 0..layer_count {
            let weight = file
                .require_f64(&format!("weight_{i}"), 2)?
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::SchemaMismatch {
                    detail: format!("weight_{i}: {e}"),
                })?;
            let bias = file
                .require_f64(&format!("bias_{i}"), 1)?
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|e| Error::SchemaMismatch {
                    detail: format!("bias_{i}: {e}"),
                })?;
            let activation =
                Activation::from_tag(file.require_u32_scalar(&format!("activation_{i}"))?)?;
            layers.push(DenseLayer { weight, bias, activation });
        }
        let params = Self { layers, joint_count, shape_dim };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_kba().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_kba(&KbaFile::load(path)?)
    }
}

/// Pre-activation and post-activation values per layer for one batch.
struct ForwardTrace {
    /// `trace[0]` is the input; `trace[l+1]` the activations of layer `l`.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Array2<f64>>,
}

fn forward_batch(params: &IKNetParams, input: &Array2<f64>) -> Result<ForwardTrace> {
    if input.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "network input".into(),
            expected: params.input_dim().to_string(),
            actual: input.ncols().to_string(),
        });
    }
    let mut activations = vec![input.clone()];
    let mut pre = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let z = activations.last().unwrap().dot(&layer.weight.t()) + &layer.bias;
        let a = z.mapv(|v| layer.activation.apply(v));
        pre.push(z);
        activations.push(a);
    }
    Ok(ForwardTrace { activations, pre })
}

/// Gradients with respect to every layer's parameters.
struct NetGradients {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Backpropagate `g_out = ∂L/∂output` (batch) through the network.
fn backward_batch(params: &IKNetParams, trace: &ForwardTrace, g_out: &Array2<f64>) -> NetGradients {
    let n_layers = params.layers.len();
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    let mut g = g_out.clone();
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        // dL/dz = dL/da ⊙ act'(z).
        let gz = match layer.activation {
            Activation::Linear => g,
            Activation::Silu => {
                let mut gz = g;
                gz.zip_mut_with(&trace.pre[l], |gv, &z| *gv *= Activation::Silu.derivative(z));
                gz
            }
        };
        weights.push(gz.t().dot(&trace.activations[l]));
        biases.push(gz.sum_axis(ndarray::Axis(0)));
        g = gz.dot(&layer.weight);
    }
    weights.reverse();
    biases.reverse();
    NetGradients { weights, biases }
}

/// Decoded network output for one sample.
#[derive(Debug, Clone)]
pub struct IkPrediction {
    pub rotations: Vec<Matrix3<f64>>,
    pub beta: Vec<f64>,
    pub alpha: f64,
}

fn decode_output(params: &IKNetParams, row: &[f64]) -> Result<(Vec<Rot6dTape>, Vec<f64>, f64)> {
    let j = params.joint_count;
    let mut tapes = Vec::with_capacity(j);
    for ji in 0..j {
        tapes.push(rot6d_forward(&Rot6D::from_slice(&row[6 * ji..6 * ji + 6]))?);
    }
    let beta = row[6 * j..6 * j + params.shape_dim].to_vec();
    let alpha = row[6 * j + params.shape_dim];
    Ok((tapes, beta, alpha))
}

/// Run the network on one set of root-relative keypoints (flattened
/// `x y z` per joint) and decode rotations, shape, and scale.
pub fn iknet_forward(params: &IKNetParams, keypoints: &[Vector3<f64>]) -> Result<IkPrediction> {
    params.validate()?;
    if keypoints.len() != params.joint_count {
        return Err(Error::DimensionMismatch {
            what: "keypoints".into(),
            expected: params.joint_count.to_string(),
            actual: keypoints.len().to_string(),
        });
    }
    let mut input = Array2::<f64>::zeros((1, 3 * keypoints.len()));
    for (i, k) in keypoints.iter().enumerate() {
        input[[0, 3 * i]] = k.x;
        input[[0, 3 * i + 1]] = k.y;
        input[[0, 3 * i + 2]] = k.z;
    }
    let trace = forward_batch(params, &input)?;
    let out = trace.activations.last().unwrap();
    let row: Vec<f64> = out.row(0).to_vec();
    let (tapes, beta, alpha) = decode_output(params, &row)?;
    Ok(IkPrediction {
        rotations: tapes.iter().map(|t| t.rotation()).collect(),
        beta,
        alpha,
    })
}

// ---------------------------------------------------------------------------
// Training configuration, samples, dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Gradient descent with momentum (deterministic default).
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IKTrainConfig {
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub lambda_theta: f64,
    pub lambda_chi: f64,
    pub lambda_chibar: f64,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay in `(0, 1]`; 1 = constant.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Std-dev (meters) of Gaussian noise added to input keypoints; 0 = off.
    pub noise_std: f64,
    /// Uniform global-scale augmentation range; `None` = off (α target 1).
    pub scale_augment: Option<(f64, f64)>,
    pub optimizer: Optimizer,
    /// Per-axis std-dev (radians) of body-joint axis-angle sampling;
    /// samples are clamped to ±π/2 per axis.
    pub sample_sigma_body: f64,
    /// Std-dev (radians) of finger hinge-angle sampling (same ±π/2 clamp).
    pub sample_sigma_finger: f64,
    /// Probability, per joint and per sample, that the joint is perturbed at
    /// all; joints that fail the draw stay at the reference rotation
    /// (identity). 1 perturbs every joint. Lower values produce sparse poses
    /// where most joints sit at rest, which are much easier inverse problems.
    pub sample_active_prob: f64,
}

impl Default for IKTrainConfig {
    fn default() -> Self {
        Self {
            lambda_alpha: 1.0,
            lambda_beta: 1.0,
            lambda_theta: 1.0,
            lambda_chi: 5.0,
            lambda_chibar: 1.0,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            hidden_layers: 6,
            hidden_width: 1024,
            noise_std: 0.0,
            scale_augment: None,
            optimizer: Optimizer::Sgd { momentum: 0.9 },
            sample_sigma_body: std::f64::consts::PI / 5.0,
            sample_sigma_finger: std::f64::consts::PI / 6.0,
            sample_active_prob: 1.0,
        }
    }
}

impl IKTrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_alpha", self.lambda_alpha),
            ("lambda_beta", self.lambda_beta),
            ("lambda_theta", self.lambda_theta),
            ("lambda_chi", self.lambda_chi),
            ("lambda_chibar", self.lambda_chibar),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument {
                    what: format!("{name} = {v} must be finite and nonnegative"),
                });
            }
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument {
                what: "learning rate, batch size, and epochs must be positive".into(),
            });
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument {
                what: format!("lr_decay = {} outside (0, 1]", self.lr_decay),
            });
        }
        if let Some((lo, hi)) = self.scale_augment {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::InvalidArgument {
                    what: format!("scale augmentation range ({lo}, {hi}) invalid"),
                });
            }
        }
        for (name, v) in [
            ("sample_sigma_body", self.sample_sigma_body),
            ("sample_sigma_finger", self.sample_sigma_finger),
        ] {
            if !(v > 0.0 && v <= std::f64::consts::PI) {
                return Err(Error::InvalidArgument {
                    what: format!("{name} = {v} outside (0, π]"),
                });
            }
        }
        if !(self.sample_active_prob > 0.0 && self.sample_active_prob <= 1.0) {
            return Err(Error::InvalidArgument {
                what: format!(
                    "sample_active_prob = {} outside (0, 1]",
                    self.sample_active_prob
                ),
            });
        }
        Ok(())
    }
}

/// One training sample: noisy/scaled input keypoints plus all targets.
#[derive(Debug, Clone, PartialEq)]
pub struct IKSample {
    /// Root-relative input keypoints (scale-augmented, noise added).
    pub chi_in: Vec<Vector3<f64>>,
    /// Target joint rotations.
    pub theta: Vec<Matrix3<f64>>,
    pub beta: Vec<f64>,
    /// Target scale (the augmentation scale; 1 when augmentation is off).
    pub alpha: f64,
    /// Root-relative posed keypoints, `FK(theta, beta)`, unscaled.
    pub chi: Vec<Vector3<f64>>,
    /// Root-relative reference-pose keypoints for `beta`, unscaled.
    pub chi_bar: Vec<Vector3<f64>>,
}

fn truncated_normal(rng: &mut impl Rng, std: f64, bound: f64) -> f64 {
    loop {
        let v: f64 = rng.sample::<f64, _>(StandardNormal) * std;
        if v.abs() <= bound {
            return v;
        }
    }
}

/// One target pose: bounded per-axis axis-angle for body joints, single-axis
/// hinge flexion for finger joints. Each joint is perturbed independently
/// with probability `cfg.sample_active_prob` and otherwise left at identity.
fn sample_pose(rig: &BodyRig, rng: &mut impl Rng, cfg: &IKTrainConfig) -> Pose {
    let j = rig.joint_count();
    let nb = NUM_BODY_JOINTS.min(j);
    let mut pose = Pose {
        body_rotations: vec![Matrix3::identity(); nb],
        hand_rotations: vec![Matrix3::identity(); j - nb],
        root_translation: Vector3::zeros(),
    };
    for ji in 0..j {
        if cfg.sample_active_prob < 1.0 && !rng.gen_bool(cfg.sample_active_prob) {
            continue;
        }
        let r = if ji < nb {
            let w = Vector3::new(
                truncated_normal(rng, cfg.sample_sigma_body, std::f64::consts::FRAC_PI_2),
                truncated_normal(rng, cfg.sample_sigma_body, std::f64::consts::FRAC_PI_2),
                truncated_normal(rng, cfg.sample_sigma_body, std::f64::consts::FRAC_PI_2),
            );
            crate::math::axis_angle_to_matrix(&w)
        } else {
            // Hinge flexion about the local z axis.
            let angle =
                truncated_normal(rng, cfg.sample_sigma_finger, std::f64::consts::FRAC_PI_2);
            crate::math::axis_angle_to_matrix(&Vector3::new(0.0, 0.0, angle))
        };
        *pose.rotation_mut(ji) = r;
    }
    pose
}

fn sample_beta(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| truncated_normal(rng, 0.5, 1.5)).collect()
}

fn root_relative(posed: &[Vector3<f64>], root: usize) -> Vec<Vector3<f64>> {
    let r = posed[root];
    posed.iter().map(|p| p - r).collect()
}

fn make_sample(rig: &BodyRig, basis: &JointBasis, seed: u64, index: u64, cfg: &IKTrainConfig) -> IKSample {
    let mut rng = seeded_stream(seed, index);
    let pose = sample_pose(rig, &mut rng, cfg);
    let beta = sample_beta(rig.shape_basis.shape()[0], &mut rng);
    let rest = basis.rest_joints(&beta);
    let posed = fk_from_rest(&rig.parent_index, &rest, &pose);
    let chi = root_relative(&posed.posed_joints, posed.root_joint);
    let chi_bar = root_relative(&rest, posed.root_joint);
    let alpha = match cfg.scale_augment {
        Some((lo, hi)) => rng.gen_range(lo..=hi),
        None => 1.0,
    };
    let chi_in = chi
        .iter()
        .map(|k| {
            let noise = if cfg.noise_std > 0.0 {
                Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ) * cfg.noise_std
            } else {
                Vector3::zeros()
            };
            k * alpha + noise
        })
        .collect();
    let theta = (0..rig.joint_count()).map(|j| *pose.rotation(j)).collect();
    IKSample { chi_in, theta, beta, alpha, chi, chi_bar }
}

/// Generate `n` samples. Each sample's randomness derives only from
/// `(seed, index)`, so the result is identical for any thread count; the
/// `KINEBODY_THREADS` environment variable caps the worker threads.
pub fn generate_ik_training_set(
    rig: &BodyRig,
    n: usize,
    seed: u64,
    cfg: &IKTrainConfig,
) -> Result<Vec<IKSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument {
            what: "dataset size must be positive".into(),
        });
    }
    cfg.validate()?;
    let basis = JointBasis::from_rig(rig)?;
    let threads = crate::max_threads().min(n);
    if threads <= 1 {
        return Ok((0..n)
            .map(|i| make_sample(rig, &basis, seed, i as u64, cfg))
            .collect());
    }
    let chunk = n.div_ceil(threads);
    let mut out: Vec<Vec<IKSample>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            let start = t * chunk;
            let end = ((t + 1) * chunk).min(n);
            if start >= end {
                break;
            }
            let basis = &basis;
            handles.push(scope.spawn(move || {
                (start..end)
                    .map(|i| make_sample(rig, basis, seed, i as u64, cfg))
                    .collect::<Vec<_>>()
            }));
        }
        for h in handles {
            out.push(h.join().expect("dataset worker panicked"));
        }
    });
    Ok(out.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Linearization of the rig's joint response to shape coefficients:
/// `rest_j(β) = rest0_j + Σ_k β_k jb[k][j]` (exactly the regressed joints,
/// precomputed once so the training loop avoids per-sample vertex passes).
#[derive(Debug, Clone)]
pub struct JointBasis {
    pub parents: Vec<Option<usize>>,
    pub rest0: Vec<Vector3<f64>>,
    /// `jb[k][j]`.
    pub jb: Vec<Vec<Vector3<f64>>>,
    pub mean_bone_length: f64,
}

impl JointBasis {
    pub fn from_rig(rig: &BodyRig) -> Result<Self> {
        let jn = rig.joint_count();
        let n = rig.vertex_count();
        let k = rig.shape_basis.shape()[0];
        let col_sums: Vec<f64> = (0..jn)
            .map(|j| rig.skinning_weights.column(j).sum())
            .collect();
        let mut jb = vec![vec![Vector3::<f64>::zeros(); jn]; k];
        for (ki, jb_k) in jb.iter_mut().enumerate() {
            let comp = rig.shape_basis.index_axis(ndarray::Axis(0), ki);
            for (j, out) in jb_k.iter_mut().enumerate() {
                if col_sums[j] <= 0.0 {
                    continue;
                }
                let mut acc = Vector3::zeros();
                for i in 0..n {
                    let w = rig.skinning_weights[[i, j]];
                    if w != 0.0 {
                        acc += Vector3::new(comp[[i, 0]], comp[[i, 1]], comp[[i, 2]]) * w;
                    }
                }
                *out = acc / col_sums[j];
            }
        }
        Ok(Self {
            parents: rig.parent_index.clone(),
            rest0: (0..jn).map(|j| rig.rest_joint(j)).collect(),
            jb,
            mean_bone_length: rig.mean_bone_length(),
        })
    }

    pub fn joint_count(&self) -> usize {
        self.rest0.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.jb.len()
    }

    pub fn rest_joints(&self, beta: &[f64]) -> Vec<Vector3<f64>> {
        let mut rest = self.rest0.clone();
        for (k, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (j, r) in rest.iter_mut().enumerate() {
                *r += self.jb[k][j] * b;
            }
        }
        rest
    }

}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IkLossBreakdown {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub chi: f64,
    pub chi_bar: f64,
    pub total: f64,
}

fn eval_from_rotations(
    basis: &JointBasis,
    rotations: &[Matrix3<f64>],
    beta: &[f64],
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, PosedBody, Vec<Vector3<f64>>) {
    let rest = basis.rest_joints(beta);
    let pose = Pose {
        body_rotations: rotations.to_vec(),
        hand_rotations: Vec::new(),
        root_translation: Vector3::zeros(),
    };
    let posed = fk_from_rest(&basis.parents, &rest, &pose);
    let chi_hat = root_relative(&posed.posed_joints, posed.root_joint);
    let chi_bar_hat = root_relative(&rest, posed.root_joint);
    (chi_hat, chi_bar_hat, posed, rest)
}

fn loss_terms(
    basis: &JointBasis,
    rotations: &[Matrix3<f64>],
    beta: &[f64],
    alpha: f64,
    sample: &IKSample,
    cfg: &IKTrainConfig,
) -> Result<(IkLossBreakdown, Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let jn = basis.joint_count();
    if rotations.len() != jn || sample.theta.len() != jn || sample.chi.len() != jn {
        return Err(Error::DimensionMismatch {
            what: "ik loss joints".into(),
            expected: jn.to_string(),
            actual: format!(
                "pred {}, theta {}, chi {}",
                rotations.len(),
                sample.theta.len(),
                sample.chi.len()
            ),
        });
    }
    if beta.len() != basis.shape_dim() || sample.beta.len() != basis.shape_dim() {
        return Err(Error::DimensionMismatch {
            what: "ik loss shape coefficients".into(),
            expected: basis.shape_dim().to_string(),
            actual: format!("pred {}, target {}", beta.len(), sample.beta.len()),
        });
    }
    let (chi_hat, chi_bar_hat, _, _) = eval_from_rotations(basis, rotations, beta);

    let l_alpha = (alpha - sample.alpha).powi(2);
    let l_beta: f64 = beta
        .iter()
        .zip(sample.beta.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let mut l_theta = 0.0;
    for (p, t) in rotations.iter().zip(sample.theta.iter()) {
        let d = p - t;
        l_theta += d.iter().map(|v| v * v).sum::<f64>();
    }
    let mut l_chi = 0.0;
    for (h, t) in chi_hat.iter().zip(sample.chi.iter()) {
        l_chi += (h * alpha - t * sample.alpha).norm_squared();
    }
    let mut l_chibar = 0.0;
    for (h, t) in chi_bar_hat.iter().zip(sample.chi_bar.iter()) {
        l_chibar += (h * alpha - t * sample.alpha).norm_squared();
    }
    let total = cfg.lambda_alpha * l_alpha
        + cfg.lambda_beta * l_beta
        + cfg.lambda_theta * l_theta
        + cfg.lambda_chi * l_chi
        + cfg.lambda_chibar * l_chibar;
    Ok((
        IkLossBreakdown {
            alpha: l_alpha,
            beta: l_beta,
            theta: l_theta,
            chi: l_chi,
            chi_bar: l_chibar,
            total,
        },
        chi_hat,
        chi_bar_hat,
    ))
}

/// Eq.-style training loss for one prediction: L2 terms on scale, shape,
/// rotation matrices, posed keypoints (after applying the predicted scale),
/// and reference-pose keypoints.
pub fn ik_loss(
    pred: &IkPrediction,
    sample: &IKSample,
    rig: &BodyRig,
    cfg: &IKTrainConfig,
) -> Result<IkLossBreakdown> {
    cfg.validate()?;
    let basis = JointBasis::from_rig(rig)?;
    ik_loss_with_basis(pred, sample, &basis, cfg)
}

/// [`ik_loss`] against a precomputed [`JointBasis`].
pub fn ik_loss_with_basis(
    pred: &IkPrediction,
    sample: &IKSample,
    basis: &JointBasis,
    cfg: &IKTrainConfig,
) -> Result<IkLossBreakdown> {
    let (breakdown, _, _) = loss_terms(basis, &pred.rotations, &pred.beta, pred.alpha, sample, cfg)?;
    Ok(breakdown)
}

// ---------------------------------------------------------------------------
// FK backward
// ---------------------------------------------------------------------------

fn topo_order(parents: &[Option<usize>]) -> Vec<usize> {
    let j = parents.len();
    let mut order = Vec::with_capacity(j);
    let mut placed = vec![false; j];
    while order.len() < j {
        for i in 0..j {
            if !placed[i] && parents[i].map(|p| placed[p]).unwrap_or(true) {
                placed[i] = true;
                order.push(i);
            }
        }
    }
    order
}

/// Reverse-mode FK: given gradients of the posed joint positions,
/// accumulate gradients of the local rotations and the rest joints.
///
/// Forward recursion being differentiated (matching [`fk_from_rest`]):
/// `A_j.R = A_p.R R_j`, `A_j.t = A_p.R t_j + A_p.t`,
/// `t_j = rest_j − R_j rest_j`, `posed_j = A_j.R rest_j + A_j.t`.
fn fk_backward(
    parents: &[Option<usize>],
    rest: &[Vector3<f64>],
    rotations: &[Matrix3<f64>],
    posed: &PosedBody,
    g_posed: &[Vector3<f64>],
    g_rot: &mut [Matrix3<f64>],
    g_rest: &mut [Vector3<f64>],
) {
    let jn = parents.len();
    let mut g_a_rot = vec![Matrix3::<f64>::zeros(); jn];
    let mut g_a_t = vec![Vector3::<f64>::zeros(); jn];
    for j in 0..jn {
        let a = &posed.joint_transforms[j];
        g_a_rot[j] += g_posed[j] * rest[j].transpose();
        g_a_t[j] += g_posed[j];
        g_rest[j] += a.rotation.transpose() * g_posed[j];
    }
    let order = topo_order(parents);
    for &j in order.iter().rev() {
        let r_j = rotations[j];
        let t_j = rest[j] - r_j * rest[j];
        let g_t_j = match parents[j] {
            Some(p) => {
                let a_p_rot = posed.joint_transforms[p].rotation;
                let g = g_a_rot[j];
                g_a_rot[p] += g * r_j.transpose();
                g_rot[j] += a_p_rot.transpose() * g;
                let g_at_j = g_a_t[j];
                g_a_rot[p] += g_at_j * t_j.transpose();
                let g_t = a_p_rot.transpose() * g_at_j;
                g_a_t[p] += g_at_j;
                g_t
            }
            None => {
                g_rot[j] += g_a_rot[j];
                g_a_t[j]
            }
        };
        // t_j = rest_j − R_j rest_j.
        g_rot[j] -= g_t_j * rest[j].transpose();
        g_rest[j] += g_t_j - r_j.transpose() * g_t_j;
    }
}

/// Loss + gradient with respect to the raw network output for one sample.
fn sample_loss_and_grad(
    basis: &JointBasis,
    sample: &IKSample,
    cfg: &IKTrainConfig,
    row: &[f64],
    grad_row: &mut [f64],
) -> Result<IkLossBreakdown> {
    let jn = basis.joint_count();
    let kdim = basis.shape_dim();
    let mut tapes = Vec::with_capacity(jn);
    for ji in 0..jn {
        tapes.push(rot6d_forward(&Rot6D::from_slice(&row[6 * ji..6 * ji + 6]))?);
    }
    let rotations: Vec<Matrix3<f64>> = tapes.iter().map(|t| t.rotation()).collect();
    let beta = &row[6 * jn..6 * jn + kdim];
    let alpha = row[6 * jn + kdim];

    let (breakdown, chi_hat, chi_bar_hat) =
        loss_terms(basis, &rotations, beta, alpha, sample, cfg)?;
    let rest = basis.rest_joints(beta);
    let pose = Pose {
        body_rotations: rotations.clone(),
        hand_rotations: Vec::new(),
        root_translation: Vector3::zeros(),
    };
    let posed = fk_from_rest(&basis.parents, &rest, &pose);
    let root = posed.root_joint;

    // Gradient seeds.
    let mut g_alpha = 2.0 * cfg.lambda_alpha * (alpha - sample.alpha);
    let mut g_beta = vec![0.0; kdim];
    for (k, g) in g_beta.iter_mut().enumerate() {
        *g = 2.0 * cfg.lambda_beta * (beta[k] - sample.beta[k]);
    }
    let mut g_rot = vec![Matrix3::<f64>::zeros(); jn];
    for j in 0..jn {
        g_rot[j] += 2.0 * cfg.lambda_theta * (rotations[j] - sample.theta[j]);
    }

    // χ term: residual_j = α χ̂_j − α_t χ_t_j.
    let mut g_posed = vec![Vector3::<f64>::zeros(); jn];
    for j in 0..jn {
        let residual = chi_hat[j] * alpha - sample.chi[j] * sample.alpha;
        g_alpha += 2.0 * cfg.lambda_chi * residual.dot(&chi_hat[j]);
        let g_chi_hat = residual * (2.0 * cfg.lambda_chi * alpha);
        g_posed[j] += g_chi_hat;
        g_posed[root] -= g_chi_hat;
    }

    // χ̄ term: residual_j = α χ̄̂_j − α_t χ̄_t_j (no FK involved).
    let mut g_rest = vec![Vector3::<f64>::zeros(); jn];
    for j in 0..jn {
        let residual = chi_bar_hat[j] * alpha - sample.chi_bar[j] * sample.alpha;
        g_alpha += 2.0 * cfg.lambda_chibar * residual.dot(&chi_bar_hat[j]);
        let g_bar = residual * (2.0 * cfg.lambda_chibar * alpha);
        g_rest[j] += g_bar;
        g_rest[root] -= g_bar;
    }

    fk_backward(&basis.parents, &rest, &rotations, &posed, &g_posed, &mut g_rot, &mut g_rest);

    for (k, g) in g_beta.iter_mut().enumerate() {
        for j in 0..jn {
            *g += basis.jb[k][j].dot(&g_rest[j]);
        }
    }

    for j in 0..jn {
        let (g_a1, g_a2) = rot6d_backward(&tapes[j], &g_rot[j]);
        for c in 0..3 {
            grad_row[6 * j + c] += g_a1[c];
            grad_row[6 * j + 3 + c] += g_a2[c];
        }
    }
    for k in 0..kdim {
        grad_row[6 * jn + k] += g_beta[k];
    }
    grad_row[6 * jn + kdim] += g_alpha;
    Ok(breakdown)
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct OptimizerState {
    velocity_w: Vec<Array2<f64>>,
    velocity_b: Vec<Array1<f64>>,
    second_w: Vec<Array2<f64>>,
    second_b: Vec<Array1<f64>>,
    step: u64,
}

impl OptimizerState {
    fn new(params: &IKNetParams) -> Self {
        Self {
            velocity_w: params.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            velocity_b: params.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            second_w: params.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            second_b: params.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            step: 0,
        }
    }

    fn update(
        &mut self,
        params: &mut IKNetParams,
        grads: &NetGradients,
        optimizer: &Optimizer,
        lr: f64,
    ) {
        self.step += 1;
        match *optimizer {
            Optimizer::Sgd { momentum } => {
                for l in 0..params.layers.len() {
                    self.velocity_w[l] = &self.velocity_w[l] * momentum - &grads.weights[l] * lr;
                    self.velocity_b[l] = &self.velocity_b[l] * momentum - &grads.biases[l] * lr;
                    params.layers[l].weight += &self.velocity_w[l];
                    params.layers[l].bias += &self.velocity_b[l];
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for l in 0..params.layers.len() {
                    self.velocity_w[l] =
                        &self.velocity_w[l] * beta1 + &(&grads.weights[l] * (1.0 - beta1));
                    self.second_w[l] = &self.second_w[l] * beta2
                        + &(grads.weights[l].mapv(|g| g * g) * (1.0 - beta2));
                    let update = ndarray::Zip::from(&self.velocity_w[l])
                        .and(&self.second_w[l])
                        .map_collect(|&m, &v| {
                            -lr * (m / bc1) / ((v / bc2).sqrt() + epsilon)
                        });
                    params.layers[l].weight += &update;

                    self.velocity_b[l] =
                        &self.velocity_b[l] * beta1 + &(&grads.biases[l] * (1.0 - beta1));
                    self.second_b[l] = &self.second_b[l] * beta2
                        + &(grads.biases[l].mapv(|g| g * g) * (1.0 - beta2));
                    let update_b = ndarray::Zip::from(&self.velocity_b[l])
                        .and(&self.second_b[l])
                        .map_collect(|&m, &v| {
                            -lr * (m / bc1) / ((v / bc2).sqrt() + epsilon)
                        });
                    params.layers[l].bias += &update_b;
                }
            }
        }
    }
}

fn batch_input(samples: &[&IKSample], jn: usize) -> Array2<f64> {
    let mut input = Array2::<f64>::zeros((samples.len(), 3 * jn));
    for (si, s) in samples.iter().enumerate() {
        for (ji, k) in s.chi_in.iter().enumerate() {
            input[[si, 3 * ji]] = k.x;
            input[[si, 3 * ji + 1]] = k.y;
            input[[si, 3 * ji + 2]] = k.z;
        }
    }
    input
}

/// Loss and analytic gradients of one sample's training loss with respect
/// to every layer's weights and biases (returned in layer order). Intended
/// for gradient verification and training diagnostics.
pub fn sample_gradients(
    params: &IKNetParams,
    rig: &BodyRig,
    sample: &IKSample,
    cfg: &IKTrainConfig,
) -> Result<(IkLossBreakdown, Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    params.validate()?;
    cfg.validate()?;
    let basis = JointBasis::from_rig(rig)?;
    let input = batch_input(&[sample], basis.joint_count());
    let trace = forward_batch(params, &input)?;
    let out = trace.activations.last().unwrap();
    let row: Vec<f64> = out.row(0).to_vec();
    let mut grad_row = vec![0.0; row.len()];
    let breakdown = sample_loss_and_grad(&basis, sample, cfg, &row, &mut grad_row)?;
    let mut g_out = Array2::<f64>::zeros(out.dim());
    for (c, g) in grad_row.iter().enumerate() {
        g_out[[0, c]] = *g;
    }
    let grads = backward_batch(params, &trace, &g_out);
    Ok((breakdown, grads.weights, grads.biases))
}

/// Train the IK network by deterministic mini-batch gradient descent.
/// Returns the trained parameters and per-epoch mean training loss.
pub fn train_iknet(
    rig: &BodyRig,
    dataset: &[IKSample],
    cfg: &IKTrainConfig,
) -> Result<(IKNetParams, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument {
            what: "training dataset is empty".into(),
        });
    }
    let basis = JointBasis::from_rig(rig)?;
    let jn = basis.joint_count();
    let kdim = basis.shape_dim();
    let mut params = IKNetParams::init(jn, kdim, cfg.hidden_layers, cfg.hidden_width, cfg.seed);
    // Fold input standardization into the first layer's initial weights.
    // Root-relative keypoint coordinates are a few tenths of a unit, which
    // would otherwise start the first hidden layer deep in its near-linear
    // low-signal regime and stall optimization for many epochs.
    let mut sq = 0.0;
    let mut cnt = 0usize;
    for s in dataset {
        for v in &s.chi_in {
            sq += v.norm_squared();
            cnt += 3;
        }
    }
    let rms = (sq / cnt.max(1) as f64).sqrt();
    if rms > 0.0 {
        if let Some(first) = params.layers.first_mut() {
            first.weight.mapv_inplace(|w| w / rms);
        }
    }
    let log = train_iknet_from(&mut params, rig, dataset, cfg)?;
    Ok((params, log))
}

/// Continue training existing parameters on `dataset` (fresh optimizer
/// state). `cfg.hidden_layers` / `cfg.hidden_width` are ignored; the
/// architecture is whatever `params` already is.
pub fn train_iknet_from(
    params: &mut IKNetParams,
    rig: &BodyRig,
    dataset: &[IKSample],
    cfg: &IKTrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument {
            what: "training dataset is empty".into(),
        });
    }
    params.validate()?;
    let basis = JointBasis::from_rig(rig)?;
    let jn = basis.joint_count();
    if params.joint_count != jn || params.shape_dim != basis.shape_dim() {
        return Err(Error::InvalidArgument {
            what: format!(
                "parameters are for {} joints / {} shape dims, rig has {} / {}",
                params.joint_count,
                params.shape_dim,
                jn,
                basis.shape_dim()
            ),
        });
    }
    let mut state = OptimizerState::new(params);
    let mut shuffle_rng = seeded_stream(cfg.seed, 91);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        // Fisher-Yates with the dedicated stream; order is part of the
        // determinism contract.
        for i in (1..indices.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let samples: Vec<&IKSample> = batch.iter().map(|&i| &dataset[i]).collect();
            let input = batch_input(&samples, jn);
            let trace = forward_batch(&params, &input)?;
            let out = trace.activations.last().unwrap();
            let mut g_out = Array2::<f64>::zeros(out.dim());
            let inv_b = 1.0 / samples.len() as f64;
            for (si, sample) in samples.iter().enumerate() {
                let row: Vec<f64> = out.row(si).to_vec();
                let mut grad_row = vec![0.0; row.len()];
                let breakdown =
                    sample_loss_and_grad(&basis, sample, cfg, &row, &mut grad_row)?;
                epoch_loss += breakdown.total;
                for (c, g) in grad_row.iter().enumerate() {
                    g_out[[si, c]] = g * inv_b;
                }
            }
            let grads = backward_batch(params, &trace, &g_out);
            state.update(params, &grads, &cfg.optimizer, lr);
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainLog { epoch_losses })
}

/// Mean keypoint error (meters) of the network across samples: compares
/// `α̂ · FK(θ̂, β̂)` with the target-scaled keypoints `α_t · χ_t`.
pub fn evaluate_iknet(
    params: &IKNetParams,
    rig: &BodyRig,
    samples: &[IKSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument {
            what: "evaluation set is empty".into(),
        });
    }
    let basis = JointBasis::from_rig(rig)?;
    let mut total = 0.0;
    for s in samples {
        let pred = iknet_forward(params, &s.chi_in)?;
        let (chi_hat, _, _, _) = eval_from_rotations(&basis, &pred.rotations, &pred.beta);
        let mut err = 0.0;
        for (h, t) in chi_hat.iter().zip(s.chi.iter()) {
            err += (h * pred.alpha - t * s.alpha).norm();
        }
        total += err / s.chi.len() as f64;
    }
    Ok(total / samples.len() as f64)
}
