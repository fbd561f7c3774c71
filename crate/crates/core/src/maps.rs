//! Heat-map encodings of keypoints and the detection loss stack: ground
//! truth construction, decoding, per-part and full losses, sliding-window
//! part localization, bilinear feature cropping, and hand-branch input
//! assembly.
//!
//! Layout: keypoint maps are `J x H x W`; delta and location maps are
//! `3J x H x W` with channel `3 j + c` holding coordinate `c` of joint `j`.
//! Pixel coordinates are `(u, v)` = (column, row).

use nalgebra::Vector3;
use ndarray::{Array1, Array2, Array3, s};

use crate::error::{Error, Result};
use crate::kba::KbaFile;

const ASSET_KIND_MAPS: u32 = 5;

/// Keypoint, delta (bone direction), and location maps for one part.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    /// Confidences, `J x H x W`, values in `[0, 1]`.
    pub k: Array3<f64>,
    /// Unit bone directions tiled per joint, `3J x H x W`.
    pub d: Array3<f64>,
    /// Root-relative 3D coordinates tiled per joint (meters), `3J x H x W`.
    pub l: Array3<f64>,
}

impl MapStack {
    pub fn new(k: Array3<f64>, d: Array3<f64>, l: Array3<f64>) -> Result<Self> {
        let (j, h, w) = k.dim();
        for (name, m) in [("delta maps", &d), ("location maps", &l)] {
            if m.dim() != (3 * j, h, w) {
                return Err(Error::DimensionMismatch {
                    what: name.into(),
                    expected: format!("[{}, {h}, {w}]", 3 * j),
                    actual: format!("{:?}", m.shape()),
                });
            }
        }
        for &v in k.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvariantViolation {
                    field: "keypoint maps".into(),
                    detail: format!("confidence {v} outside [0, 1]"),
                });
            }
        }
        Ok(Self { k, d, l })
    }

    pub fn joint_count(&self) -> usize {
        self.k.dim().0
    }

    pub fn map_size(&self) -> (usize, usize) {
        let (_, h, w) = self.k.dim();
        (h, w)
    }

    pub fn to_kba(&self) -> KbaFile {
        let mut file = KbaFile::new();
        file.push_u32(
            "asset_kind",
            Array1::from_vec(vec![ASSET_KIND_MAPS]).into_dyn(),
        );
        file.push_f64("keypoint_maps", self.k.clone().into_dyn());
        file.push_f64("delta_maps", self.d.clone().into_dyn());
        file.push_f64("location_maps", self.l.clone().into_dyn());
        file
    }

    pub fn from_kba(file: &KbaFile) -> Result<Self> {
        let kind = file.require_u32_scalar("asset_kind")?;
        if kind != ASSET_KIND_MAPS {
            return Err(Error::SchemaMismatch {
                detail: format!("asset_kind {kind} is not a map stack ({ASSET_KIND_MAPS})"),
            });
        }
        let fixed = |name: &str| -> Result<Array3<f64>> {
            file.require_f64(name, 3)?
                .clone()
                .into_dimensionality::<ndarray::Ix3>()
                .map_err(|e| Error::SchemaMismatch {
                    detail: format!("array `{name}`: {e}"),
                })
        };
        Self::new(fixed("keypoint_maps")?, fixed("delta_maps")?, fixed("location_maps")?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_kba().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_kba(&KbaFile::load(path)?)
    }
}

/// Per-term weights of the part loss. `w_d` and `w_l` are zeroed by the
/// caller for samples without 3D labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseNetLossWeights {
    pub w_k: f64,
    pub w_d: f64,
    pub w_l: f64,
}

impl Default for PoseNetLossWeights {
    fn default() -> Self {
        Self { w_k: 1.0, w_d: 1.0, w_l: 1.0 }
    }
}

impl PoseNetLossWeights {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("w_k", self.w_k), ("w_d", self.w_d), ("w_l", self.w_l)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument {
                    what: format!("loss weight {name} = {v} must be finite and nonnegative"),
                });
            }
        }
        Ok(())
    }
}

/// Part weights of the full detection loss; zeroed when a part is absent
/// from the training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetLossWeights {
    pub lambda_b: f64,
    pub lambda_h: f64,
    pub lambda_f: f64,
}

impl Default for DetLossWeights {
    fn default() -> Self {
        Self { lambda_b: 1.0, lambda_h: 1.0, lambda_f: 1.0 }
    }
}

/// Sliding-window localization settings: mass threshold and the stride of
/// the width search (stride 1 guarantees a minimal window).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeConfig {
    pub threshold: f64,
    pub step: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { threshold: 0.95, step: 1 }
    }
}

// ---------------------------------------------------------------------------
// Ground-truth construction and decoding
// ---------------------------------------------------------------------------

/// Build ground-truth maps. 2D keypoints are continuous pixel coordinates
/// `(u, v)`; joints outside `[0, W) x [0, H)` produce all-zero channels.
/// Delta directions must be unit length (or exactly zero for joints without
/// a bone, e.g. the root).
pub fn build_gt_maps(
    keypoints_2d: &[(f64, f64)],
    keypoints_3d: &[Vector3<f64>],
    bone_dirs: &[Vector3<f64>],
    map_size: (usize, usize),
    sigma: f64,
) -> Result<MapStack> {
    let j = keypoints_2d.len();
    if keypoints_3d.len() != j || bone_dirs.len() != j {
        return Err(Error::DimensionMismatch {
            what: "keypoint arrays".into(),
            expected: j.to_string(),
            actual: format!("3d: {}, dirs: {}", keypoints_3d.len(), bone_dirs.len()),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument {
            what: format!("sigma = {sigma} must be positive"),
        });
    }
    let (h, w) = map_size;
    let mut k = Array3::<f64>::zeros((j, h, w));
    let mut d = Array3::<f64>::zeros((3 * j, h, w));
    let mut l = Array3::<f64>::zeros((3 * j, h, w));
    for (ji, &(u, v)) in keypoints_2d.iter().enumerate() {
        let dir = bone_dirs[ji];
        let n = dir.norm();
        if n != 0.0 && (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument {
                what: format!("bone direction {ji} has norm {n}, expected 1 (or 0 if undefined)"),
            });
        }
        let in_bounds = u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64;
        if !in_bounds {
            continue; // all three channels stay zero
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in 0..h {
            for x in 0..w {
                let du = x as f64 - u;
                let dv = y as f64 - v;
                k[[ji, y, x]] = (-(du * du + dv * dv) * inv).exp();
            }
        }
        let loc = keypoints_3d[ji];
        for c in 0..3 {
            d.slice_mut(s![3 * ji + c, .., ..]).fill(dir[c]);
            l.slice_mut(s![3 * ji + c, .., ..]).fill(loc[c]);
        }
    }
    MapStack::new(k, d, l)
}

/// Decoded keypoints: argmax pixel, the 3D location sampled there, and the
/// peak confidence. `valid` is false for all-zero channels (reported as
/// pixel (0,0) with confidence 0).
#[derive(Debug, Clone)]
pub struct DecodedKeypoints {
    /// `(u, v)` per joint.
    pub pixels: Vec<(usize, usize)>,
    pub coords: Vec<Vector3<f64>>,
    pub confidences: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-joint argmax decode; ties break to the first pixel in row-major
/// order.
pub fn decode_keypoints(maps: &MapStack) -> DecodedKeypoints {
    let (j, h, w) = maps.k.dim();
    let mut out = DecodedKeypoints {
        pixels: Vec::with_capacity(j),
        coords: Vec::with_capacity(j),
        confidences: Vec::with_capacity(j),
        valid: Vec::with_capacity(j),
    };
    for ji in 0..j {
        let mut best = f64::NEG_INFINITY;
        let mut best_px = (0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let v = maps.k[[ji, y, x]];
                if v > best {
                    best = v;
                    best_px = (x, y);
                }
            }
        }
        let valid = best > 0.0;
        if !valid {
            out.pixels.push((0, 0));
            out.coords.push(Vector3::zeros());
            out.confidences.push(0.0);
            out.valid.push(false);
            continue;
        }
        let (x, y) = best_px;
        out.pixels.push((x, y));
        out.coords.push(Vector3::new(
            maps.l[[3 * ji, y, x]],
            maps.l[[3 * ji + 1, y, x]],
            maps.l[[3 * ji + 2, y, x]],
        ));
        out.confidences.push(best);
        out.valid.push(true);
    }
    out
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PoseNetLossBreakdown {
    pub kmap: f64,
    pub dmap: f64,
    pub lmap: f64,
    pub total: f64,
}

/// Part loss: `w_k ||K_gt − K||² + w_d ||K_gt ⊙ (D_gt − D)||² +
/// w_l ||K_gt ⊙ (L_gt − L)||²`, the ground-truth confidences masking each
/// of the three coordinate channels in the D/L terms.
pub fn posenet_loss(
    pred: &MapStack,
    gt: &MapStack,
    weights: &PoseNetLossWeights,
) -> Result<PoseNetLossBreakdown> {
    weights.validate()?;
    if pred.k.dim() != gt.k.dim() {
        return Err(Error::DimensionMismatch {
            what: "map stacks".into(),
            expected: format!("{:?}", gt.k.dim()),
            actual: format!("{:?}", pred.k.dim()),
        });
    }
    let (j, h, w) = gt.k.dim();
    let mut kmap = 0.0;
    for (a, b) in pred.k.iter().zip(gt.k.iter()) {
        let r = b - a;
        kmap += r * r;
    }
    let mut dmap = 0.0;
    let mut lmap = 0.0;
    for ji in 0..j {
        for y in 0..h {
            for x in 0..w {
                let mask = gt.k[[ji, y, x]];
                for c in 0..3 {
                    let ch = 3 * ji + c;
                    let rd = mask * (gt.d[[ch, y, x]] - pred.d[[ch, y, x]]);
                    dmap += rd * rd;
                    let rl = mask * (gt.l[[ch, y, x]] - pred.l[[ch, y, x]]);
                    lmap += rl * rl;
                }
            }
        }
    }
    Ok(PoseNetLossBreakdown {
        kmap,
        dmap,
        lmap,
        total: weights.w_k * kmap + weights.w_d * dmap + weights.w_l * lmap,
    })
}

/// One-channel part heat-map: per-pixel maximum across keypoint channels.
pub fn heatmap_from_kmaps(k: &Array3<f64>) -> Array2<f64> {
    let (j, h, w) = k.dim();
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::NEG_INFINITY;
            for ji in 0..j {
                m = m.max(k[[ji, y, x]]);
            }
            out[[y, x]] = if j == 0 { 0.0 } else { m };
        }
    }
    out
}

/// Squared Frobenius distance between two heat-maps.
fn heatmap_sq_loss(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::DimensionMismatch {
            what: "heat-maps".into(),
            expected: format!("{:?}", gt.dim()),
            actual: format!("{:?}", pred.dim()),
        });
    }
    Ok(pred
        .iter()
        .zip(gt.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// One part's prediction/ground-truth pair plus its term weights.
pub struct PartPair<'a> {
    pub pred: &'a MapStack,
    pub gt: &'a MapStack,
    pub weights: PoseNetLossWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DetLossBreakdown {
    pub body: f64,
    pub left_hand: f64,
    pub right_hand: f64,
    /// Hand localization heat-map loss (both hands).
    pub hand_heatmaps: f64,
    /// Face localization heat-map loss.
    pub face: f64,
    pub total: f64,
}

/// Full detection loss:
/// `λ_b L_p(body) + λ_h (L_p(lh) + L_p(rh) + L_hand_heatmaps) + λ_f L_face`.
#[allow(clippy::too_many_arguments)]
pub fn full_detnet_loss(
    body: &PartPair,
    left_hand: &PartPair,
    right_hand: &PartPair,
    hand_heat_pred_left: &Array2<f64>,
    hand_heat_gt_left: &Array2<f64>,
    hand_heat_pred_right: &Array2<f64>,
    hand_heat_gt_right: &Array2<f64>,
    face_heat_pred: &Array2<f64>,
    face_heat_gt: &Array2<f64>,
    weights: &DetLossWeights,
) -> Result<DetLossBreakdown> {
    for (name, v) in [
        ("lambda_b", weights.lambda_b),
        ("lambda_h", weights.lambda_h),
        ("lambda_f", weights.lambda_f),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument {
                what: format!("loss weight {name} = {v} must be finite and nonnegative"),
            });
        }
    }
    let body_loss = posenet_loss(body.pred, body.gt, &body.weights)?.total;
    let lh_loss = posenet_loss(left_hand.pred, left_hand.gt, &left_hand.weights)?.total;
    let rh_loss = posenet_loss(right_hand.pred, right_hand.gt, &right_hand.weights)?.total;
    let hand_heat = heatmap_sq_loss(hand_heat_pred_left, hand_heat_gt_left)?
        + heatmap_sq_loss(hand_heat_pred_right, hand_heat_gt_right)?;
    let face_loss = heatmap_sq_loss(face_heat_pred, face_heat_gt)?;
    Ok(DetLossBreakdown {
        body: body_loss,
        left_hand: lh_loss,
        right_hand: rh_loss,
        hand_heatmaps: hand_heat,
        face: face_loss,
        total: weights.lambda_b * body_loss
            + weights.lambda_h * (lh_loss + rh_loss + hand_heat)
            + weights.lambda_f * face_loss,
    })
}

// ---------------------------------------------------------------------------
// Localization and cropping
// ---------------------------------------------------------------------------

/// Smallest square window holding at least `threshold` of the total map
/// mass; among positions at that width, the one with the largest contained
/// mass (row-major tie-break). Windows are clipped at the map edge.
///
/// Sums are taken directly in row-major order (no running/integral tables),
/// so a window covering all nonzero pixels reproduces the total bit-for-bit
/// and `threshold = 1` is exact.
pub fn localize_window(
    heatmap: &Array2<f64>,
    cfg: &LocalizeConfig,
) -> Result<(usize, usize, usize)> {
    if !(cfg.threshold > 0.0 && cfg.threshold <= 1.0) {
        return Err(Error::InvalidArgument {
            what: format!("threshold {} outside (0, 1]", cfg.threshold),
        });
    }
    if cfg.step == 0 {
        return Err(Error::InvalidArgument {
            what: "window search step must be positive".into(),
        });
    }
    let (h, w) = heatmap.dim();
    for &v in heatmap.iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument {
                what: format!("heat-map value {v} is negative or non-finite"),
            });
        }
    }
    let total: f64 = heatmap.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoDetection);
    }
    let needed = cfg.threshold * total;
    let wmax = h.max(w);
    let mut widths: Vec<usize> = (1..=wmax).step_by(cfg.step).collect();
    if *widths.last().unwrap() != wmax {
        widths.push(wmax);
    }
    for win in widths {
        let mut best: Option<(f64, usize, usize)> = None;
        for v in 0..h {
            for u in 0..w {
                let mut sum = 0.0;
                for y in v..(v + win).min(h) {
                    for x in u..(u + win).min(w) {
                        sum += heatmap[[y, x]];
                    }
                }
                if sum >= needed && best.map(|(s, _, _)| sum > s).unwrap_or(true) {
                    best = Some((sum, u, v));
                }
            }
        }
        if let Some((_, u, v)) = best {
            return Ok((win, u, v));
        }
    }
    // threshold ≤ 1 makes the full-map window always feasible.
    unreachable!("full-coverage window is always feasible");
}

/// Bilinear crop-and-resize with half-pixel-center alignment; samples
/// falling outside the feature map clamp to the edge.
pub fn crop_resize_bilinear(
    features: &Array3<f64>,
    window: (usize, usize, usize),
    out_size: (usize, usize),
) -> Result<Array3<f64>> {
    let (c, h, w) = features.dim();
    let (win, u, v) = window;
    let (oh, ow) = out_size;
    if win == 0 || oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument {
            what: format!("window width {win} and output size {oh}x{ow} must be positive"),
        });
    }
    if u >= w || v >= h {
        return Err(Error::EmptyIntersection);
    }
    let mut out = Array3::<f64>::zeros((c, oh, ow));
    for i in 0..oh {
        // Half-pixel centers: output pixel centers map linearly onto window
        // pixel centers.
        let sy = v as f64 + (i as f64 + 0.5) * win as f64 / oh as f64 - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0c = (y0 as i64).clamp(0, h as i64 - 1) as usize;
        let y1c = (y0 as i64 + 1).clamp(0, h as i64 - 1) as usize;
        for jx in 0..ow {
            let sx = u as f64 + (jx as f64 + 0.5) * win as f64 / ow as f64 - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0c = (x0 as i64).clamp(0, w as i64 - 1) as usize;
            let x1c = (x0 as i64 + 1).clamp(0, w as i64 - 1) as usize;
            for ch in 0..c {
                let tl = features[[ch, y0c, x0c]];
                let tr = features[[ch, y0c, x1c]];
                let bl = features[[ch, y1c, x0c]];
                let br = features[[ch, y1c, x1c]];
                let top = tl + (tr - tl) * fx;
                let bot = bl + (br - bl) * fx;
                out[[ch, i, jx]] = top + (bot - top) * fy;
            }
        }
    }
    Ok(out)
}

/// Hand-branch input: cropped body features, supplementary features, and a
/// constant binary attention channel, stored pre-concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct HandBranchInput {
    pub tensor: Array3<f64>,
    pub body_channels: usize,
    pub supp_channels: usize,
    pub attention: f64,
}

impl HandBranchInput {
    pub fn body_crop(&self) -> ndarray::ArrayView3<'_, f64> {
        self.tensor.slice(s![..self.body_channels, .., ..])
    }

    pub fn supp_features(&self) -> ndarray::ArrayView3<'_, f64> {
        self.tensor
            .slice(s![self.body_channels..self.body_channels + self.supp_channels, .., ..])
    }

    pub fn attention_map(&self) -> ndarray::ArrayView3<'_, f64> {
        self.tensor.slice(s![self.tensor.dim().0 - 1.., .., ..])
    }
}

/// Concatenate `[body_crop; supp; attention]` along channels. `attention`
/// must be exactly 0 or 1 (always 1 at inference).
pub fn assemble_hand_input(
    body_crop: &Array3<f64>,
    supp: &Array3<f64>,
    attention: f64,
) -> Result<HandBranchInput> {
    let (c1, h, w) = body_crop.dim();
    let (c2, hs, ws) = supp.dim();
    if (hs, ws) != (h, w) {
        return Err(Error::DimensionMismatch {
            what: "supplementary features".into(),
            expected: format!("spatial {h}x{w}"),
            actual: format!("spatial {hs}x{ws}"),
        });
    }
    if attention != 0.0 && attention != 1.0 {
        return Err(Error::InvalidArgument {
            what: format!("attention value {attention} must be exactly 0 or 1"),
        });
    }
    let mut tensor = Array3::<f64>::zeros((c1 + c2 + 1, h, w));
    tensor.slice_mut(s![..c1, .., ..]).assign(body_crop);
    tensor.slice_mut(s![c1..c1 + c2, .., ..]).assign(supp);
    tensor.slice_mut(s![c1 + c2.., .., ..]).fill(attention);
    Ok(HandBranchInput {
        tensor,
        body_channels: c1,
        supp_channels: c2,
        attention,
    })
}
