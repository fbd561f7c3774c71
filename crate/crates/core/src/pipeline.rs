//! End-to-end synthetic runs plus the plain-text interchange formats used
//! by the CLI (poses, keypoints, face parameters, meshes, decoded maps,
//! key-value configs).
//!
//! Reports are deliberately free of timestamps and absolute paths so a
//! fixed seed reproduces them byte-for-byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ndarray::{s, Array2};
use rand::Rng;
use serde::Serialize;

use crate::assets::{
    generate_synthetic_rig, seeded_stream, BodyRig, NUM_BODY_JOINTS,
    NUM_FACE_EXPRESSION_PARAMS, NUM_FACE_REFLECTANCE_PARAMS, NUM_FACE_SHAPE_PARAMS,
    NUM_HAND_JOINTS,
};
use crate::body::{forward_kinematics, lbs, shape_blend, Pose};
use crate::error::{Error, Result};
use crate::face::{face_geometry, face_reflectance, merge_face_body, sh_shade, vertex_normals};
use crate::geometry::{
    metric_report, solve_global_translation, Camera, MetricReport, MpjpeMode, TranslationProblem,
};
use crate::ik::{
    evaluate_iknet, generate_ik_training_set, iknet_forward, train_iknet, IKTrainConfig,
    Optimizer,
};
use crate::maps::{
    build_gt_maps, crop_resize_bilinear, decode_keypoints, heatmap_from_kmaps, localize_window,
    DecodedKeypoints, LocalizeConfig,
};
use crate::math::{axis_angle_to_matrix, matrix_to_axis_angle};

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("`{tok}` is not a number")))
}

fn parse_usize(tok: &str, path: &Path, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("`{tok}` is not an index")))
}

/// Iterate non-empty, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

/// Parsed pose text: bare lines `j wx wy wz` give per-joint axis-angle
/// rotations; optional keyword lines `root_translation tx ty tz`,
/// `beta b0 b1 ...`, and `alpha a` carry the remaining parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFile {
    pub rotations: Vec<(usize, Vector3<f64>)>,
    pub root_translation: Vector3<f64>,
    pub beta: Vec<f64>,
    pub alpha: f64,
}

impl Default for PoseFile {
    fn default() -> Self {
        Self {
            rotations: Vec::new(),
            root_translation: Vector3::zeros(),
            beta: Vec::new(),
            alpha: 1.0,
        }
    }
}

impl PoseFile {
    /// Instantiate on a rig: unspecified joints stay at identity; joint ids
    /// must be in range and unique.
    pub fn to_pose(&self, rig: &BodyRig) -> Result<Pose> {
        let mut pose = Pose::identity(rig);
        pose.root_translation = self.root_translation;
        let mut seen = vec![false; rig.joint_count()];
        for &(j, w) in &self.rotations {
            if j >= rig.joint_count() {
                return Err(Error::InvalidArgument {
                    what: format!("pose joint id {j} out of range (J = {})", rig.joint_count()),
                });
            }
            if seen[j] {
                return Err(Error::InvalidArgument {
                    what: format!("pose lists joint {j} twice"),
                });
            }
            seen[j] = true;
            *pose.rotation_mut(j) = axis_angle_to_matrix(&w);
        }
        Ok(pose)
    }
}

pub fn parse_pose_file(path: &Path) -> Result<PoseFile> {
    let text = read_text(path)?;
    let mut out = PoseFile::default();
    for (ln, line) in content_lines(&text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "root_translation" => {
                if toks.len() != 4 {
                    return Err(parse_err(path, ln, "root_translation needs 3 values"));
                }
                out.root_translation = Vector3::new(
                    parse_f64(toks[1], path, ln)?,
                    parse_f64(toks[2], path, ln)?,
                    parse_f64(toks[3], path, ln)?,
                );
            }
            "beta" => {
                out.beta = toks[1..]
                    .iter()
                    .map(|t| parse_f64(t, path, ln))
                    .collect::<Result<_>>()?;
            }
            "alpha" => {
                if toks.len() != 2 {
                    return Err(parse_err(path, ln, "alpha needs 1 value"));
                }
                out.alpha = parse_f64(toks[1], path, ln)?;
            }
            _ => {
                if toks.len() != 4 {
                    return Err(parse_err(
                        path,
                        ln,
                        format!("expected `joint_id wx wy wz`, got {} tokens", toks.len()),
                    ));
                }
                let j = parse_usize(toks[0], path, ln)?;
                out.rotations.push((
                    j,
                    Vector3::new(
                        parse_f64(toks[1], path, ln)?,
                        parse_f64(toks[2], path, ln)?,
                        parse_f64(toks[3], path, ln)?,
                    ),
                ));
            }
        }
    }
    Ok(out)
}

pub fn write_pose_file(path: &Path, pose: &PoseFile) -> Result<()> {
    let mut text = String::new();
    for &(j, w) in &pose.rotations {
        writeln!(text, "{j} {} {} {}", w.x, w.y, w.z).unwrap();
    }
    let t = pose.root_translation;
    if t != Vector3::zeros() {
        writeln!(text, "root_translation {} {} {}", t.x, t.y, t.z).unwrap();
    }
    if !pose.beta.is_empty() {
        let vals: Vec<String> = pose.beta.iter().map(|b| b.to_string()).collect();
        writeln!(text, "beta {}", vals.join(" ")).unwrap();
    }
    if pose.alpha != 1.0 {
        writeln!(text, "alpha {}", pose.alpha).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Keypoints text: one `id x y z` line per joint.
pub fn parse_keypoints_file(path: &Path) -> Result<Vec<(usize, Vector3<f64>)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (ln, line) in content_lines(&text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(
                path,
                ln,
                format!("expected `id x y z`, got {} tokens", toks.len()),
            ));
        }
        out.push((
            parse_usize(toks[0], path, ln)?,
            Vector3::new(
                parse_f64(toks[1], path, ln)?,
                parse_f64(toks[2], path, ln)?,
                parse_f64(toks[3], path, ln)?,
            ),
        ));
    }
    Ok(out)
}

pub fn write_keypoints_file(path: &Path, keypoints: &[(usize, Vector3<f64>)]) -> Result<()> {
    let mut text = String::new();
    for (id, k) in keypoints {
        writeln!(text, "{id} {} {} {}", k.x, k.y, k.z).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Decoded-keypoint text: one `id u v x y z conf` line per joint.
pub fn write_decoded_file(path: &Path, decoded: &DecodedKeypoints) -> Result<()> {
    let mut text = String::new();
    for j in 0..decoded.coords.len() {
        let (u, v) = decoded.pixels[j];
        let c = decoded.coords[j];
        writeln!(
            text,
            "{j} {u} {v} {} {} {} {}",
            c.x, c.y, c.z, decoded.confidences[j]
        )
        .unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Face parameter text: keyword lines `zeta ...`, `epsilon ...`,
/// `gamma ...`, and optionally `mu` with 27 row-major values (3 color
/// channels x 9 harmonics). Missing vectors default to zero; missing `mu`
/// skips shading (colors are the raw reflectance).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaceParams {
    pub zeta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu: Option<Array2<f64>>,
}

pub fn parse_face_params(path: &Path) -> Result<FaceParams> {
    let text = read_text(path)?;
    let mut out = FaceParams::default();
    for (ln, line) in content_lines(&text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let vals: Vec<f64> = toks[1..]
            .iter()
            .map(|t| parse_f64(t, path, ln))
            .collect::<Result<_>>()?;
        match toks[0] {
            "zeta" => out.zeta = vals,
            "epsilon" => out.epsilon = vals,
            "gamma" => out.gamma = vals,
            "mu" => {
                if vals.len() != 27 {
                    return Err(parse_err(
                        path,
                        ln,
                        format!("mu needs 27 values (3x9 row-major), got {}", vals.len()),
                    ));
                }
                out.mu = Some(Array2::from_shape_vec((3, 9), vals).unwrap());
            }
            other => {
                return Err(parse_err(path, ln, format!("unknown keyword `{other}`")));
            }
        }
    }
    Ok(out)
}

/// Indexed-triangle mesh text: `v x y z [r g b]` lines then 1-based
/// `f i j k` lines.
pub fn write_mesh_text(
    path: &Path,
    vertices: &Array2<f64>,
    colors: Option<&Array2<f64>>,
    triangles: &[[u32; 3]],
) -> Result<()> {
    if let Some(c) = colors {
        if c.dim() != vertices.dim() {
            return Err(Error::DimensionMismatch {
                what: "mesh colors".into(),
                expected: format!("{:?}", vertices.dim()),
                actual: format!("{:?}", c.dim()),
            });
        }
    }
    let mut text = String::new();
    for i in 0..vertices.nrows() {
        match colors {
            Some(c) => writeln!(
                text,
                "v {} {} {} {} {} {}",
                vertices[[i, 0]],
                vertices[[i, 1]],
                vertices[[i, 2]],
                c[[i, 0]],
                c[[i, 1]],
                c[[i, 2]]
            )
            .unwrap(),
            None => writeln!(
                text,
                "v {} {} {}",
                vertices[[i, 0]],
                vertices[[i, 1]],
                vertices[[i, 2]]
            )
            .unwrap(),
        }
    }
    for t in triangles {
        writeln!(text, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// File-level evaluation
// ---------------------------------------------------------------------------

/// Parse two keypoint files, align them by id, and compute the metric
/// report. `mode` selects the headline number returned alongside the full
/// report (`RootRelative` → `mpjpe_mm`, `Procrustes` → `mpjpe_pa_mm`).
pub fn evaluate_files(
    pred_path: &Path,
    gt_path: &Path,
    mode: MpjpeMode,
) -> Result<(MetricReport, f64)> {
    let pred = parse_keypoints_file(pred_path)?;
    let gt = parse_keypoints_file(gt_path)?;
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            what: "keypoint files".into(),
            expected: format!("{} joints (ground truth)", gt.len()),
            actual: format!("{} joints (prediction)", pred.len()),
        });
    }
    let mut pred_sorted = pred.clone();
    pred_sorted.sort_by_key(|(id, _)| *id);
    let mut gt_sorted = gt.clone();
    gt_sorted.sort_by_key(|(id, _)| *id);
    for ((ip, _), (ig, _)) in pred_sorted.iter().zip(gt_sorted.iter()) {
        if ip != ig {
            return Err(Error::InvalidArgument {
                what: format!("keypoint ids differ between files ({ip} vs {ig})"),
            });
        }
    }
    let p: Vec<Vector3<f64>> = pred_sorted.iter().map(|(_, v)| *v).collect();
    let g: Vec<Vector3<f64>> = gt_sorted.iter().map(|(_, v)| *v).collect();
    let report = metric_report(&p, &g, None, None)?;
    let primary = match mode {
        MpjpeMode::RootRelative => report.mpjpe_mm,
        MpjpeMode::Procrustes => report.mpjpe_pa_mm,
    };
    Ok((report, primary))
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub body_vertices: usize,
    pub face_vertices: usize,
    /// `(height, width)` of all maps.
    pub map_size: (usize, usize),
    pub sigma: f64,
    pub localize_threshold: f64,
    /// Held-out samples driving decode/localize/IK/translation stages.
    pub eval_samples: usize,
    pub ik_train_samples: usize,
    pub ik: IKTrainConfig,
    /// Pinhole focal length (pixels) of the synthetic camera.
    pub focal: f64,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            body_vertices: 420,
            face_vertices: 60,
            map_size: (64, 64),
            sigma: 1.5,
            localize_threshold: 0.95,
            eval_samples: 4,
            ik_train_samples: 600,
            ik: IKTrainConfig {
                hidden_layers: 2,
                hidden_width: 96,
                epochs: 6,
                batch_size: 32,
                learning_rate: 2e-3,
                optimizer: Optimizer::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    epsilon: 1e-8,
                },
                ..IKTrainConfig::default()
            },
            focal: 60.0,
            out_dir: PathBuf::from("kinebody_out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.ik.validate()?;
        if self.eval_samples == 0 || self.ik_train_samples == 0 {
            return Err(Error::InvalidArgument {
                what: "eval_samples and ik_train_samples must be positive".into(),
            });
        }
        if !(self.sigma > 0.0) || !(self.focal > 0.0) {
            return Err(Error::InvalidArgument {
                what: "sigma and focal must be positive".into(),
            });
        }
        if !(self.localize_threshold > 0.0 && self.localize_threshold <= 1.0) {
            return Err(Error::InvalidArgument {
                what: format!("localize_threshold {} outside (0, 1]", self.localize_threshold),
            });
        }
        if self.map_size.0 < 8 || self.map_size.1 < 8 {
            return Err(Error::InvalidArgument {
                what: "map size must be at least 8x8".into(),
            });
        }
        Ok(())
    }
}

/// Apply `key = value` lines from a plain-text config onto the defaults.
pub fn parse_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    let text = read_text(path)?;
    let mut cfg = PipelineConfig::default();
    for (ln, line) in content_lines(&text) {
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => {
                let mut it = line.split_whitespace();
                match (it.next(), it.next()) {
                    (Some(k), Some(v)) => (k, v),
                    _ => return Err(parse_err(path, ln, "expected `key = value`")),
                }
            }
        };
        let int = |v: &str| -> Result<usize> { parse_usize(v, path, ln) };
        let num = |v: &str| -> Result<f64> { parse_f64(v, path, ln) };
        match key {
            "seed" => {
                cfg.seed = value
                    .parse::<u64>()
                    .map_err(|_| parse_err(path, ln, format!("`{value}` is not a seed")))?
            }
            "body_vertices" => cfg.body_vertices = int(value)?,
            "face_vertices" => cfg.face_vertices = int(value)?,
            "map_height" => cfg.map_size.0 = int(value)?,
            "map_width" => cfg.map_size.1 = int(value)?,
            "sigma" => cfg.sigma = num(value)?,
            "localize_threshold" => cfg.localize_threshold = num(value)?,
            "eval_samples" => cfg.eval_samples = int(value)?,
            "ik_train_samples" => cfg.ik_train_samples = int(value)?,
            "ik_epochs" => cfg.ik.epochs = int(value)?,
            "ik_batch_size" => cfg.ik.batch_size = int(value)?,
            "ik_hidden_layers" => cfg.ik.hidden_layers = int(value)?,
            "ik_hidden_width" => cfg.ik.hidden_width = int(value)?,
            "ik_learning_rate" => cfg.ik.learning_rate = num(value)?,
            "ik_lr_decay" => cfg.ik.lr_decay = num(value)?,
            "ik_sigma_body" => cfg.ik.sample_sigma_body = num(value)?,
            "ik_sigma_finger" => cfg.ik.sample_sigma_finger = num(value)?,
            "ik_active_prob" => cfg.ik.sample_active_prob = num(value)?,
            "ik_seed" => {
                cfg.ik.seed = value
                    .parse::<u64>()
                    .map_err(|_| parse_err(path, ln, format!("`{value}` is not a seed")))?
            }
            "ik_noise_std" => cfg.ik.noise_std = num(value)?,
            "ik_optimizer" => {
                cfg.ik.optimizer = match value {
                    "sgd" => Optimizer::Sgd { momentum: 0.9 },
                    "adam" => Optimizer::Adam {
                        beta1: 0.9,
                        beta2: 0.999,
                        epsilon: 1e-8,
                    },
                    other => {
                        return Err(parse_err(
                            path,
                            ln,
                            format!("unknown optimizer `{other}` (sgd|adam)"),
                        ))
                    }
                }
            }
            "focal" => cfg.focal = num(value)?,
            other => {
                return Err(parse_err(path, ln, format!("unknown key `{other}`")));
            }
        }
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Pipeline run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RigSummary {
    pub body_vertices: usize,
    pub face_vertices: usize,
    pub joints: usize,
    pub mean_bone_length_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodeStage {
    /// Root-relative MPJPE of decoded 3D keypoints against ground truth.
    pub mpjpe_root_mm: f64,
    /// Largest 2D distance between a decoded pixel and the true projection.
    pub max_pixel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationRecord {
    pub sample: usize,
    /// `(window, u, v)` per part.
    pub left_hand: (usize, usize, usize),
    pub right_hand: (usize, usize, usize),
    pub face: (usize, usize, usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct IkStage {
    pub train_samples: usize,
    pub epochs: usize,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub held_out_error_m: f64,
    pub held_out_error_pct_mean_bone: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranslationStage {
    pub samples: usize,
    pub max_depth_error_m: f64,
    pub max_translation_error_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MergeStage {
    pub vertices: usize,
    pub triangles: usize,
    pub stitch_triangles: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub rig: RigSummary,
    pub eval_samples: usize,
    pub decode: DecodeStage,
    pub localization: Vec<LocalizationRecord>,
    pub hand_input_channels: usize,
    pub ik: IkStage,
    pub translation: TranslationStage,
    pub merge: MergeStage,
    /// IK-stage keypoints of sample 0 against ground truth.
    pub metrics: MetricReport,
    pub artifacts: Vec<String>,
}

fn stage<T>(label: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument { what } => Error::InvalidArgument {
            what: format!("[{label}] {what}"),
        },
        other => other,
    })
}

/// Run every stage on synthetic data and write the artifacts plus
/// `report.json` into the output directory.
pub fn run_synthetic_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut artifacts: Vec<String> = Vec::new();
    let mut save = |name: &str| -> PathBuf {
        artifacts.push(name.to_string());
        cfg.out_dir.join(name)
    };

    // Assets.
    let (rig, face, merge_spec) =
        generate_synthetic_rig(cfg.seed, cfg.body_vertices, cfg.face_vertices)?;
    rig.save(&save("body.kba"))?;
    face.save(&save("face.kba"))?;
    merge_spec.save(&save("merge.kba"))?;
    let rig_summary = RigSummary {
        body_vertices: rig.vertex_count(),
        face_vertices: face.vertex_count(),
        joints: rig.joint_count(),
        mean_bone_length_m: rig.mean_bone_length(),
    };

    // Held-out samples (no augmentation: inputs equal exact FK keypoints).
    let eval_cfg = IKTrainConfig {
        noise_std: 0.0,
        scale_augment: None,
        ..cfg.ik.clone()
    };
    let eval_set = generate_ik_training_set(&rig, cfg.eval_samples, cfg.seed ^ 0x5eed, &eval_cfg)?;

    let (h, w) = cfg.map_size;
    let camera = Camera::new(
        cfg.focal,
        cfg.focal,
        w as f64 / 2.0,
        h as f64 / 2.0,
        0.0,
    )?;
    let jn = rig.joint_count();
    let lh0 = NUM_BODY_JOINTS;
    let half_hand = NUM_HAND_JOINTS / 2;

    // Decode + localize each sample.
    let mut mpjpe_sum = 0.0;
    let mut max_pixel_error: f64 = 0.0;
    let mut localization = Vec::with_capacity(eval_set.len());
    let loc_cfg = LocalizeConfig {
        threshold: cfg.localize_threshold,
        step: 1,
    };
    let mut hand_input_channels = 0usize;
    for (si, sample) in eval_set.iter().enumerate() {
        let mut rng = seeded_stream(cfg.seed, 300 + si as u64);
        let t = Vector3::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(2.6..3.4),
        );
        let mut k2d = Vec::with_capacity(jn);
        for chi in &sample.chi {
            k2d.push(camera.project(&(chi + t))?);
        }
        let mut dirs = Vec::with_capacity(jn);
        for j in 0..jn {
            dirs.push(match rig.parent_index[j] {
                Some(p) => {
                    let d = sample.chi[j] - sample.chi[p];
                    let n = d.norm();
                    if n > 0.0 {
                        d / n
                    } else {
                        Vector3::zeros()
                    }
                }
                None => Vector3::zeros(),
            });
        }
        let maps = stage(
            "maps",
            build_gt_maps(&k2d, &sample.chi, &dirs, cfg.map_size, cfg.sigma),
        )?;
        if si == 0 {
            maps.save(&save("maps_sample0.kba"))?;
        }

        let decoded = decode_keypoints(&maps);
        let (m, _) = crate::geometry::mpjpe(&decoded.coords, &sample.chi, MpjpeMode::RootRelative)?;
        mpjpe_sum += m;
        for j in 0..jn {
            let (u, v) = decoded.pixels[j];
            let (ug, vg) = k2d[j];
            max_pixel_error = max_pixel_error.max((u as f64 - ug).hypot(v as f64 - vg));
        }

        let left = stage(
            "localize",
            localize_window(
                &heatmap_from_kmaps(&maps.k.slice(s![lh0..lh0 + half_hand, .., ..]).to_owned()),
                &loc_cfg,
            ),
        )?;
        let right = stage(
            "localize",
            localize_window(
                &heatmap_from_kmaps(
                    &maps.k.slice(s![lh0 + half_hand..jn, .., ..]).to_owned(),
                ),
                &loc_cfg,
            ),
        )?;
        // Face heat-map: head-joint channel (the last basic body keypoint
        // chain ends at the head, joint 5 in the synthetic skeleton).
        let head = 5.min(jn - 1);
        let face_win = stage(
            "localize",
            localize_window(
                &heatmap_from_kmaps(&maps.k.slice(s![head..head + 1, .., ..]).to_owned()),
                &loc_cfg,
            ),
        )?;
        localization.push(LocalizationRecord {
            sample: si,
            left_hand: left,
            right_hand: right,
            face: face_win,
        });

        if si == 0 {
            // Assemble a hand-branch input from the left-hand window.
            let body_crop = crop_resize_bilinear(&maps.k, left, (16, 16))?;
            let supp = crop_resize_bilinear(&maps.d, left, (16, 16))?;
            let hand_input = crate::maps::assemble_hand_input(&body_crop, &supp, 1.0)?;
            hand_input_channels = hand_input.tensor.dim().0;
            write_decoded_file(&save("decoded_sample0.txt"), &decoded)?;
            let gt_lines: Vec<(usize, Vector3<f64>)> =
                sample.chi.iter().enumerate().map(|(j, c)| (j, *c)).collect();
            write_keypoints_file(&save("gt_keypoints_sample0.txt"), &gt_lines)?;
        }
    }
    let decode_stage = DecodeStage {
        mpjpe_root_mm: mpjpe_sum / eval_set.len() as f64,
        max_pixel_error,
    };

    // IK training + held-out evaluation.
    let train_set = generate_ik_training_set(
        &rig,
        cfg.ik_train_samples,
        cfg.seed.wrapping_add(1),
        &cfg.ik,
    )?;
    let (params, log) = train_iknet(&rig, &train_set, &cfg.ik)?;
    params.save(&save("ik_params.kba"))?;
    let held_out = evaluate_iknet(&params, &rig, &eval_set)?;
    let ik_stage = IkStage {
        train_samples: cfg.ik_train_samples,
        epochs: cfg.ik.epochs,
        first_epoch_loss: *log.epoch_losses.first().unwrap(),
        final_epoch_loss: *log.epoch_losses.last().unwrap(),
        held_out_error_m: held_out,
        held_out_error_pct_mean_bone: 100.0 * held_out / rig_summary.mean_bone_length_m,
    };

    // IK on sample 0: write the recovered pose and score its keypoints.
    let pred = iknet_forward(&params, &eval_set[0].chi_in)?;
    let pose_out = PoseFile {
        rotations: pred
            .rotations
            .iter()
            .enumerate()
            .map(|(j, r)| (j, matrix_to_axis_angle(r)))
            .collect(),
        root_translation: Vector3::zeros(),
        beta: pred.beta.clone(),
        alpha: pred.alpha,
    };
    write_pose_file(&save("ik_pose_sample0.txt"), &pose_out)?;
    let pred_pose = pose_out.to_pose(&rig)?;
    let pred_posed = forward_kinematics(&rig, &pred_pose, Some(&pred.beta))?;
    let pred_root = pred_posed.posed_joints[pred_posed.root_joint];
    let pred_kp: Vec<Vector3<f64>> = pred_posed
        .posed_joints
        .iter()
        .map(|p| (p - pred_root) * pred.alpha)
        .collect();
    let metrics = metric_report(&pred_kp, &eval_set[0].chi, None, None)?;

    // Global translation per sample from the root→child bone.
    let child = rig
        .parent_index
        .iter()
        .position(|p| *p == Some(rig.root_joint()))
        .ok_or_else(|| Error::InvalidHierarchy {
            detail: "root joint has no child".into(),
        })?;
    let mut max_depth_error: f64 = 0.0;
    let mut max_translation_error: f64 = 0.0;
    for (si, sample) in eval_set.iter().enumerate() {
        let mut rng = seeded_stream(cfg.seed, 300 + si as u64);
        let t = Vector3::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(2.6..3.4),
        );
        let root = rig.root_joint();
        let p_abs = sample.chi[root] + t;
        let c_abs = sample.chi[child] + t;
        let problem = TranslationProblem {
            parent_2d: camera.project(&p_abs)?,
            child_2d: camera.project(&c_abs)?,
            parent_depth: sample.chi[root].z,
            child_depth: sample.chi[child].z,
            bone_length: (c_abs - p_abs).norm(),
            camera,
        };
        let sol = stage("translation", solve_global_translation(&problem))?;
        max_depth_error = max_depth_error.max((sol.z_p - p_abs.z).abs());
        let tr = Vector3::new(sol.translation[0], sol.translation[1], sol.translation[2]);
        max_translation_error = max_translation_error.max((tr - p_abs).norm());
    }
    let translation_stage = TranslationStage {
        samples: eval_set.len(),
        max_depth_error_m: max_depth_error,
        max_translation_error_m: max_translation_error,
    };

    // Merge a shaded face onto the posed body of sample 0.
    let sample0 = &eval_set[0];
    let pose0 = Pose {
        body_rotations: sample0.theta[..NUM_BODY_JOINTS.min(jn)].to_vec(),
        hand_rotations: sample0.theta[NUM_BODY_JOINTS.min(jn)..].to_vec(),
        root_translation: Vector3::zeros(),
    };
    let posed0 = forward_kinematics(&rig, &pose0, Some(&sample0.beta))?;
    let rest_vertices = shape_blend(&rig, &sample0.beta)?;
    let body_vertices = lbs(&rig, &rest_vertices, &posed0)?;
    let mut face_rng = seeded_stream(cfg.seed, 400);
    let zeta: Vec<f64> = (0..NUM_FACE_SHAPE_PARAMS)
        .map(|_| face_rng.gen_range(-0.5..0.5))
        .collect();
    let epsilon: Vec<f64> = (0..NUM_FACE_EXPRESSION_PARAMS)
        .map(|_| face_rng.gen_range(-0.5..0.5))
        .collect();
    let gamma: Vec<f64> = (0..NUM_FACE_REFLECTANCE_PARAMS)
        .map(|_| face_rng.gen_range(-0.5..0.5))
        .collect();
    let face_vertices = face_geometry(&face, &zeta, &epsilon)?;
    let reflectance = face_reflectance(&face, &gamma)?;
    let normals = vertex_normals(&face_vertices, &face.triangles)?;
    // Ambient-only illumination scaled so shading reproduces reflectance.
    let mut mu = Array2::<f64>::zeros((3, 9));
    let ambient = 1.0 / crate::face::sh_basis(&Vector3::new(0.0, 0.0, 1.0))[0];
    for c in 0..3 {
        mu[[c, 0]] = ambient;
    }
    let face_colors = sh_shade(&reflectance, &normals, &mu)?;
    let merged = stage(
        "merge",
        merge_face_body(&body_vertices, &face_vertices, &face, &merge_spec, &posed0),
    )?;
    let mut colors = Array2::<f64>::from_elem(merged.vertices.dim(), 0.75);
    for i in 0..face.vertex_count() {
        for c in 0..3 {
            colors[[merged.face_vertex_offset + i, c]] = face_colors[[i, c]];
        }
    }
    write_mesh_text(
        &save("merged_mesh.txt"),
        &merged.vertices,
        Some(&colors),
        &merged.triangles,
    )?;
    let merge_stage = MergeStage {
        vertices: merged.vertices.nrows(),
        triangles: merged.triangles.len(),
        stitch_triangles: merged.triangles.len() - merged.stitch_start,
    };

    let report = PipelineReport {
        seed: cfg.seed,
        rig: rig_summary,
        eval_samples: eval_set.len(),
        decode: decode_stage,
        localization,
        hand_input_channels,
        ik: ik_stage,
        translation: translation_stage,
        merge: merge_stage,
        metrics,
        artifacts: {
            let mut a = artifacts.clone();
            a.push("report.json".to_string());
            a
        },
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument {
        what: format!("report serialization failed: {e}"),
    })?;
    std::fs::write(cfg.out_dir.join("report.json"), json + "\n")?;
    Ok(report)
}
