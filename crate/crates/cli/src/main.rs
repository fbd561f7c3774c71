//! `kinebody` — command-line surface for the capture math library.
//!
//! Exit codes: 0 success, 2 invalid input (bad flags, malformed files,
//! schema violations), 3 numerical failure (degenerate geometry,
//! divergence, no admissible solution).

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use kinebody_core::assets::{generate_synthetic_rig, load_body_rig, load_face_asset};
use kinebody_core::body::forward_kinematics;
use kinebody_core::error::Error;
use kinebody_core::face::{face_geometry, face_reflectance, sh_shade, vertex_normals};
use kinebody_core::geometry::{
    solve_global_translation, Camera, MpjpeMode, TranslationProblem,
};
use kinebody_core::ik::{
    generate_ik_training_set, iknet_forward, train_iknet, IKNetParams, IKTrainConfig, Optimizer,
};
use kinebody_core::maps::{decode_keypoints, MapStack};
use kinebody_core::pipeline::{
    evaluate_files, parse_face_params, parse_keypoints_file, parse_pipeline_config,
    parse_pose_file, run_synthetic_pipeline, write_decoded_file, write_keypoints_file,
    write_mesh_text, write_pose_file, PipelineConfig, PoseFile,
};

#[derive(Parser)]
#[command(
    name = "kinebody",
    version,
    about = "Synthetic full-body capture math: rigs, maps, IK, translation, metrics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    /// Root-relative MPJPE.
    Root,
    /// Procrustes-aligned MPJPE.
    Pa,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic body rig, face asset, and merge spec.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for body.kba / face.kba / merge.kba.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 420)]
        body_vertices: usize,
        #[arg(long, default_value_t = 60)]
        face_vertices: usize,
    },
    /// Pose a rig and write the posed joint positions.
    Fk {
        #[arg(long)]
        rig: PathBuf,
        /// Pose text: `joint_id wx wy wz` lines (axis-angle), optional
        /// `root_translation`, `beta`, `alpha` lines.
        #[arg(long)]
        pose: PathBuf,
        /// Output keypoints text (`id x y z` per joint).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the face model and write a colored triangle mesh.
    Face {
        #[arg(long)]
        asset: PathBuf,
        /// Parameter text: `zeta ...`, `epsilon ...`, `gamma ...`,
        /// optional `mu` (27 values, 3x9 row-major illumination).
        #[arg(long)]
        params: PathBuf,
        /// Output mesh text (`v x y z r g b` and 1-based `f i j k`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode keypoint/delta/location maps into keypoints.
    Decode {
        #[arg(long)]
        maps: PathBuf,
        /// Output text: `id u v x y z conf` per joint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the IK network on synthetic samples.
    TrainIk {
        #[arg(long)]
        rig: PathBuf,
        /// Number of training samples.
        #[arg(long, default_value_t = 20000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output parameter container (.kba).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Per-epoch multiplicative learning-rate decay in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        lr_decay: f64,
        #[arg(long, default_value_t = 4)]
        hidden_layers: usize,
        #[arg(long, default_value_t = 256)]
        hidden_width: usize,
        #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
        optimizer: OptimizerKind,
        /// Gaussian keypoint noise in meters (0 disables).
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        /// Lower bound of uniform global-scale augmentation.
        #[arg(long)]
        scale_lo: Option<f64>,
        /// Upper bound of uniform global-scale augmentation.
        #[arg(long)]
        scale_hi: Option<f64>,
        /// Per-axis std-dev (radians) of body-joint pose sampling.
        #[arg(long, default_value_t = std::f64::consts::PI / 5.0)]
        sigma_body: f64,
        /// Std-dev (radians) of finger hinge sampling.
        #[arg(long, default_value_t = std::f64::consts::PI / 6.0)]
        sigma_finger: f64,
        /// Per-joint probability that a joint is perturbed in a sample.
        #[arg(long, default_value_t = 1.0)]
        active_prob: f64,
    },
    /// Run the trained IK network on a keypoint file.
    Ik {
        #[arg(long)]
        params: PathBuf,
        /// Keypoints text (`id x y z`), one line per joint, ids 0..J-1.
        /// Coordinates are made root-relative by subtracting joint 0.
        #[arg(long)]
        keypoints: PathBuf,
        /// Output pose text (axis-angle + beta + alpha).
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the absolute parent depth / global translation of a bone.
    SolveTranslation {
        #[arg(long)]
        fx: f64,
        #[arg(long)]
        fy: f64,
        #[arg(long)]
        cx: f64,
        #[arg(long)]
        cy: f64,
        #[arg(long, default_value_t = 0.0)]
        skew: f64,
        /// Parent keypoint pixel position.
        #[arg(long)]
        parent_u: f64,
        #[arg(long)]
        parent_v: f64,
        /// Child keypoint pixel position.
        #[arg(long)]
        child_u: f64,
        #[arg(long)]
        child_v: f64,
        /// Root-relative parent depth (meters).
        #[arg(long)]
        parent_depth: f64,
        /// Root-relative child depth (meters).
        #[arg(long)]
        child_depth: f64,
        /// Bone length (meters).
        #[arg(long)]
        length: f64,
        /// Optional JSON output path (solution prints to stdout regardless).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare two keypoint files and report MPJPE metrics.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalMode::Root)]
        mode: EvalMode,
        /// Optional JSON report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the full synthetic end-to-end pipeline.
    Pipeline {
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `kinebody_out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plain key-value config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_input_error() { 2 } else { 3 });
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument {
        what: format!("serialization failed: {e}"),
    })
}

/// Zero-pad a parameter vector up to the model's dimension; reject longer.
fn pad_params(name: &str, mut values: Vec<f64>, dim: usize) -> Result<Vec<f64>, Error> {
    if values.len() > dim {
        return Err(Error::DimensionMismatch {
            what: name.into(),
            expected: format!("at most {dim} values"),
            actual: values.len().to_string(),
        });
    }
    values.resize(dim, 0.0);
    Ok(values)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Synth { seed, out, body_vertices, face_vertices } => {
            let (rig, face, merge) = generate_synthetic_rig(seed, body_vertices, face_vertices)?;
            std::fs::create_dir_all(&out)?;
            rig.save(&out.join("body.kba"))?;
            face.save(&out.join("face.kba"))?;
            merge.save(&out.join("merge.kba"))?;
            println!(
                "body.kba: {} vertices, {} joints",
                rig.vertex_count(),
                rig.joint_count()
            );
            for line in rig.to_kba().manifest_lines() {
                println!("  {line}");
            }
            println!("face.kba: {} vertices, {} triangles", face.vertex_count(), face.triangles.len());
            println!("merge.kba: boundary {} vertices", merge.body_boundary_loop.len());
            Ok(())
        }
        Cmd::Fk { rig, pose, out } => {
            let rig = load_body_rig(&rig)?;
            let pose_file = parse_pose_file(&pose)?;
            let p = pose_file.to_pose(&rig)?;
            let beta_full;
            let beta = if pose_file.beta.is_empty() {
                None
            } else {
                beta_full =
                    pad_params("beta", pose_file.beta.clone(), rig.shape_basis.shape()[0])?;
                Some(beta_full.as_slice())
            };
            let posed = forward_kinematics(&rig, &p, beta)?;
            let lines: Vec<(usize, nalgebra::Vector3<f64>)> =
                posed.posed_joints.iter().enumerate().map(|(j, v)| (j, *v)).collect();
            write_keypoints_file(&out, &lines)?;
            println!("wrote {} posed joints to {}", lines.len(), out.display());
            Ok(())
        }
        Cmd::Face { asset, params, out } => {
            let face = load_face_asset(&asset)?;
            let fp = parse_face_params(&params)?;
            let zeta = pad_params("zeta", fp.zeta, face.shape_basis.shape()[0])?;
            let epsilon = pad_params("epsilon", fp.epsilon, face.expression_basis.shape()[0])?;
            let gamma = pad_params("gamma", fp.gamma, face.reflectance_basis.shape()[0])?;
            let vertices = face_geometry(&face, &zeta, &epsilon)?;
            let reflectance = face_reflectance(&face, &gamma)?;
            let colors = match &fp.mu {
                Some(mu) => {
                    let normals = vertex_normals(&vertices, &face.triangles)?;
                    sh_shade(&reflectance, &normals, mu)?
                }
                None => reflectance,
            };
            write_mesh_text(&out, &vertices, Some(&colors), &face.triangles)?;
            println!(
                "wrote {} vertices / {} triangles to {}",
                vertices.nrows(),
                face.triangles.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Decode { maps, out } => {
            let stack = MapStack::load(&maps)?;
            let decoded = decode_keypoints(&stack);
            write_decoded_file(&out, &decoded)?;
            let valid = decoded.valid.iter().filter(|v| **v).count();
            println!(
                "decoded {} joints ({} valid) to {}",
                decoded.coords.len(),
                valid,
                out.display()
            );
            Ok(())
        }
        Cmd::TrainIk {
            rig,
            n,
            seed,
            out,
            epochs,
            batch_size,
            learning_rate,
            lr_decay,
            hidden_layers,
            hidden_width,
            optimizer,
            noise_std,
            scale_lo,
            scale_hi,
            sigma_body,
            sigma_finger,
            active_prob,
        } => {
            let rig = load_body_rig(&rig)?;
            let scale_augment = match (scale_lo, scale_hi) {
                (Some(lo), Some(hi)) => Some((lo, hi)),
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidArgument {
                        what: "--scale-lo and --scale-hi must be given together".into(),
                    })
                }
            };
            let cfg = IKTrainConfig {
                seed,
                epochs,
                batch_size,
                learning_rate,
                lr_decay,
                hidden_layers,
                hidden_width,
                noise_std,
                scale_augment,
                sample_sigma_body: sigma_body,
                sample_sigma_finger: sigma_finger,
                sample_active_prob: active_prob,
                optimizer: match optimizer {
                    OptimizerKind::Sgd => Optimizer::Sgd { momentum: 0.9 },
                    OptimizerKind::Adam => Optimizer::Adam {
                        beta1: 0.9,
                        beta2: 0.999,
                        epsilon: 1e-8,
                    },
                },
                ..IKTrainConfig::default()
            };
            let dataset = generate_ik_training_set(&rig, n, seed, &cfg)?;
            let (params, log) = train_iknet(&rig, &dataset, &cfg)?;
            for (i, loss) in log.epoch_losses.iter().enumerate() {
                println!("epoch {i} loss {loss}");
            }
            params.save(&out)?;
            println!("wrote parameters to {}", out.display());
            Ok(())
        }
        Cmd::Ik { params, keypoints, out } => {
            let params = IKNetParams::load(&params)?;
            let kps = parse_keypoints_file(&keypoints)?;
            if kps.len() != params.joint_count {
                return Err(Error::DimensionMismatch {
                    what: "keypoint file".into(),
                    expected: format!("{} joints", params.joint_count),
                    actual: format!("{} joints", kps.len()),
                });
            }
            let mut sorted = kps.clone();
            sorted.sort_by_key(|(id, _)| *id);
            for (expect, (id, _)) in sorted.iter().enumerate() {
                if *id != expect {
                    return Err(Error::InvalidArgument {
                        what: format!(
                            "keypoint ids must be exactly 0..{} (got id {id} at rank {expect})",
                            params.joint_count - 1
                        ),
                    });
                }
            }
            let root = sorted[0].1;
            let input: Vec<nalgebra::Vector3<f64>> =
                sorted.iter().map(|(_, v)| v - root).collect();
            let pred = iknet_forward(&params, &input)?;
            let pose = PoseFile {
                rotations: pred
                    .rotations
                    .iter()
                    .enumerate()
                    .map(|(j, r)| (j, kinebody_core::math::matrix_to_axis_angle(r)))
                    .collect(),
                root_translation: nalgebra::Vector3::zeros(),
                beta: pred.beta.clone(),
                alpha: pred.alpha,
            };
            write_pose_file(&out, &pose)?;
            println!(
                "wrote pose ({} joints, alpha {}) to {}",
                pred.rotations.len(),
                pred.alpha,
                out.display()
            );
            Ok(())
        }
        Cmd::SolveTranslation {
            fx,
            fy,
            cx,
            cy,
            skew,
            parent_u,
            parent_v,
            child_u,
            child_v,
            parent_depth,
            child_depth,
            length,
            report,
        } => {
            let problem = TranslationProblem {
                parent_2d: (parent_u, parent_v),
                child_2d: (child_u, child_v),
                parent_depth,
                child_depth,
                bone_length: length,
                camera: Camera::new(fx, fy, cx, cy, skew)?,
            };
            let solution = solve_global_translation(&problem)?;
            let json = to_json(&solution)?;
            println!("{json}");
            if let Some(path) = report {
                std::fs::write(path, json + "\n")?;
            }
            Ok(())
        }
        Cmd::Eval { pred, gt, mode, report } => {
            let m = match mode {
                EvalMode::Root => MpjpeMode::RootRelative,
                EvalMode::Pa => MpjpeMode::Procrustes,
            };
            let (full, primary) = evaluate_files(&pred, &gt, m)?;
            match mode {
                EvalMode::Root => println!("mpjpe_mm {primary}"),
                EvalMode::Pa => println!("mpjpe_pa_mm {primary}"),
            }
            if let Some(path) = report {
                std::fs::write(path, to_json(&full)? + "\n")?;
            }
            Ok(())
        }
        Cmd::Pipeline { seed, out, config } => {
            let mut cfg = match config {
                Some(path) => parse_pipeline_config(&path)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let report = run_synthetic_pipeline(&cfg)?;
            println!("seed {}", report.seed);
            println!("decode mpjpe_root_mm {}", report.decode.mpjpe_root_mm);
            println!("ik held_out_error_m {}", report.ik.held_out_error_m);
            println!(
                "translation max_depth_error_m {}",
                report.translation.max_depth_error_m
            );
            println!(
                "merge vertices {} triangles {}",
                report.merge.vertices, report.merge.triangles
            );
            println!("report {}", cfg.out_dir.join("report.json").display());
            Ok(())
        }
    }
}
