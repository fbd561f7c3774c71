//! End-to-end tests of the `kinebody` binary: exit codes, error messages,
//! artifact formats, and cross-run determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinebody"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}; stderr: {}",
        stderr(out)
    );
}

fn synth_assets(dir: &Path) {
    let out = run(&["synth", "--seed", "7", "--out", dir.to_str().unwrap()]);
    assert_exit(&out, 0);
    for name in ["body.kba", "face.kba", "merge.kba"] {
        assert!(dir.join(name).exists(), "{name} missing after synth");
    }
}

fn non_comment_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| l.to_string())
        .collect()
}

#[test]
fn synth_fk_writes_all_joints() {
    let dir = tempfile::tempdir().unwrap();
    synth_assets(dir.path());
    let pose = dir.path().join("pose.txt");
    std::fs::write(&pose, "# test pose\n5 0.3 -0.2 0.1\nbeta 0.5 -0.5\nalpha 1.0\n").unwrap();
    let kp = dir.path().join("kp.txt");
    let out = run(&[
        "fk",
        "--rig",
        dir.path().join("body.kba").to_str().unwrap(),
        "--pose",
        pose.to_str().unwrap(),
        "--out",
        kp.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let lines = non_comment_lines(&kp);
    assert_eq!(lines.len(), 52, "one keypoint line per joint");
    for line in &lines {
        assert_eq!(line.split_whitespace().count(), 4, "id x y z: {line}");
    }
}

#[test]
fn eval_identical_files_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let body = "0 0 0 0\n1 0.5 0.25 -0.125\n2 -1 2 3\n3 0.1 0.2 0.3\n";
    let pred = dir.path().join("pred.txt");
    let gt = dir.path().join("gt.txt");
    std::fs::write(&pred, body).unwrap();
    std::fs::write(&gt, body).unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--mode",
        "pa",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mpjpe_mm"].as_f64().unwrap(), 0.0);
    assert_eq!(json["mpjpe_pa_mm"].as_f64().unwrap(), 0.0);
    assert_eq!(json["per_joint_mm"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_input_file_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    synth_assets(dir.path());
    let out = run(&[
        "fk",
        "--rig",
        dir.path().join("body.kba").to_str().unwrap(),
        "--pose",
        "no-such-pose.txt",
        "--out",
        dir.path().join("kp.txt").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(
        stderr(&out).contains("no-such-pose.txt"),
        "stderr must name the missing file: {}",
        stderr(&out)
    );
}

#[test]
fn malformed_pose_file_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    synth_assets(dir.path());
    let pose = dir.path().join("pose.txt");
    std::fs::write(&pose, "0 0 0 0\n1 0.1 broken 0.3\n").unwrap();
    let out = run(&[
        "fk",
        "--rig",
        dir.path().join("body.kba").to_str().unwrap(),
        "--pose",
        pose.to_str().unwrap(),
        "--out",
        dir.path().join("kp.txt").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(
        stderr(&out).contains(":2:"),
        "stderr must name line 2: {}",
        stderr(&out)
    );
}

#[test]
fn eval_mismatched_ids_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.txt");
    let gt = dir.path().join("gt.txt");
    std::fs::write(&pred, "0 0 0 0\n1 1 1 1\n").unwrap();
    std::fs::write(&gt, "0 0 0 0\n2 1 1 1\n").unwrap();
    let out = run(&[
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = run(&["definitely-not-a-command"]);
    assert_exit(&out, 2);
}

#[test]
fn solve_translation_exact_case_and_numerical_failure() {
    // fx = fy = 100, principal point at 0: parent ray (0,0,1), child ray
    // (1,0,1), equal depths. ||z a - z b|| = z, so z equals the bone length.
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("t.json");
    let out = run(&[
        "solve-translation",
        "--fx", "100", "--fy", "100", "--cx", "0", "--cy", "0",
        "--parent-u", "0", "--parent-v", "0",
        "--child-u", "100", "--child-v", "0",
        "--parent-depth", "0.5", "--child-depth", "0.5",
        "--length", "2.0",
        "--report", report.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!((json["z_p"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    let t = json["translation"].as_array().unwrap();
    assert!((t[2].as_f64().unwrap() - 2.0).abs() < 1e-12);

    // A bone far shorter than the depth gap between the endpoints has no
    // real solution: numerical failure, exit 3.
    let out = run(&[
        "solve-translation",
        "--fx", "100", "--fy", "100", "--cx", "0", "--cy", "0",
        "--parent-u", "0", "--parent-v", "0",
        "--child-u", "100", "--child-v", "0",
        "--parent-depth", "0.0", "--child-depth", "3.0",
        "--length", "0.1",
    ]);
    assert_exit(&out, 3);
}

#[test]
fn train_ik_then_ik_produces_a_pose() {
    let dir = tempfile::tempdir().unwrap();
    synth_assets(dir.path());
    let params = dir.path().join("ik.kba");
    let out = run(&[
        "train-ik",
        "--rig", dir.path().join("body.kba").to_str().unwrap(),
        "--n", "24",
        "--seed", "3",
        "--out", params.to_str().unwrap(),
        "--epochs", "1",
        "--batch-size", "8",
        "--hidden-layers", "1",
        "--hidden-width", "16",
    ]);
    assert_exit(&out, 0);
    assert!(params.exists());

    let kp = dir.path().join("kp.txt");
    let mut text = String::new();
    for j in 0..52 {
        text.push_str(&format!("{j} {} 0.1 -0.2\n", j as f64 * 0.01));
    }
    std::fs::write(&kp, text).unwrap();
    let posed = dir.path().join("ik_pose.txt");
    let out = run(&[
        "ik",
        "--params", params.to_str().unwrap(),
        "--keypoints", kp.to_str().unwrap(),
        "--out", posed.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let lines = non_comment_lines(&posed);
    let rotations = lines
        .iter()
        .filter(|l| l.split_whitespace().next().unwrap().parse::<usize>().is_ok())
        .count();
    assert_eq!(rotations, 52, "one rotation line per joint");
    assert!(lines.iter().any(|l| l.starts_with("beta ")), "shape line present");

    // Keypoint ids must cover exactly 0..J-1.
    std::fs::write(&kp, "0 0 0 0\n1 1 1 1\n").unwrap();
    let out = run(&[
        "ik",
        "--params", params.to_str().unwrap(),
        "--keypoints", kp.to_str().unwrap(),
        "--out", posed.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn pipeline_is_deterministic_and_artifacts_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(
        &cfg,
        "# small smoke configuration\n\
         body_vertices = 260\n\
         face_vertices = 24\n\
         eval_samples = 1\n\
         ik_train_samples = 48\n\
         ik_epochs = 1\n\
         ik_batch_size = 16\n\
         ik_hidden_layers = 1\n\
         ik_hidden_width = 16\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "pipeline",
            "--seed", "9",
            "--config", cfg.to_str().unwrap(),
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        reports.push(std::fs::read(out_dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "pipeline reports must be byte-identical");

    // The written artifacts feed back into the decode and ik subcommands.
    let arts = dir.path().join("a");
    let dec = dir.path().join("dec.txt");
    let out = run(&[
        "decode",
        "--maps", arts.join("maps_sample0.kba").to_str().unwrap(),
        "--out", dec.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(non_comment_lines(&dec).len(), 52);

    let pose = dir.path().join("pose_from_ik.txt");
    let out = run(&[
        "ik",
        "--params", arts.join("ik_params.kba").to_str().unwrap(),
        "--keypoints", arts.join("gt_keypoints_sample0.txt").to_str().unwrap(),
        "--out", pose.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    // FK on the recovered pose closes the loop.
    let kp2 = dir.path().join("kp2.txt");
    let out = run(&[
        "fk",
        "--rig", arts.join("body.kba").to_str().unwrap(),
        "--pose", pose.to_str().unwrap(),
        "--out", kp2.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let out = run(&[
        "eval",
        "--pred", kp2.to_str().unwrap(),
        "--gt", arts.join("gt_keypoints_sample0.txt").to_str().unwrap(),
        "--mode", "root",
    ]);
    assert_exit(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("mpjpe_mm "));
}

#[test]
fn pipeline_unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "not_a_key = 12\n").unwrap();
    let out = run(&[
        "pipeline",
        "--config", cfg.to_str().unwrap(),
        "--out", dir.path().join("x").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("not_a_key"), "{}", stderr(&out));
}

#[test]
fn face_mesh_has_expected_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth_assets(dir.path());
    let fp = dir.path().join("fp.txt");
    std::fs::write(&fp, "gamma 0.2 -0.1\nzeta 0.3\nepsilon -0.2 0.1\n").unwrap();
    let mesh = dir.path().join("mesh.txt");
    let out = run(&[
        "face",
        "--asset", dir.path().join("face.kba").to_str().unwrap(),
        "--params", fp.to_str().unwrap(),
        "--out", mesh.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let lines = non_comment_lines(&mesh);
    let v = lines.iter().filter(|l| l.starts_with("v ")).count();
    let f = lines.iter().filter(|l| l.starts_with("f ")).count();
    assert_eq!(v, 60, "synth default face vertex count");
    assert!(f > 0, "face mesh has triangles");
    // Colors present: v x y z r g b.
    assert_eq!(lines[0].split_whitespace().count(), 7);
}
