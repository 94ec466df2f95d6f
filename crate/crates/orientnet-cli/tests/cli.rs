//! End-to-end runs of the `orientnet` binary: the full
//! synth/build/train/eval/predict/correct/explain workflow, exit codes,
//! dry-run behavior, and config-versus-flag precedence.

use orientnet::datapipe::{synth_scene, OrientationLabel};
use orientnet::imageio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_orientnet"));
    // Deterministic mode end to end, exercising the env interface.
    cmd.env("ORIENTNET_THREADS", "0");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Workspace shared by the tests: synthetic datasets plus one trained
/// checkpoint produced entirely through the CLI.
struct Workspace {
    dir: tempfile::TempDir,
    model: PathBuf,
    train_manifest: PathBuf,
    val_manifest: PathBuf,
    upright_pool: PathBuf,
    fixture_upright: PathBuf,
}

fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scenes_train = dir.path().join("scenes_train");
        let scenes_val = dir.path().join("scenes_val");
        let up_train = dir.path().join("up_train.jsonl");
        let up_val = dir.path().join("up_val.jsonl");
        let train_manifest = dir.path().join("train.jsonl");
        let val_manifest = dir.path().join("val.jsonl");
        let model = dir.path().join("model.ckpt");

        for (count, seed, scenes, manifest) in [
            (50usize, 1u64, &scenes_train, &up_train),
            (16, 2, &scenes_val, &up_val),
        ] {
            let out = run(&[
                "dataset",
                "synth",
                "--count",
                &count.to_string(),
                "--side",
                "32",
                "--seed",
                &seed.to_string(),
                "--out-dir",
                scenes.to_str().unwrap(),
                "--manifest",
                manifest.to_str().unwrap(),
            ]);
            assert_code(&out, 0);
        }
        for (src, dst) in [(&up_train, &train_manifest), (&up_val, &val_manifest)] {
            let out = run(&[
                "dataset",
                "build",
                "--manifest",
                src.to_str().unwrap(),
                "--expand",
                "--out",
                dst.to_str().unwrap(),
            ]);
            assert_code(&out, 0);
        }
        let out = run(&[
            "train",
            "--net",
            "desk",
            "--input-side",
            "32",
            "--train",
            train_manifest.to_str().unwrap(),
            "--val",
            val_manifest.to_str().unwrap(),
            "--epochs",
            "4",
            "--seed",
            "3",
            "--out",
            model.to_str().unwrap(),
            "--history",
            dir.path().join("history.csv").to_str().unwrap(),
        ]);
        assert_code(&out, 0);

        let fixture_upright = scenes_val.join("scene00000.ppm");
        assert!(fixture_upright.exists());
        Workspace {
            dir,
            model,
            train_manifest,
            val_manifest,
            upright_pool: up_train,
            fixture_upright,
        }
    })
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let out = run(&["frobnicate"]);
    assert_code(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("orientnet"));
}

#[test]
fn missing_model_file_exits_two() {
    let ws = workspace();
    let out = run(&[
        "predict",
        "--model",
        "/nonexistent/model.ckpt",
        ws.fixture_upright.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn divergent_training_exits_three() {
    let ws = workspace();
    let out = run(&[
        "train",
        "--net",
        "desk",
        "--input-side",
        "32",
        "--train",
        ws.train_manifest.to_str().unwrap(),
        "--val",
        ws.val_manifest.to_str().unwrap(),
        "--epochs",
        "2",
        "--lr",
        "1e9",
        "--out",
        ws.dir.path().join("diverged.ckpt").to_str().unwrap(),
    ]);
    assert_code(&out, 3);
}

#[test]
fn eval_reports_high_accuracy_as_json() {
    let ws = workspace();
    let out = run(&[
        "eval",
        "--model",
        ws.model.to_str().unwrap(),
        "--manifest",
        ws.val_manifest.to_str().unwrap(),
        "--protocol",
        "bal4",
        "--json",
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    assert_eq!(report["n_samples"].as_u64(), Some(64));
}

#[test]
fn predict_emits_theta_zero_for_upright_fixture() {
    let ws = workspace();
    let out = run(&[
        "predict",
        "--model",
        ws.model.to_str().unwrap(),
        ws.fixture_upright.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["theta"].as_u64(), Some(0), "{json}");
    let probs: Vec<f64> = json["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let sum: f64 = probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-5, "probabilities sum {sum}");
}

fn write_rotated_fixture(dir: &Path, theta: u8, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img, _) = synth_scene(&mut rng, 32, OrientationLabel::new(theta).unwrap());
    let path = dir.join(format!("rotated_{theta}_{seed}.ppm"));
    imageio::write_image(&path, &img, imageio::ImageFormat::Ppm, None).unwrap();
    path
}

#[test]
fn correct_dry_run_writes_nothing() {
    let ws = workspace();
    let sub = ws.dir.path().join("dryrun");
    std::fs::create_dir_all(&sub).unwrap();
    let fixture = write_rotated_fixture(&sub, 1, 900);
    let before: Vec<_> = std::fs::read_dir(&sub).unwrap().collect();
    let out = run(&[
        "correct",
        "--model",
        ws.model.to_str().unwrap(),
        "--dry-run",
        fixture.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("dry-run"));
    let after: Vec<_> = std::fs::read_dir(&sub).unwrap().collect();
    assert_eq!(before.len(), after.len(), "dry-run must not write files");
}

#[test]
fn corrected_image_classifies_upright() {
    let ws = workspace();
    let sub = ws.dir.path().join("correct_out");
    let fixture = write_rotated_fixture(ws.dir.path(), 1, 901);
    let out = run(&[
        "correct",
        "--model",
        ws.model.to_str().unwrap(),
        "--out-dir",
        sub.to_str().unwrap(),
        fixture.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let corrected = sub.join(fixture.file_name().unwrap());
    assert!(corrected.exists());
    let out = run(&[
        "predict",
        "--model",
        ws.model.to_str().unwrap(),
        corrected.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["theta"].as_u64(), Some(0), "{json}");
}

#[test]
fn batch_correct_continues_past_failures() {
    let ws = workspace();
    let sub = ws.dir.path().join("batch_out");
    let good = write_rotated_fixture(ws.dir.path(), 2, 902);
    let out = run(&[
        "correct",
        "--model",
        ws.model.to_str().unwrap(),
        "--out-dir",
        sub.to_str().unwrap(),
        good.to_str().unwrap(),
        "/nonexistent/missing.ppm",
    ]);
    // One failure: summary exit code reflects it, but the good file is
    // still corrected.
    assert_code(&out, 2);
    assert!(sub.join(good.file_name().unwrap()).exists());
    assert!(stdout(&out).contains("corrected 1 of 2"));
}

#[test]
fn compare_renders_requested_protocol_rows() {
    let ws = workspace();
    let csv_path = ws.dir.path().join("grid.csv");
    let out = run(&[
        "compare",
        "--model",
        ws.model.to_str().unwrap(),
        "--manifest",
        ws.upright_pool.to_str().unwrap(),
        "--protocols",
        "bal4,orig3",
        "--seed",
        "5",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let table = stdout(&out);
    assert!(table.contains("bal4") && table.contains("orig3"), "{table}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn explain_writes_overlay_and_map() {
    let ws = workspace();
    let overlay = ws.dir.path().join("overlay.ppm");
    let map = ws.dir.path().join("map.csv");
    let out = run(&[
        "explain",
        "--model",
        ws.model.to_str().unwrap(),
        ws.fixture_upright.to_str().unwrap(),
        "--out",
        overlay.to_str().unwrap(),
        "--alpha",
        "0.6",
        "--map-csv",
        map.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let decoded = imageio::decode(&overlay).unwrap();
    assert_eq!(decoded.pixels.shape(), &[3, 32, 32]);
    // Input 32 -> conv(s2) 16 -> pool 8 -> conv 8 -> pool 4: the last
    // conv emits 4x4, so the raw map grid has four rows.
    let grid = std::fs::read_to_string(&map).unwrap();
    assert_eq!(grid.lines().count(), 4, "last-conv map rows: {grid}");
}

#[test]
fn explicit_flags_override_config_file() {
    let ws = workspace();
    let dir = ws.dir.path().join("precedence");
    std::fs::create_dir_all(&dir).unwrap();
    // Config pins seed 5; the flag overrides it with seed 9.
    let mut cfg = orientnet::trainer::TrainConfig::desk_default();
    cfg.max_epochs = 2;
    cfg.seed = 5;
    let cfg_path = dir.join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();

    let train_with = |out_name: &str, extra: &[&str]| -> Vec<u8> {
        let out_path = dir.join(out_name);
        let mut args = vec![
            "train",
            "--net",
            "desk",
            "--input-side",
            "32",
            "--train",
            ws.train_manifest.to_str().unwrap(),
            "--val",
            ws.val_manifest.to_str().unwrap(),
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
        ];
        let out_str = out_path.to_str().unwrap().to_string();
        args.push(Box::leak(out_str.into_boxed_str()));
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_code(&out, 0);
        std::fs::read(&out_path).unwrap()
    };

    let flag_nine = train_with("flag9.ckpt", &["--seed", "9"]);
    let plain_nine = {
        let out_path = dir.join("plain9.ckpt");
        let out = run(&[
            "train",
            "--net",
            "desk",
            "--input-side",
            "32",
            "--train",
            ws.train_manifest.to_str().unwrap(),
            "--val",
            ws.val_manifest.to_str().unwrap(),
            "--epochs",
            "2",
            "--seed",
            "9",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
        std::fs::read(&out_path).unwrap()
    };
    let config_five = train_with("cfg5.ckpt", &[]);

    assert_eq!(
        flag_nine, plain_nine,
        "--seed flag must override the config file"
    );
    assert_ne!(
        flag_nine, config_five,
        "config-only run must keep the config's seed"
    );
}

#[test]
fn train_dry_run_writes_nothing() {
    let ws = workspace();
    let out_path = ws.dir.path().join("never.ckpt");
    let out = run(&[
        "train",
        "--net",
        "desk",
        "--input-side",
        "32",
        "--train",
        ws.train_manifest.to_str().unwrap(),
        "--val",
        ws.val_manifest.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        out_path.to_str().unwrap(),
        "--dry-run",
    ]);
    assert_code(&out, 0);
    assert!(!out_path.exists());
    assert!(stdout(&out).contains("dry-run"));
}

#[test]
fn dataset_synth_dry_run_writes_nothing() {
    let ws = workspace();
    let out_dir = ws.dir.path().join("never_scenes");
    let manifest = ws.dir.path().join("never.jsonl");
    let out = run(&[
        "dataset",
        "synth",
        "--count",
        "3",
        "--side",
        "32",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--dry-run",
    ]);
    assert_code(&out, 0);
    assert!(!out_dir.exists());
    assert!(!manifest.exists());
}

#[test]
fn dataset_build_samples_protocol_proportions() {
    let ws = workspace();
    let out_path = ws.dir.path().join("orig3.jsonl");
    let out = run(&[
        "dataset",
        "build",
        "--manifest",
        ws.upright_pool.to_str().unwrap(),
        "--protocol",
        "orig3",
        "--seed",
        "7",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let manifest = orientnet::datapipe::load_manifest(&out_path).unwrap();
    assert_eq!(manifest.len(), 50);
    assert_eq!(manifest.class_counts()[2], 0, "orig3 has no 180s");
}
