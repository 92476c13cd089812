//! End-to-end tests of the `edgegen` binary: exit codes, the full
//! gen-scenes → train → eval → replay → report pipeline, and the
//! `EDGEGEN_SEED` environment override.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

use edgegen::harness::{RunManifest, SEED_ENV_VAR};

/// Runs the binary with `args`, isolated from any ambient seed override.
fn edgegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgegen"))
        .args(args)
        .env_remove(SEED_ENV_VAR)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
}

/// A config small enough that train + eval finish in well under a second.
const TINY_CONFIG: &str = r#"{
  "ppo": {
    "hidden": [4],
    "episode_len": 16,
    "episodes_per_update": 2,
    "minibatch_size": 16,
    "epochs_per_update": 2,
    "total_steps": 64,
    "seed": 9
  },
  "eval": { "subset_size": 2, "seed": 1 },
  "generator": { "count": 6 }
}"#;

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(&path, TINY_CONFIG).expect("config should write");
    path.to_str().expect("utf-8 path").to_owned()
}

// ─── Exit codes ─────────────────────────────────────────────────────────────

#[test]
fn help_and_version_exit_zero() {
    let help = edgegen(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = stdout(&help);
    for sub in ["gen-scenes", "train", "eval", "replay", "report"] {
        assert!(text.contains(sub), "help should list `{sub}`:\n{text}");
    }

    let version = edgegen(&["--version"]);
    assert_eq!(version.status.code(), Some(0));
    assert!(stdout(&version).contains("edgegen"));
}

#[test]
fn usage_errors_exit_one() {
    let no_args = edgegen(&[]);
    assert_eq!(no_args.status.code(), Some(1), "missing subcommand");

    let bad_flag = edgegen(&["gen-scenes", "--bogus", "1"]);
    assert_eq!(bad_flag.status.code(), Some(1), "unknown flag");

    let bad_value = edgegen(&["gen-scenes", "--seed", "not-a-number", "--out", "x.json"]);
    assert_eq!(bad_value.status.code(), Some(1), "unparseable seed");
}

#[test]
fn runtime_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    let missing = missing.to_str().unwrap();

    let out = edgegen(&["train", "--config", missing, "--out", missing]);
    assert_eq!(out.status.code(), Some(2), "missing config file");
    assert!(
        stderr(&out).starts_with("error:"),
        "runtime failures report on stderr: {}",
        stderr(&out)
    );

    let out = edgegen(&["replay", "--episode", missing]);
    assert_eq!(out.status.code(), Some(2), "missing episode log");
}

// ─── gen-scenes ─────────────────────────────────────────────────────────────

#[test]
fn gen_scenes_is_deterministic_and_honors_count() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");

    let out = edgegen(&[
        "gen-scenes",
        "--count",
        "8",
        "--seed",
        "3",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_success(&out, "gen-scenes");
    assert!(stdout(&out).contains("wrote 8 scenes"), "{}", stdout(&out));

    let out = edgegen(&[
        "gen-scenes",
        "--count",
        "8",
        "--seed",
        "3",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_success(&out, "second gen-scenes");

    let bytes_a = fs::read(&a).unwrap();
    let bytes_b = fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must produce identical catalogs");

    let cat = edgegen::catalog::load(&a).expect("catalog should parse back");
    assert_eq!(cat.scenes.len(), 8);
}

// ─── Full pipeline ──────────────────────────────────────────────────────────

#[test]
fn pipeline_gen_train_eval_replay_report() {
    let dir = TempDir::new().unwrap();
    let config = write_tiny_config(dir.path());
    let catalog = dir.path().join("catalog.json");
    let catalog = catalog.to_str().unwrap();
    let train_dir = dir.path().join("train");
    let eval_dir = dir.path().join("eval");

    let out = edgegen(&[
        "gen-scenes",
        "--seed",
        "7",
        "--out",
        catalog,
        "--config",
        &config,
    ]);
    assert_success(&out, "gen-scenes");

    // Train: the config supplies no catalog_path, so --catalog is required.
    let out = edgegen(&["train", "--config", &config, "--out", train_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "train without a catalog fails");
    assert!(stderr(&out).contains("no catalog"), "{}", stderr(&out));

    let out = edgegen(&[
        "train",
        "--config",
        &config,
        "--catalog",
        catalog,
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "train");
    let text = stdout(&out);
    assert!(text.contains("update 1/2"), "progress lines:\n{text}");
    assert!(text.contains("training complete: 2 updates, 64 steps"), "{text}");
    let checkpoint = train_dir.join("checkpoint.json");
    assert!(checkpoint.is_file());
    assert!(train_dir.join("training_curve.csv").is_file());
    assert!(train_dir.join("manifest.json").is_file());

    let out = edgegen(&[
        "eval",
        "--config",
        &config,
        "--catalog",
        catalog,
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "eval");
    let text = stdout(&out);
    for agent in ["clear", "random", "policy"] {
        assert!(text.contains(&format!("{agent}: mean violation")), "{text}");
        let log = eval_dir.join(format!("episodes_{agent}.jsonl"));
        assert!(log.is_file(), "missing {}", log.display());

        let out = edgegen(&["replay", "--episode", log.to_str().unwrap()]);
        assert_success(&out, "replay");
        assert!(
            stdout(&out).contains("verified 2 episodes (32 rows)"),
            "{}",
            stdout(&out)
        );
    }

    let out = edgegen(&[
        "report",
        "--in",
        eval_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_success(&out, "report --format csv");
    let text = stdout(&out);
    assert!(
        text.starts_with("agent,scene_id,lambda_c,lambda_p,reward_sum,deficit_sum,collided,failure_mode"),
        "csv header:\n{text}"
    );
    // Header plus 3 agents x 2 episodes.
    assert_eq!(text.trim_end().lines().count(), 7, "{text}");

    let out = edgegen(&["report", "--in", eval_dir.to_str().unwrap()]);
    assert_success(&out, "report --format json");
    let value: serde_json::Value =
        serde_json::from_str(&stdout(&out)).expect("report output should be JSON");
    let agents = value["agents"].as_object().expect("agents object");
    assert_eq!(
        agents.keys().collect::<Vec<_>>(),
        ["clear", "policy", "random"],
        "agents are listed in sorted order"
    );
}

#[test]
fn report_rejects_tampered_aggregates() {
    let dir = TempDir::new().unwrap();
    let config = write_tiny_config(dir.path());
    let catalog = dir.path().join("catalog.json");
    let catalog = catalog.to_str().unwrap();
    let eval_dir = dir.path().join("eval");

    let out = edgegen(&["gen-scenes", "--seed", "7", "--out", catalog, "--config", &config]);
    assert_success(&out, "gen-scenes");
    let out = edgegen(&[
        "eval",
        "--config",
        &config,
        "--catalog",
        catalog,
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "eval");

    // Nudge one stored aggregate; report must notice the rows disagree.
    let report_path = eval_dir.join("report.json");
    let mut report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    report["agents"]["random"]["mean_reward"] = serde_json::json!(1234.5);
    fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap()).unwrap();

    let out = edgegen(&["report", "--in", eval_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("aggregates do not match"),
        "{}",
        stderr(&out)
    );
}

// ─── EDGEGEN_SEED override ──────────────────────────────────────────────────

#[test]
fn seed_env_var_overrides_and_is_recorded() {
    let dir = TempDir::new().unwrap();
    let config = write_tiny_config(dir.path());
    let catalog = dir.path().join("catalog.json");
    let catalog = catalog.to_str().unwrap();
    let train_dir = dir.path().join("train");

    let out = edgegen(&["gen-scenes", "--seed", "7", "--out", catalog, "--config", &config]);
    assert_success(&out, "gen-scenes");

    let out = Command::new(env!("CARGO_BIN_EXE_edgegen"))
        .args([
            "train",
            "--config",
            &config,
            "--catalog",
            catalog,
            "--out",
            train_dir.to_str().unwrap(),
        ])
        .env(SEED_ENV_VAR, "123")
        .output()
        .expect("binary should spawn");
    assert_success(&out, "train with seed override");

    let manifest = RunManifest::load(&train_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.master_seed, 123, "env seed wins over config seed 9");
    assert!(manifest.seed_env_override);

    let out = Command::new(env!("CARGO_BIN_EXE_edgegen"))
        .args(["train", "--config", &config, "--catalog", catalog, "--out", "unused"])
        .env(SEED_ENV_VAR, "not-a-seed")
        .output()
        .expect("binary should spawn");
    assert_eq!(out.status.code(), Some(2), "malformed seed is a runtime error");
    assert!(stderr(&out).contains(SEED_ENV_VAR), "{}", stderr(&out));
}

#[test]
fn eval_without_checkpoint_reports_baselines_only() {
    let dir = TempDir::new().unwrap();
    let config = write_tiny_config(dir.path());
    let catalog = dir.path().join("catalog.json");
    let catalog = catalog.to_str().unwrap();
    let eval_dir = dir.path().join("eval");

    let out = edgegen(&["gen-scenes", "--seed", "7", "--out", catalog, "--config", &config]);
    assert_success(&out, "gen-scenes");
    let out = edgegen(&[
        "eval",
        "--config",
        &config,
        "--catalog",
        catalog,
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "eval");

    let text = stdout(&out);
    assert!(text.contains("clear: mean violation"));
    assert!(text.contains("random: mean violation"));
    assert!(!text.contains("policy:"), "no policy without a checkpoint:\n{text}");
    assert!(!eval_dir.join("episodes_policy.jsonl").exists());
}
