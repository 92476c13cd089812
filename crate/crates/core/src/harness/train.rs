//! The training run: collect on-policy episodes over the scene catalog,
//! update the policy, and leave behind a checkpoint, a training curve and a
//! run manifest.
//!
//! Every random choice flows from one master seed through tagged derivations
//! (network init, scene picks, action sampling, minibatch shuffling), and the
//! scene/action streams are keyed by the absolute episode index, so a resumed
//! run sees exactly the episode sequence the original run would have seen.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::agent::{Adam, Checkpoint, PolicyParams, RolloutBuffer, TrainStats};
use crate::catalog::{self, SceneCatalog};
use crate::error::Error;
use crate::rng::{derive_seed, Rng};

use super::episode::{run_episode, EpisodeAgent};
use super::HarnessConfig;

/// Environment variable that overrides the configured seed (`train` overrides
/// `ppo.seed`, `eval` overrides `eval.seed`). The CLI reads it and threads the
/// value through; manifests record whether an override was in effect.
pub const SEED_ENV_VAR: &str = "EDGEGEN_SEED";

/// Manifest format version.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

// Tags for the master seed's derived streams.
const TAG_INIT: u64 = 1;
const TAG_SCENES: u64 = 2;
const TAG_ACTIONS: u64 = 3;
const TAG_SHUFFLE: u64 = 4;

// ─────────────────────────────────────────────────────────────────────────────
// Run manifest
// ─────────────────────────────────────────────────────────────────────────────

/// Provenance record written next to every run's outputs.
///
/// `created_unix_ms` is the only field (and the only byte in any artifact)
/// allowed to differ between two runs of the same command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    /// "train" or "eval".
    pub kind: String,
    /// "complete" or "failed".
    pub status: String,
    /// Wall-clock creation time, milliseconds since the Unix epoch.
    pub created_unix_ms: u64,
    /// The seed actually used for this run.
    pub master_seed: u64,
    /// True when the seed came from the environment override rather than the
    /// config file.
    pub seed_env_override: bool,
    pub catalog_path: String,
    pub catalog_sha256: String,
    /// Digest of the checkpoint consumed by an eval run, when one was given.
    pub checkpoint_sha256: Option<String>,
    pub updates_done: Option<usize>,
    pub steps_done: Option<usize>,
    /// Diagnostic for a failed run.
    pub failure: Option<String>,
    /// Output files, relative to the manifest's directory.
    pub outputs: BTreeMap<String, String>,
    /// Full echo of the configuration in effect.
    pub config: HarnessConfig,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let json =
            serde_json::to_string_pretty(self).expect("manifest serialization is infallible");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct VersionProbe {
            schema_version: u32,
        }
        let probe: VersionProbe =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        if probe.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                path: path.to_path_buf(),
                found: probe.schema_version,
                supported: MANIFEST_SCHEMA_VERSION,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
    }
}

pub(crate) fn unix_ms_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

// ─────────────────────────────────────────────────────────────────────────────
// Training
// ─────────────────────────────────────────────────────────────────────────────

/// Progress report handed to the caller after each completed update.
#[derive(Debug, Clone)]
pub struct UpdateProgress {
    /// Updates completed so far (1-based after this one).
    pub update: usize,
    /// Total updates the run will perform.
    pub total_updates: usize,
    pub steps_done: usize,
    pub mean_episode_reward: f64,
    pub mean_lambda_c: f64,
    pub mean_lambda_p: f64,
    pub stats: TrainStats,
}

/// Paths and counters from a finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub curve_path: PathBuf,
    pub manifest_path: PathBuf,
    pub updates_done: usize,
    pub steps_done: usize,
    pub final_stats: Option<TrainStats>,
}

/// Header of the training-curve CSV.
const CURVE_HEADER: &str = "update,steps_done,mean_episode_reward,mean_lambda_c,mean_lambda_p,\
policy_loss,value_loss,entropy,approx_kl,clip_fraction";

/// Runs (or resumes) a training run into `out_dir`.
///
/// Writes `checkpoint.json`, `training_curve.csv` and `manifest.json`. On a
/// non-finite abort the last good parameters are still checkpointed and the
/// manifest records the failure before the error is returned.
pub fn train(
    cfg: &HarnessConfig,
    catalog: &SceneCatalog,
    catalog_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    seed_override: Option<u64>,
    mut progress: impl FnMut(&UpdateProgress),
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    if catalog.scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-empty catalog".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let catalog_sha256 = catalog::file_sha256_hex(catalog_path)?;

    let seed = seed_override.unwrap_or(cfg.ppo.seed);
    let scene_stream = derive_seed(seed, TAG_SCENES);
    let action_stream = derive_seed(seed, TAG_ACTIONS);
    let shuffle_stream = derive_seed(seed, TAG_SHUFFLE);

    // Fresh parameters, or the resumed run's. Optimizer moments are not part
    // of a checkpoint, so a resume restarts Adam's averages; the parameter
    // trajectory after a resume is therefore not bit-identical to an
    // uninterrupted run, while the episode stream is.
    let (mut params, start_update, mut steps_done) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.ppo.hidden != cfg.ppo.hidden {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint hidden layers {:?} do not match config {:?}",
                    ckpt.ppo.hidden, cfg.ppo.hidden
                )));
            }
            (ckpt.params, ckpt.updates_done, ckpt.steps_done)
        }
        None => {
            let mut init_rng = Rng::new(derive_seed(seed, TAG_INIT));
            (PolicyParams::init(&cfg.ppo.hidden, &mut init_rng), 0, 0)
        }
    };

    let n_params = params.to_flat().len();
    let mut opt = Adam::new(cfg.ppo.learn_rate, n_params);
    let total_updates = cfg.ppo.update_count();
    let episodes_per_update = cfg.ppo.episodes_per_update;

    let checkpoint_path = out_dir.join("checkpoint.json");
    let curve_path = out_dir.join("training_curve.csv");
    let manifest_path = out_dir.join("manifest.json");

    // Append to the curve on resume, start it fresh otherwise.
    let mut curve = if start_update > 0 && curve_path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&curve_path)
            .map_err(|e| Error::io(&curve_path, e))?
    } else {
        let mut f = fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
        writeln!(f, "{CURVE_HEADER}").map_err(|e| Error::io(&curve_path, e))?;
        f
    };

    let manifest = |status: &str, updates: usize, steps: usize, failure: Option<String>| {
        let mut outputs = BTreeMap::new();
        outputs.insert("checkpoint".to_string(), "checkpoint.json".to_string());
        outputs.insert("curve".to_string(), "training_curve.csv".to_string());
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            kind: "train".to_string(),
            status: status.to_string(),
            created_unix_ms: unix_ms_now(),
            master_seed: seed,
            seed_env_override: seed_override.is_some(),
            catalog_path: catalog_path.display().to_string(),
            catalog_sha256: catalog_sha256.clone(),
            checkpoint_sha256: None,
            updates_done: Some(updates),
            steps_done: Some(steps),
            failure,
            outputs,
            config: cfg.clone(),
        }
    };

    let mut buffer = RolloutBuffer::with_capacity(cfg.ppo.steps_per_update());
    let mut final_stats = None;
    let mut updates_done = start_update;

    for update in start_update..total_updates {
        buffer.clear();
        let mut reward_sum = 0.0;
        let mut lambda_c_sum = 0.0;
        let mut lambda_p_sum = 0.0;

        for e in 0..episodes_per_update {
            let episode_index = (update * episodes_per_update + e) as u64;
            let scene_idx = Rng::new(derive_seed(scene_stream, episode_index))
                .below(catalog.scenes.len() as u64) as usize;
            let scene = &catalog.scenes[scene_idx];
            let mut agent = EpisodeAgent::Sample {
                params: &params,
                rng: Rng::new(derive_seed(action_stream, episode_index)),
            };
            let record = run_episode(&mut agent, scene, cfg, Some(&mut buffer))?;
            reward_sum += record.totals.reward_sum;
            lambda_c_sum += record.totals.lambda_c;
            lambda_p_sum += record.totals.lambda_p;
        }
        steps_done += buffer.len();

        let mut shuffle_rng = Rng::new(derive_seed(shuffle_stream, update as u64));
        let stats = match crate::agent::ppo_update(&mut params, &mut opt, &buffer, &cfg.ppo, &mut shuffle_rng)
        {
            Ok(s) => s,
            Err(err) => {
                // Leave a usable trail: last good parameters + the diagnosis.
                Checkpoint::new(updates_done, steps_done, cfg.ppo.clone(), params.clone())
                    .save(&checkpoint_path)?;
                manifest("failed", updates_done, steps_done, Some(err.to_string()))
                    .save(&manifest_path)?;
                return Err(err);
            }
        };
        updates_done = update + 1;

        let n_ep = episodes_per_update as f64;
        let report = UpdateProgress {
            update: updates_done,
            total_updates,
            steps_done,
            mean_episode_reward: reward_sum / n_ep,
            mean_lambda_c: lambda_c_sum / n_ep,
            mean_lambda_p: lambda_p_sum / n_ep,
            stats,
        };
        writeln!(
            curve,
            "{},{},{},{},{},{},{},{},{},{}",
            report.update,
            report.steps_done,
            report.mean_episode_reward,
            report.mean_lambda_c,
            report.mean_lambda_p,
            stats.policy_loss,
            stats.value_loss,
            stats.entropy,
            stats.approx_kl,
            stats.clip_fraction
        )
        .map_err(|e| Error::io(&curve_path, e))?;
        curve.flush().map_err(|e| Error::io(&curve_path, e))?;

        progress(&report);
        final_stats = Some(stats);
    }

    Checkpoint::new(updates_done, steps_done, cfg.ppo.clone(), params).save(&checkpoint_path)?;
    manifest("complete", updates_done, steps_done, None).save(&manifest_path)?;

    Ok(TrainOutcome {
        checkpoint_path,
        curve_path,
        manifest_path,
        updates_done,
        steps_done,
        final_stats,
    })
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::GeneratorConfig;

    /// Tiny-but-real training setup: 2 updates of 2x16-step episodes.
    fn tiny_config() -> HarnessConfig {
        let mut cfg = HarnessConfig::default();
        cfg.ppo.hidden = vec![4];
        cfg.ppo.episode_len = 16;
        cfg.ppo.episodes_per_update = 2;
        cfg.ppo.minibatch_size = 16;
        cfg.ppo.epochs_per_update = 2;
        cfg.ppo.total_steps = 64;
        cfg.ppo.seed = 5;
        cfg
    }

    fn tiny_catalog(dir: &Path) -> (SceneCatalog, PathBuf) {
        let gen = GeneratorConfig {
            count: 5,
            ..GeneratorConfig::default()
        };
        let cat = catalog::generate(&gen, 7).unwrap();
        let path = dir.join("catalog.json");
        catalog::save(&cat, &path).unwrap();
        (cat, path)
    }

    #[test]
    fn train_produces_checkpoint_curve_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (cat, cat_path) = tiny_catalog(dir.path());
        let cfg = tiny_config();
        let out = dir.path().join("run");
        let mut reports = 0;
        let outcome =
            train(&cfg, &cat, &cat_path, &out, None, None, |_| reports += 1).unwrap();
        assert_eq!(outcome.updates_done, 2);
        assert_eq!(outcome.steps_done, 64);
        assert_eq!(reports, 2);

        let ckpt = Checkpoint::load(&outcome.checkpoint_path).unwrap();
        assert_eq!(ckpt.updates_done, 2);
        assert_eq!(ckpt.steps_done, 64);

        let curve = std::fs::read_to_string(&outcome.curve_path).unwrap();
        let lines: Vec<_> = curve.lines().collect();
        assert_eq!(lines.len(), 3, "header + one row per update");
        assert!(lines[0].starts_with("update,steps_done,mean_episode_reward"));
        assert!(lines[1].starts_with("1,32,"));
        assert!(lines[2].starts_with("2,64,"));

        let manifest = RunManifest::load(&outcome.manifest_path).unwrap();
        assert_eq!(manifest.kind, "train");
        assert_eq!(manifest.status, "complete");
        assert_eq!(manifest.master_seed, 5);
        assert!(!manifest.seed_env_override);
        assert_eq!(manifest.config, cfg);
        assert_eq!(manifest.catalog_sha256.len(), 64);
    }

    #[test]
    fn training_runs_are_bit_reproducible_outside_the_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let (cat, cat_path) = tiny_catalog(dir.path());
        let cfg = tiny_config();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        train(&cfg, &cat, &cat_path, &out_a, None, None, |_| {}).unwrap();
        train(&cfg, &cat, &cat_path, &out_b, None, None, |_| {}).unwrap();

        let ckpt_a = std::fs::read(out_a.join("checkpoint.json")).unwrap();
        let ckpt_b = std::fs::read(out_b.join("checkpoint.json")).unwrap();
        assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical");
        let curve_a = std::fs::read(out_a.join("training_curve.csv")).unwrap();
        let curve_b = std::fs::read(out_b.join("training_curve.csv")).unwrap();
        assert_eq!(curve_a, curve_b, "curves must be byte-identical");

        let mut man_a = RunManifest::load(&out_a.join("manifest.json")).unwrap();
        let man_b = RunManifest::load(&out_b.join("manifest.json")).unwrap();
        man_a.created_unix_ms = man_b.created_unix_ms;
        assert_eq!(man_a, man_b, "manifests must agree outside the timestamp");
    }

    #[test]
    fn seed_override_changes_the_run_and_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let (cat, cat_path) = tiny_catalog(dir.path());
        let cfg = tiny_config();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        train(&cfg, &cat, &cat_path, &out_a, None, None, |_| {}).unwrap();
        train(&cfg, &cat, &cat_path, &out_b, None, Some(9), |_| {}).unwrap();

        let man_b = RunManifest::load(&out_b.join("manifest.json")).unwrap();
        assert_eq!(man_b.master_seed, 9);
        assert!(man_b.seed_env_override);
        assert_ne!(
            std::fs::read(out_a.join("checkpoint.json")).unwrap(),
            std::fs::read(out_b.join("checkpoint.json")).unwrap(),
            "a different seed must produce a different checkpoint"
        );
    }

    #[test]
    fn resume_continues_update_and_step_counters() {
        let dir = tempfile::tempdir().unwrap();
        let (cat, cat_path) = tiny_catalog(dir.path());
        let mut cfg = tiny_config();
        let out = dir.path().join("run");
        train(&cfg, &cat, &cat_path, &out, None, None, |_| {}).unwrap();

        // Double the budget and resume from the finished checkpoint.
        cfg.ppo.total_steps = 128;
        let ckpt_path = out.join("checkpoint.json");
        let outcome = train(&cfg, &cat, &cat_path, &out, Some(&ckpt_path), None, |_| {}).unwrap();
        assert_eq!(outcome.updates_done, 4);
        assert_eq!(outcome.steps_done, 128);

        let curve = std::fs::read_to_string(outcome.curve_path).unwrap();
        assert_eq!(curve.lines().count(), 5, "header + 4 update rows after resume");
        assert!(curve.lines().last().unwrap().starts_with("4,128,"));
    }

    #[test]
    fn resume_rejects_mismatched_network_shape() {
        let dir = tempfile::tempdir().unwrap();
        let (cat, cat_path) = tiny_catalog(dir.path());
        let cfg = tiny_config();
        let out = dir.path().join("run");
        train(&cfg, &cat, &cat_path, &out, None, None, |_| {}).unwrap();

        let mut wider = cfg.clone();
        wider.ppo.hidden = vec![8];
        let err = train(
            &wider,
            &cat,
            &cat_path,
            &out,
            Some(&out.join("checkpoint.json")),
            None,
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
