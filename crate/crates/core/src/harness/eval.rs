//! Evaluation: run baseline and policy agents over a fixed catalog subset and
//! write per-episode logs, an aggregate report (JSON + CSV) and a manifest.
//!
//! Every agent sees exactly the same scenes in the same order, and each
//! scene's sensor noise is a function of the scene and tick alone, so
//! differences between agents are attributable to the agents.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::Checkpoint;
use crate::catalog::{self, SceneCatalog};
use crate::error::Error;
use crate::rng::{derive_seed, Rng};

use super::episode::{run_episode, write_episode_lines, EpisodeAgent, FailureMode, ScoringEcho};
use super::train::{unix_ms_now, RunManifest, MANIFEST_SCHEMA_VERSION};
use super::HarnessConfig;

/// Report format version.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Stream tag for the random baseline's per-episode seeds.
const TAG_EVAL_RANDOM: u64 = 5;

// ─────────────────────────────────────────────────────────────────────────────
// Report types
// ─────────────────────────────────────────────────────────────────────────────

/// Per-episode line of the report (also the CSV row shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSummaryRow {
    pub agent: String,
    pub scene_id: String,
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub reward_sum: f64,
    pub deficit_sum: f64,
    pub collided: bool,
    pub failure_mode: FailureMode,
}

/// Aggregates for one agent across the whole subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSummary {
    pub episodes: usize,
    pub mean_lambda_c: f64,
    pub mean_lambda_p: f64,
    /// Mean of (lambda_c + lambda_p): the headline adversarial score.
    pub mean_violation: f64,
    pub mean_reward: f64,
    /// Total clearance deficit accumulated across the subset.
    pub deficit_sum: f64,
    pub collision_episodes: usize,
    /// Failure-mode counts over collision episodes only; the counts sum to
    /// `collision_episodes`.
    pub failure_modes: BTreeMap<String, usize>,
}

impl AgentSummary {
    /// Aggregates the rows belonging to one agent.
    pub fn from_rows(rows: &[EpisodeSummaryRow]) -> Self {
        let n = rows.len();
        let nf = n as f64;
        let mut s = AgentSummary {
            episodes: n,
            mean_lambda_c: 0.0,
            mean_lambda_p: 0.0,
            mean_violation: 0.0,
            mean_reward: 0.0,
            deficit_sum: 0.0,
            collision_episodes: 0,
            failure_modes: BTreeMap::new(),
        };
        for row in rows {
            s.mean_lambda_c += row.lambda_c;
            s.mean_lambda_p += row.lambda_p;
            s.mean_violation += row.lambda_c + row.lambda_p;
            s.mean_reward += row.reward_sum;
            s.deficit_sum += row.deficit_sum;
            if row.collided {
                s.collision_episodes += 1;
                *s.failure_modes
                    .entry(row.failure_mode.label().to_string())
                    .or_insert(0) += 1;
            }
        }
        if n > 0 {
            s.mean_lambda_c /= nf;
            s.mean_lambda_p /= nf;
            s.mean_violation /= nf;
            s.mean_reward /= nf;
        }
        s
    }
}

/// The whole evaluation result (`report.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub subset_size: usize,
    pub eval_seed: u64,
    /// Aggregates keyed by agent name ("clear", "random", "policy").
    pub agents: BTreeMap<String, AgentSummary>,
    /// Every episode, in (agent, subset order).
    pub episodes: Vec<EpisodeSummaryRow>,
}

impl EvalReport {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct VersionProbe {
            schema_version: u32,
        }
        let probe: VersionProbe =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        if probe.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                path: path.to_path_buf(),
                found: probe.schema_version,
                supported: REPORT_SCHEMA_VERSION,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
    }

    /// Renders the per-episode table as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "agent,scene_id,lambda_c,lambda_p,reward_sum,deficit_sum,collided,failure_mode\n",
        );
        for r in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.agent,
                r.scene_id,
                r.lambda_c,
                r.lambda_p,
                r.reward_sum,
                r.deficit_sum,
                r.collided,
                r.failure_mode.label()
            ));
        }
        out
    }
}

/// Paths and parsed report from a finished evaluation.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report_json_path: PathBuf,
    pub report_csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub episode_log_paths: BTreeMap<String, PathBuf>,
    pub report: EvalReport,
}

// ─────────────────────────────────────────────────────────────────────────────
// Evaluation
// ─────────────────────────────────────────────────────────────────────────────

/// Evaluates the clear and random baselines — plus the checkpoint's policy,
/// when one is given — on the same fixed subset of `catalog`.
///
/// Writes `episodes_<agent>.jsonl` per agent, `report.json`, `report.csv` and
/// `manifest.json` into `out_dir`.
pub fn evaluate(
    cfg: &HarnessConfig,
    catalog: &SceneCatalog,
    catalog_path: &Path,
    checkpoint_path: Option<&Path>,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<EvalOutcome, Error> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let catalog_sha256 = catalog::file_sha256_hex(catalog_path)?;

    let eval_seed = seed_override.unwrap_or(cfg.eval.seed);
    let subset = catalog::select_test_subset(catalog, cfg.eval.subset_size, eval_seed)?;
    let scoring = ScoringEcho::from_config(cfg);
    let random_stream = derive_seed(eval_seed, TAG_EVAL_RANDOM);

    let checkpoint = match checkpoint_path {
        Some(p) => Some((Checkpoint::load(p)?, catalog::file_sha256_hex(p)?)),
        None => None,
    };

    let mut agent_names = vec!["clear", "random"];
    if checkpoint.is_some() {
        agent_names.push("policy");
    }

    let mut episodes = Vec::with_capacity(agent_names.len() * subset.len());
    let mut episode_log_paths = BTreeMap::new();

    for name in &agent_names {
        let log_path = out_dir.join(format!("episodes_{name}.jsonl"));
        let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(file);

        for (i, scene) in subset.iter().enumerate() {
            let mut agent = match *name {
                "clear" => EpisodeAgent::Clear,
                "random" => EpisodeAgent::Random(Rng::new(derive_seed(random_stream, i as u64))),
                _ => EpisodeAgent::Mean {
                    params: &checkpoint.as_ref().expect("policy agent implies checkpoint").0.params,
                },
            };
            let record = run_episode(&mut agent, scene, cfg, None)?;
            write_episode_lines(&mut log, &record, name, scoring)
                .map_err(|e| Error::io(&log_path, e))?;
            episodes.push(EpisodeSummaryRow {
                agent: name.to_string(),
                scene_id: record.scene_id.clone(),
                lambda_c: record.totals.lambda_c,
                lambda_p: record.totals.lambda_p,
                reward_sum: record.totals.reward_sum,
                deficit_sum: record.totals.deficit_sum,
                collided: record.collided,
                failure_mode: record.failure_mode,
            });
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        episode_log_paths.insert(name.to_string(), log_path);
    }

    let mut agents = BTreeMap::new();
    for name in &agent_names {
        let rows: Vec<EpisodeSummaryRow> =
            episodes.iter().filter(|r| r.agent == *name).cloned().collect();
        agents.insert(name.to_string(), AgentSummary::from_rows(&rows));
    }

    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        subset_size: subset.len(),
        eval_seed,
        agents,
        episodes,
    };

    let report_json_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serialization is infallible");
    fs::write(&report_json_path, json).map_err(|e| Error::io(&report_json_path, e))?;

    let report_csv_path = out_dir.join("report.csv");
    fs::write(&report_csv_path, report.to_csv()).map_err(|e| Error::io(&report_csv_path, e))?;

    let mut outputs = BTreeMap::new();
    outputs.insert("report_json".to_string(), "report.json".to_string());
    outputs.insert("report_csv".to_string(), "report.csv".to_string());
    for name in &agent_names {
        outputs.insert(
            format!("episodes_{name}"),
            format!("episodes_{name}.jsonl"),
        );
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        kind: "eval".to_string(),
        status: "complete".to_string(),
        created_unix_ms: unix_ms_now(),
        master_seed: eval_seed,
        seed_env_override: seed_override.is_some(),
        catalog_path: catalog_path.display().to_string(),
        catalog_sha256,
        checkpoint_sha256: checkpoint.as_ref().map(|(_, sha)| sha.clone()),
        updates_done: None,
        steps_done: None,
        failure: None,
        outputs,
        config: cfg.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;

    Ok(EvalOutcome {
        report_json_path,
        report_csv_path,
        manifest_path,
        episode_log_paths,
        report,
    })
}

// ─────────────────────────────────────────────────────────────────────────────
