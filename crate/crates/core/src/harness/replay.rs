//! Replay verification: re-derives every derivable number in an episode log
//! and errors on the first disagreement.
//!
//! The summary trailer of each episode echoes the scoring constants, so a log
//! file is self-contained: no config is needed to audit it. Checks per
//! episode:
//!
//! - ticks run 1..=len with no gaps,
//! - rewards match the reward formula applied to the stored iou/severities,
//! - proximity severities match the stored gap and speed,
//! - collision severity appears on at most one row and equals that row's speed,
//! - totals match the column sums, clearance deficits included,
//! - the collided flag and the failure-mode label match the rows.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::rulebook::{self, RewardWeights};

use super::episode::{classify_failure, EpisodeLine, EpisodeSummary, TickRow};
use super::ClassifierConfig;

/// What a successful replay saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplaySummary {
    pub episodes: usize,
    pub rows: usize,
}

/// Absolute tolerance for re-derived sums. Well below any physically
/// meaningful difference; in practice the recomputation is bit-identical.
const TOL: f64 = 1e-9;

fn mismatch(path: &Path, detail: String) -> Error {
    Error::ReplayMismatch {
        path: path.to_path_buf(),
        detail,
    }
}

/// Verifies one episode's rows against its summary trailer.
fn verify_episode(path: &Path, rows: &[TickRow], summary: &EpisodeSummary) -> Result<(), Error> {
    let id = &summary.scene_id;
    if rows.len() != summary.episode_len {
        return Err(mismatch(
            path,
            format!(
                "episode `{id}`: {} rows but summary says {}",
                rows.len(),
                summary.episode_len
            ),
        ));
    }

    let s = &summary.scoring;
    let weights = RewardWeights {
        collision: s.collision_weight,
        proximity: s.proximity_weight,
    };
    let mut lambda_c = 0.0;
    let mut lambda_p = 0.0;
    let mut reward_sum = 0.0;
    let mut deficit_sum = 0.0;
    let mut impact_rows = 0usize;

    for (i, row) in rows.iter().enumerate() {
        if row.tick as usize != i + 1 {
            return Err(mismatch(
                path,
                format!("episode `{id}`: row {i} has tick {}, expected {}", row.tick, i + 1),
            ));
        }

        let expect_alpha_p = if row.gap < s.proximity_threshold {
            row.ego_speed
        } else {
            0.0
        };
        if row.alpha_p != expect_alpha_p {
            return Err(mismatch(
                path,
                format!(
                    "episode `{id}` tick {}: alpha_p {} does not follow from gap {} and speed {}",
                    row.tick, row.alpha_p, row.gap, row.ego_speed
                ),
            ));
        }

        if row.alpha_c != 0.0 {
            impact_rows += 1;
            if row.alpha_c != row.ego_speed {
                return Err(mismatch(
                    path,
                    format!(
                        "episode `{id}` tick {}: alpha_c {} is not the impact speed {}",
                        row.tick, row.alpha_c, row.ego_speed
                    ),
                ));
            }
        }

        let reward = rulebook::step_reward(row.iou, row.alpha_c, row.alpha_p, &weights);
        if (reward - row.reward).abs() > TOL {
            return Err(mismatch(
                path,
                format!(
                    "episode `{id}` tick {}: stored reward {} but the formula gives {}",
                    row.tick, row.reward, reward
                ),
            ));
        }

        let d_min = rulebook::rss_min_distance(row.ego_speed, row.lead_speed, s.rss_decel)?;
        deficit_sum += rulebook::mfd_deficit(row.gap, d_min);
        lambda_c += row.alpha_c;
        lambda_p += row.alpha_p;
        reward_sum += row.reward;
    }

    if impact_rows > 1 {
        return Err(mismatch(
            path,
            format!("episode `{id}`: {impact_rows} impact rows; a collided world is inert"),
        ));
    }

    let t = &summary.totals;
    for (label, got, expect) in [
        ("lambda_c", t.lambda_c, lambda_c),
        ("lambda_p", t.lambda_p, lambda_p),
        ("reward_sum", t.reward_sum, reward_sum),
        ("deficit_sum", t.deficit_sum, deficit_sum),
    ] {
        if (got - expect).abs() > TOL {
            return Err(mismatch(
                path,
                format!("episode `{id}`: summary {label} {got} but rows sum to {expect}"),
            ));
        }
    }

    let collided = impact_rows > 0;
    if summary.collided != collided {
        return Err(mismatch(
            path,
            format!(
                "episode `{id}`: summary says collided={} but the rows say {}",
                summary.collided, collided
            ),
        ));
    }

    let classifier = ClassifierConfig {
        window_ticks: s.window_ticks,
        min_dropout_ticks: s.min_dropout_ticks,
    };
    let mode = classify_failure(rows, &classifier, s.decel_max);
    if summary.failure_mode != mode {
        return Err(mismatch(
            path,
            format!(
                "episode `{id}`: summary failure mode `{}` but rows classify as `{}`",
                summary.failure_mode.label(),
                mode.label()
            ),
        ));
    }
    Ok(())
}

/// Replays an episode log file, verifying every episode in it.
pub fn replay(path: &Path) -> Result<ReplaySummary, Error> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut pending: Vec<TickRow> = Vec::new();
    let mut episodes = 0usize;
    let mut rows_total = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EpisodeLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: PathBuf::from(path),
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        match parsed {
            EpisodeLine::Row(row) => pending.push(row),
            EpisodeLine::Summary(summary) => {
                verify_episode(path, &pending, &summary)?;
                episodes += 1;
                rows_total += pending.len();
                pending.clear();
            }
        }
    }

    if !pending.is_empty() {
        return Err(mismatch(
            path,
            format!("file ends mid-episode with {} unsummarized rows", pending.len()),
        ));
    }
    if episodes == 0 {
        return Err(mismatch(path, "no episodes found".to_string()));
    }
    Ok(ReplaySummary {
        episodes,
        rows: rows_total,
    })
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::GeneratorConfig;
    use crate::harness::episode::{run_episode, write_episode_lines, EpisodeAgent, ScoringEcho};
    use crate::harness::HarnessConfig;
    use crate::rng::{derive_seed, Rng};
    use crate::{catalog, sim::Scene};

    fn write_log(dir: &Path, scenes: &[Scene], cfg: &HarnessConfig) -> PathBuf {
        let path = dir.join("episodes.jsonl");
        let mut buf = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            let mut agent = EpisodeAgent::Random(Rng::new(derive_seed(3, i as u64)));
            let record = run_episode(&mut agent, scene, cfg, None).unwrap();
            write_episode_lines(&mut buf, &record, "random", ScoringEcho::from_config(cfg))
                .unwrap();
        }
        std::fs::write(&path, buf).unwrap();
        path
    }

    fn fixture(dir: &Path) -> (PathBuf, HarnessConfig) {
        let mut cfg = HarnessConfig::default();
        cfg.ppo.episode_len = 32;
        let gen = GeneratorConfig {
            count: 3,
            ..GeneratorConfig::default()
        };
        let cat = catalog::generate(&gen, 21).unwrap();
        let path = write_log(dir, &cat.scenes, &cfg);
        (path, cfg)
    }

    #[test]
    fn faithful_logs_replay_clean() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = fixture(dir.path());
        let summary = replay(&path).unwrap();
        assert_eq!(summary.episodes, 3);
        assert_eq!(summary.rows, 3 * 32);
    }

    /// Parses, mutates and rewrites one line of a log.
    fn tamper(path: &Path, line_index: usize, f: impl FnOnce(&mut EpisodeLine)) {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut parsed: EpisodeLine = serde_json::from_str(&lines[line_index]).unwrap();
        f(&mut parsed);
        lines[line_index] = serde_json::to_string(&parsed).unwrap();
        std::fs::write(path, lines.join("\n") + "\n").unwrap();
    }

    #[test]
    fn tampered_reward_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = fixture(dir.path());
        tamper(&path, 4, |line| {
            let EpisodeLine::Row(row) = line else { panic!("expected a row") };
            row.reward += 0.5;
        });
        let err = replay(&path).unwrap_err();
        assert!(matches!(err, Error::ReplayMismatch { .. }), "{err}");
        assert!(err.to_string().contains("reward"), "{err}");
    }

    #[test]
    fn tampered_totals_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = fixture(dir.path());
        tamper(&path, 32, |line| {
            let EpisodeLine::Summary(summary) = line else { panic!("expected summary at line 33") };
            summary.totals.reward_sum += 1.0;
        });
        let err = replay(&path).unwrap_err();
        assert!(err.to_string().contains("reward_sum"), "{err}");
    }

    #[test]
    fn tampered_failure_mode_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = fixture(dir.path());
        tamper(&path, 32, |line| {
            let EpisodeLine::Summary(summary) = line else { panic!("expected summary at line 33") };
            summary.failure_mode = match summary.failure_mode {
                super::super::FailureMode::None => super::super::FailureMode::Delayed,
                _ => super::super::FailureMode::None,
            };
        });
        let err = replay(&path).unwrap_err();
        assert!(err.to_string().contains("failure mode"), "{err}");
    }

    #[test]
    fn truncated_file_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = fixture(dir.path());
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // Drop the final summary line: the last episode is left unsummarized.
        std::fs::write(&path, lines[..lines.len() - 1].join("\n")).unwrap();
        let err = replay(&path).unwrap_err();
        assert!(err.to_string().contains("mid-episode"), "{err}");
    }

    #[test]
    fn garbage_line_reports_its_location() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = fixture(dir.path());
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"type\":\"row\",\"tick\":oops}\n");
        std::fs::write(&path, text).unwrap();
        match replay(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3 * 33 + 1),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let err = replay(&path).unwrap_err();
        assert!(err.to_string().contains("no episodes"), "{err}");
    }
}
