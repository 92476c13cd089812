//! The closed loop: agent perturbs weather, world advances, perception senses,
//! controller reacts, rulebook scores.
//!
//! Ordering within one tick (tick `t` -> `t+1`):
//!
//! 1. featurize the world as of tick `t` (using the detection from tick `t`),
//! 2. the agent picks a knob perturbation, which is applied immediately,
//! 3. the world steps under the control signal computed at tick `t` — i.e.
//!    actuation lags sensing by exactly one tick,
//! 4. the sensor runs on the new world (per-tick noise stream derived from the
//!    scene's noise seed and the tick index, so no agent can desynchronize it),
//! 5. the controller computes the pedal command for the *next* step,
//! 6. the rulebook scores the new state and the reward is recorded.
//!
//! An episode always runs its full length; after a collision the world is
//! inert, which keeps tick streams aligned across agents and scenes.

use serde::{Deserialize, Serialize};

use crate::agent::{
    act_clear, act_random, featurize, sample_action, PolicyParams, RolloutBuffer, ACTION_DIM,
};
use crate::error::Error;
use crate::perception::{self, DetectionResult};
use crate::rng::{derive_seed, Rng};
use crate::rulebook::{self, RuleState};
use crate::sim::{self, ControlSignal, Scene, WorldState, KNOB_COUNT};

use super::{ClassifierConfig, HarnessConfig};

// ─────────────────────────────────────────────────────────────────────────────
// Records
// ─────────────────────────────────────────────────────────────────────────────

/// One tick of an episode, as written to episode logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRow {
    pub tick: u32,
    /// Knob values after this tick's perturbation, in fixed order
    /// (fog, precipitation, deposits, sun altitude, sun azimuth).
    pub knobs: [f64; KNOB_COUNT],
    pub gap: f64,
    pub ego_speed: f64,
    pub lead_speed: f64,
    /// Visibility of the post-perturbation scene.
    pub visibility: f64,
    pub detected: bool,
    pub iou: f64,
    /// Collision-rule severity this tick (impact speed on the impact tick).
    pub alpha_c: f64,
    /// Proximity-rule severity this tick.
    pub alpha_p: f64,
    pub reward: f64,
}

/// Per-episode accumulated scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeTotals {
    /// Total collision-rule violation (sum of alpha_c).
    pub lambda_c: f64,
    /// Total proximity-rule violation (sum of alpha_p).
    pub lambda_p: f64,
    pub reward_sum: f64,
    /// Summed shortfall of the actual gap below the assured-clearance
    /// distance, a graded "how close to unrecoverable" measure.
    pub deficit_sum: f64,
}

/// How the perception stack failed in a collision episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// No collision occurred.
    None,
    /// The lead was never detected before contact.
    NonDetection,
    /// Detection dropped out for a sustained run shortly before contact.
    Intermittent,
    /// First detection came inside the ego's own stopping distance.
    Delayed,
}

impl FailureMode {
    /// Stable lowercase label (matches the serialized form).
    pub fn label(self) -> &'static str {
        match self {
            FailureMode::None => "none",
            FailureMode::NonDetection => "non_detection",
            FailureMode::Intermittent => "intermittent",
            FailureMode::Delayed => "delayed",
        }
    }
}

/// Everything `run_episode` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene_id: String,
    pub rows: Vec<TickRow>,
    pub totals: EpisodeTotals,
    pub collided: bool,
    pub failure_mode: FailureMode,
}

/// Constants echoed into episode logs so a replay can re-derive every number
/// in the file without access to the original config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringEcho {
    pub collision_weight: f64,
    pub proximity_weight: f64,
    pub proximity_threshold: f64,
    pub rss_decel: f64,
    pub decel_max: f64,
    pub window_ticks: u32,
    pub min_dropout_ticks: u32,
}

impl ScoringEcho {
    pub fn from_config(cfg: &HarnessConfig) -> Self {
        ScoringEcho {
            collision_weight: cfg.rulebook.weights.collision,
            proximity_weight: cfg.rulebook.weights.proximity,
            proximity_threshold: cfg.rulebook.proximity_threshold,
            rss_decel: cfg.rulebook.rss_decel,
            decel_max: cfg.sim.decel_max,
            window_ticks: cfg.eval.classifier.window_ticks,
            min_dropout_ticks: cfg.eval.classifier.min_dropout_ticks,
        }
    }
}

/// Trailer line of an episode log: totals plus enough context to verify them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSummary {
    pub scene_id: String,
    pub agent: String,
    pub episode_len: usize,
    pub totals: EpisodeTotals,
    pub collided: bool,
    pub failure_mode: FailureMode,
    pub scoring: ScoringEcho,
}

impl EpisodeSummary {
    pub fn new(record: &EpisodeRecord, agent: &str, scoring: ScoringEcho) -> Self {
        EpisodeSummary {
            scene_id: record.scene_id.clone(),
            agent: agent.to_string(),
            episode_len: record.rows.len(),
            totals: record.totals,
            collided: record.collided,
            failure_mode: record.failure_mode,
            scoring,
        }
    }
}

/// One line of an episode log file (JSON Lines, tagged by `type`).
///
/// Strictness lives on the payload structs: with an internal tag, unknown
/// keys on a line are rejected by `TickRow`/`EpisodeSummary` themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EpisodeLine {
    Row(TickRow),
    Summary(EpisodeSummary),
}

/// Writes an episode as JSON Lines: every tick row, then the summary trailer.
pub fn write_episode_lines(
    w: &mut impl std::io::Write,
    record: &EpisodeRecord,
    agent: &str,
    scoring: ScoringEcho,
) -> std::io::Result<()> {
    for row in &record.rows {
        let line = serde_json::to_string(&EpisodeLine::Row(row.clone()))
            .expect("tick row serialization is infallible");
        writeln!(w, "{line}")?;
    }
    let summary = EpisodeSummary::new(record, agent, scoring);
    let line = serde_json::to_string(&EpisodeLine::Summary(summary))
        .expect("summary serialization is infallible");
    writeln!(w, "{line}")
}

// ─────────────────────────────────────────────────────────────────────────────
// Agents
// ─────────────────────────────────────────────────────────────────────────────

/// Who drives the weather knobs.
#[derive(Debug)]
pub enum EpisodeAgent<'a> {
    /// Never perturbs anything: the clear-weather baseline.
    Clear,
    /// Uniform perturbations in [-1, 1] per knob: the random baseline.
    Random(Rng),
    /// Stochastic policy (used during training; records log-probs/values).
    Sample { params: &'a PolicyParams, rng: Rng },
    /// Deterministic policy acting at the Gaussian mean (used by eval).
    Mean { params: &'a PolicyParams },
}

impl EpisodeAgent<'_> {
    /// Returns (raw action, clamped action, trace from the policy head).
    ///
    /// The trace `(log_prob, value)` is `Some` only for `Sample`, which is the
    /// only variant whose transitions feed a PPO update.
    fn act(
        &mut self,
        feature: &crate::agent::FeatureState,
    ) -> ([f64; ACTION_DIM], [f64; ACTION_DIM], Option<(f64, f64)>) {
        match self {
            EpisodeAgent::Clear => {
                let a = act_clear();
                (a, a, None)
            }
            EpisodeAgent::Random(rng) => {
                let a = act_random(rng);
                (a, a, None)
            }
            EpisodeAgent::Sample { params, rng } => {
                let (mean, log_std, value) = params.policy_forward(feature);
                let s = sample_action(&mean, &log_std, rng);
                (s.raw, s.action, Some((s.log_prob, value)))
            }
            EpisodeAgent::Mean { params } => {
                let (mean, _, _) = params.policy_forward(feature);
                let mut action = [0.0; ACTION_DIM];
                for d in 0..ACTION_DIM {
                    action[d] = mean[d].clamp(-1.0, 1.0);
                }
                (mean, action, None)
            }
        }
    }

    /// Label used in logs and reports.
    pub fn label(&self) -> &'static str {
        match self {
            EpisodeAgent::Clear => "clear",
            EpisodeAgent::Random(_) => "random",
            EpisodeAgent::Sample { .. } => "policy_sample",
            EpisodeAgent::Mean { .. } => "policy",
        }
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Episode loop
// ─────────────────────────────────────────────────────────────────────────────

/// Runs one full episode of `cfg.ppo.episode_len` ticks.
///
/// When `rollout` is given, each transition is appended to it (only the
/// `Sample` agent produces the log-prob/value trace a PPO update needs, so
/// pairing `rollout` with other agents is rejected). Knobs listed in
/// `cfg.frozen_knobs` have their action component zeroed before the
/// perturbation is applied; the raw action recorded for PPO is left untouched
/// so stored log-densities stay consistent with the stored draws.
pub fn run_episode(
    agent: &mut EpisodeAgent,
    scene: &Scene,
    cfg: &HarnessConfig,
    mut rollout: Option<&mut RolloutBuffer>,
) -> Result<EpisodeRecord, Error> {
    scene.validate()?;
    let episode_len = cfg.ppo.episode_len;
    let mask = cfg.frozen_mask();
    if rollout.is_some() && !matches!(agent, EpisodeAgent::Sample { .. }) {
        return Err(Error::InvalidArgument(
            "rollout capture requires the sampling policy agent".into(),
        ));
    }

    let mut world = WorldState::init(scene, &cfg.sim);
    let mut control = ControlSignal::coast();
    let mut det = DetectionResult::miss();
    let mut rows = Vec::with_capacity(episode_len);
    let mut totals = EpisodeTotals::default();

    for step_index in 0..episode_len {
        // 1. Observe.
        let vis_before = perception::visibility(&world.knobs, &cfg.perception);
        let feature = featurize(&world, &det, vis_before, &cfg.sim);
        if feature.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("feature vector, scene {} tick {}", scene.scene_id, world.tick),
            });
        }

        // 2. Perturb the weather.
        let (raw, mut action, trace) = agent.act(&feature);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("policy action, scene {} tick {}", scene.scene_id, world.tick),
            });
        }
        for d in 0..KNOB_COUNT {
            if mask[d] {
                action[d] = 0.0;
            }
        }
        world.knobs = sim::apply_action(&world.knobs, action);

        // 3. Advance physics under last tick's pedal command.
        world = sim::step(&world, &control, scene, &cfg.sim);
        let gap = world.gap(&cfg.sim);

        // 4. Sense. The noise stream is keyed by (scene seed, tick), so the
        //    number of draws consumed elsewhere can never shift it.
        let mut tick_rng = Rng::new(derive_seed(scene.noise_seed, u64::from(world.tick)));
        det = perception::sense(gap, &world.knobs, &cfg.perception, &mut tick_rng);

        // 5. Decide next tick's pedals.
        control = perception::behavior_control(&det, world.ego_speed, &cfg.controller);

        // 6. Score.
        let rule_state = RuleState {
            ego_speed: world.ego_speed,
            gap,
            collision_this_tick: world.collided,
        };
        let (alpha_c, alpha_p) =
            rulebook::step_violation(&rule_state, cfg.rulebook.proximity_threshold);
        let reward = rulebook::step_reward(det.iou, alpha_c, alpha_p, &cfg.rulebook.weights);
        if !reward.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reward, scene {} tick {}", scene.scene_id, world.tick),
            });
        }
        let d_min =
            rulebook::rss_min_distance(world.ego_speed, world.lead_speed, cfg.rulebook.rss_decel)?;

        totals.lambda_c += alpha_c;
        totals.lambda_p += alpha_p;
        totals.reward_sum += reward;
        totals.deficit_sum += rulebook::mfd_deficit(gap, d_min);

        rows.push(TickRow {
            tick: world.tick,
            knobs: world.knobs.as_array(),
            gap,
            ego_speed: world.ego_speed,
            lead_speed: world.lead_speed,
            visibility: perception::visibility(&world.knobs, &cfg.perception),
            detected: det.detected,
            iou: det.iou,
            alpha_c,
            alpha_p,
            reward,
        });

        if let Some(buf) = rollout.as_deref_mut() {
            // `act` returned a trace for every Sample step; enforced above.
            let (log_prob, value) = trace.expect("sample agent always produces a trace");
            buf.push(feature, raw, log_prob, reward, value, step_index + 1 == episode_len);
        }
    }

    let failure_mode = classify_failure(&rows, &cfg.eval.classifier, cfg.sim.decel_max);
    Ok(EpisodeRecord {
        scene_id: scene.scene_id.clone(),
        rows,
        totals,
        collided: world.collided,
        failure_mode,
    })
}

// ─────────────────────────────────────────────────────────────────────────────
// Failure taxonomy
// ─────────────────────────────────────────────────────────────────────────────

/// Classifies a collision episode by its pre-contact detection history.
///
/// The impact tick is the first row with `alpha_c > 0` (contact always
/// happens at positive ego speed, so the impact row's severity is positive).
/// Precedence:
///
/// 1. no detection at all before contact        -> `NonDetection`,
/// 2. a run of at least `min_dropout_ticks` undetected ticks after the first
///    detection, inside the last `window_ticks` before contact -> `Intermittent`,
/// 3. first detection already inside the ego's stopping distance
///    (`v^2 / (2 * decel_max)` at that tick)    -> `Delayed`,
/// 4. anything else (crashed despite timely, mostly-steady detection), which
///    in practice means short repeated dropouts -> `Intermittent`.
pub fn classify_failure(rows: &[TickRow], cfg: &ClassifierConfig, decel_max: f64) -> FailureMode {
    let Some(contact) = rows.iter().position(|r| r.alpha_c > 0.0) else {
        return FailureMode::None;
    };
    let Some(first_det) = rows[..contact].iter().position(|r| r.detected) else {
        return FailureMode::NonDetection;
    };

    let start = contact.saturating_sub(cfg.window_ticks as usize);
    let mut run = 0u32;
    for (k, row) in rows.iter().enumerate().take(contact).skip(start) {
        if k <= first_det {
            continue;
        }
        if row.detected {
            run = 0;
        } else {
            run += 1;
            if run >= cfg.min_dropout_ticks {
                return FailureMode::Intermittent;
            }
        }
    }

    let first = &rows[first_det];
    let stopping = first.ego_speed * first.ego_speed / (2.0 * decel_max);
    if first.gap < stopping {
        return FailureMode::Delayed;
    }
    FailureMode::Intermittent
}

// ─────────────────────────────────────────────────────────────────────────────
