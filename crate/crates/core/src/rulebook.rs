//! Safety rulebook: per-tick violation scores, the reward that trains the
//! adversary, and the responsibility-sensitive minimum-distance check.
//!
//! A *realization* is the per-tick trace of the quantities rules care about
//! ([`RuleState`]). Rules map a realization to a non-negative violation
//! score — zero iff the rule was never violated. Two rules are built in:
//!
//! * **collision**: every tick flagged as contact contributes the ego speed
//!   at that tick, so a single impact scores its impact speed;
//! * **unsafe proximity**: every tick with the gap below a threshold
//!   contributes the ego speed, so tailgating fast is worse than creeping.
//!
//! The per-tick reward combines a perception-degradation term `e^(-iou)` with
//! a log-compressed violation bonus `ln(1 + w_c·alpha_c + w_p·alpha_p)`; the
//! log keeps the collision spike from completely drowning the dense shaping
//! term. Separately from the (binary-ish) rules, the minimum-following-
//! distance deficit measures how far the ego intrudes into the braking-
//! kinematics envelope `(v_e^2 - v_l^2) / (2a)`; evaluation reports its
//! accumulated sum as a graded severity signal.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The slice of world state the rulebook scores, one per tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleState {
    /// Ego speed this tick, m/s.
    pub ego_speed: f64,
    /// Bumper-to-bumper gap this tick, metres.
    pub gap: f64,
    /// True on the impact tick and every tick after.
    pub collision_this_tick: bool,
}

/// Reward weights for the two violation channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Weight on the collision channel (w_c).
    pub collision: f64,
    /// Weight on the proximity channel (w_p).
    pub proximity: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            collision: 500.0,
            proximity: 100.0,
        }
    }
}

/// Rulebook constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulebookConfig {
    /// Gap below which a tick counts as unsafe proximity, metres.
    pub proximity_threshold: f64,
    /// Assumed braking capability for the minimum-distance check, m/s^2.
    pub rss_decel: f64,
    pub weights: RewardWeights,
}

impl Default for RulebookConfig {
    fn default() -> Self {
        RulebookConfig {
            proximity_threshold: 5.0,
            rss_decel: 5.0,
            weights: RewardWeights::default(),
        }
    }
}

impl RulebookConfig {
    /// Domain checks on thresholds and weights.
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.proximity_threshold.is_finite() && self.proximity_threshold >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rulebook.proximity_threshold must be finite and >= 0, got {}",
                self.proximity_threshold
            )));
        }
        if !(self.rss_decel.is_finite() && self.rss_decel > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rulebook.rss_decel must be finite and > 0, got {}",
                self.rss_decel
            )));
        }
        for (name, w) in [
            ("weights.collision", self.weights.collision),
            ("weights.proximity", self.weights.proximity),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "rulebook.{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Accumulated violation scores over a realization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationScores {
    /// Collision score (lambda_c): sum of ego speeds over contact ticks.
    pub collision: f64,
    /// Proximity score (lambda_p): sum of ego speeds over too-close ticks.
    pub proximity: f64,
}

impl ViolationScores {
    /// Combined severity, the quantity training efficacy is judged on.
    pub fn total(&self) -> f64 {
        self.collision + self.proximity
    }
}

/// Per-tick violation contributions `(alpha_c, alpha_p)`.
///
/// `alpha_c` is the ego speed when this tick is flagged as contact, else 0;
/// `alpha_p` is the ego speed when the gap is strictly below the proximity
/// threshold, else 0. Both channels can fire on the same tick.
pub fn step_violation(state: &RuleState, proximity_threshold: f64) -> (f64, f64) {
    let alpha_c = if state.collision_this_tick { state.ego_speed } else { 0.0 };
    let alpha_p = if state.gap < proximity_threshold { state.ego_speed } else { 0.0 };
    (alpha_c, alpha_p)
}

/// Sums [`step_violation`] over a realization.
pub fn evaluate(realization: &[RuleState], proximity_threshold: f64) -> ViolationScores {
    let mut scores = ViolationScores::default();
    for state in realization {
        let (alpha_c, alpha_p) = step_violation(state, proximity_threshold);
        scores.collision += alpha_c;
        scores.proximity += alpha_p;
    }
    scores
}

/// Per-tick adversary reward:
/// `e^(-iou) + ln(1 + w_c·alpha_c + w_p·alpha_p)`.
pub fn step_reward(iou: f64, alpha_c: f64, alpha_p: f64, weights: &RewardWeights) -> f64 {
    (-iou).exp() + (weights.collision * alpha_c + weights.proximity * alpha_p).ln_1p()
}

/// Minimum safe following distance for an ego at `v_ego` behind a lead at
/// `v_lead`, both braking at `decel` (> 0): `max(0, (v_e^2 - v_l^2) / (2a))`.
pub fn rss_min_distance(v_ego: f64, v_lead: f64, decel: f64) -> Result<f64, Error> {
    if !(decel.is_finite() && decel > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rss decel must be finite and > 0, got {decel}"
        )));
    }
    Ok(((v_ego * v_ego - v_lead * v_lead) / (2.0 * decel)).max(0.0))
}

/// How far the actual gap falls short of the minimum safe distance:
/// `max(0, d_min - gap)`.
pub fn mfd_deficit(gap: f64, d_min: f64) -> f64 {
    (d_min - gap).max(0.0)
}

// ─────────────────────────────────────────────────────────────────────────────
// Rule registry
// ─────────────────────────────────────────────────────────────────────────────

/// A named safety rule: realization in, non-negative score out.
///
/// The two built-in rules cover this study; the trait exists so additional
/// rules (lane keeping, clearance envelopes, ...) can be registered without
/// touching the evaluation plumbing.
pub trait Rule {
    fn name(&self) -> &'static str;
    /// Non-negative violation score; zero iff never violated.
    fn violation(&self, realization: &[RuleState]) -> f64;
}

/// Built-in collision rule; see [`step_violation`].
pub struct CollisionRule;

impl Rule for CollisionRule {
    fn name(&self) -> &'static str {
        "collision"
    }

    fn violation(&self, realization: &[RuleState]) -> f64 {
        realization
            .iter()
            .filter(|s| s.collision_this_tick)
            .map(|s| s.ego_speed)
            .sum()
    }
}

/// Built-in unsafe-proximity rule; see [`step_violation`].
pub struct ProximityRule {
    pub threshold: f64,
}

impl Rule for ProximityRule {
    fn name(&self) -> &'static str {
        "unsafe_proximity"
    }

    fn violation(&self, realization: &[RuleState]) -> f64 {
        realization
            .iter()
            .filter(|s| s.gap < self.threshold)
            .map(|s| s.ego_speed)
            .sum()
    }
}

/// An ordered collection of rules evaluated together.
#[derive(Default)]
pub struct Rulebook {
    rules: Vec<Box<dyn Rule>>,
}

impl Rulebook {
    /// The two built-in rules at the configured threshold.
    pub fn standard(cfg: &RulebookConfig) -> Self {
        let mut book = Rulebook::default();
        book.register(Box::new(CollisionRule));
        book.register(Box::new(ProximityRule {
            threshold: cfg.proximity_threshold,
        }));
        book
    }

    pub fn register(&mut self, rule: Box<dyn Rule>) {
        self.rules.push(rule);
    }

    /// Evaluates every rule, in registration order.
    pub fn evaluate(&self, realization: &[RuleState]) -> Vec<(&'static str, f64)> {
        self.rules
            .iter()
            .map(|r| (r.name(), r.violation(realization)))
            .collect()
    }
}
