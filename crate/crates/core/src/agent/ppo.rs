//! Proximal policy optimization over rollouts of knob-nudge episodes.
//!
//! The update is the standard clipped-surrogate scheme: collect on-policy
//! transitions, estimate advantages with GAE(gamma, lambda), normalize them
//! per update batch, then take several epochs of minibatch Adam steps on
//!
//! `L = -E[min(rho A, clamp(rho, 1-eps, 1+eps) A)] + c_v E[(V - R)^2] - c_e H`
//!
//! where `rho` is the likelihood ratio of the stored raw action under the
//! current vs. the collection-time policy. Gradients are assembled by hand:
//! the ratio term backpropagates into the policy trunk through the Gaussian
//! log-density (`dlogp/dmu = z/sigma`, `dlogp/dlog_std = z^2 - 1`), the value
//! term through the value trunk, and the entropy bonus lands directly on the
//! log-std parameters. [`minibatch_loss`] and [`minibatch_grads`] are public
//! precisely so tests can pit the analytic gradients against central finite
//! differences.
//!
//! Everything that draws randomness (minibatch shuffling) takes an explicit
//! [`Rng`], keeping updates bit-reproducible.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;

use super::net::Adam;
use super::policy::{
    gaussian_entropy, gaussian_log_prob, FeatureState, PolicyParams, ACTION_DIM, LOG_STD_MAX,
    LOG_STD_MIN,
};

/// Schema version for checkpoint files written by this build.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

// ─────────────────────────────────────────────────────────────────────────────
// Configuration
// ─────────────────────────────────────────────────────────────────────────────

/// PPO hyperparameters plus the rollout geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Discount factor.
    pub gamma: f64,
    /// GAE smoothing factor.
    pub gae_lambda: f64,
    /// Surrogate clip half-width (eps).
    pub clip_ratio: f64,
    /// Adam learning rate.
    pub learn_rate: f64,
    /// Optimization epochs over each update batch.
    pub epochs_per_update: usize,
    /// Minibatch size within an epoch.
    pub minibatch_size: usize,
    /// Weight on the value regression loss (c_v).
    pub value_coeff: f64,
    /// Weight on the entropy bonus (c_e).
    pub entropy_coeff: f64,
    /// Ticks per episode.
    pub episode_len: usize,
    /// Episodes collected per update batch.
    pub episodes_per_update: usize,
    /// Total environment steps in a training run.
    pub total_steps: usize,
    /// Hidden widths shared by the policy and value trunks.
    pub hidden: Vec<usize>,
    /// Master seed for a training run (parameter init, scene picks, action
    /// sampling, shuffling all derive from it).
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            learn_rate: 3e-4,
            epochs_per_update: 10,
            minibatch_size: 64,
            value_coeff: 0.5,
            entropy_coeff: 0.0,
            episode_len: 512,
            episodes_per_update: 4,
            total_steps: 40_960,
            hidden: vec![64, 64],
            seed: 1,
        }
    }
}

impl PpoConfig {
    /// Domain checks on the hyperparameters.
    pub fn validate(&self) -> Result<(), Error> {
        let in_unit = [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)];
        for (name, v) in in_unit {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidConfig(format!("ppo.{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.clip_ratio.is_finite() && self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ppo.clip_ratio must be in (0, 1), got {}",
                self.clip_ratio
            )));
        }
        if !(self.learn_rate.is_finite() && self.learn_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ppo.learn_rate must be finite and > 0, got {}",
                self.learn_rate
            )));
        }
        if !(self.value_coeff.is_finite() && self.value_coeff >= 0.0)
            || !(self.entropy_coeff.is_finite() && self.entropy_coeff >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "ppo.value_coeff and ppo.entropy_coeff must be finite and >= 0".into(),
            ));
        }
        let at_least_one = [
            ("epochs_per_update", self.epochs_per_update),
            ("minibatch_size", self.minibatch_size),
            ("episode_len", self.episode_len),
            ("episodes_per_update", self.episodes_per_update),
        ];
        for (name, v) in at_least_one {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("ppo.{name} must be >= 1")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("ppo.hidden must be non-empty positive widths".into()));
        }
        if self.total_steps < self.episode_len * self.episodes_per_update {
            return Err(Error::InvalidConfig(format!(
                "ppo.total_steps ({}) is smaller than one update batch ({})",
                self.total_steps,
                self.episode_len * self.episodes_per_update
            )));
        }
        Ok(())
    }

    /// Environment steps per update batch.
    pub fn steps_per_update(&self) -> usize {
        self.episode_len * self.episodes_per_update
    }

    /// Number of whole update batches a training run performs.
    pub fn update_count(&self) -> usize {
        self.total_steps / self.steps_per_update()
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Rollout storage
// ─────────────────────────────────────────────────────────────────────────────

/// Aligned on-policy transition storage for one update batch.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub features: Vec<FeatureState>,
    /// Unclamped Gaussian draws (see the policy module for why).
    pub raw_actions: Vec<[f64; ACTION_DIM]>,
    /// Log-density of each raw action at collection time.
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Collection-time value estimates.
    pub values: Vec<f64>,
    /// Episode-boundary flags.
    pub terminals: Vec<bool>,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        RolloutBuffer {
            features: Vec::with_capacity(n),
            raw_actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
        }
    }

    pub fn push(
        &mut self,
        feature: FeatureState,
        raw_action: [f64; ACTION_DIM],
        log_prob: f64,
        reward: f64,
        value: f64,
        terminal: bool,
    ) {
        self.features.push(feature);
        self.raw_actions.push(raw_action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.terminals.push(terminal);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.raw_actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.terminals.clear();
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Advantage estimation
// ─────────────────────────────────────────────────────────────────────────────

/// Generalized advantage estimation over a buffer that may contain several
/// episodes back to back (`terminals` marks each episode's last transition).
///
/// Returns `(advantages, returns)` with `returns = advantages + values`,
/// *before* any normalization. The recursion treats the value beyond a
/// terminal — and beyond the end of a truncated buffer — as zero.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n, "values misaligned");
    assert_eq!(terminals.len(), n, "terminals misaligned");
    let mut advantages = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, next_adv) = if terminals[t] || t + 1 == n {
            (0.0, 0.0)
        } else {
            (values[t + 1], carry)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        carry = delta + gamma * lambda * next_adv;
        advantages[t] = carry;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// In-place shift/scale to zero mean and unit variance (a tiny epsilon keeps
/// constant batches at exactly zero instead of dividing by zero).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / denom;
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Loss and gradients
// ─────────────────────────────────────────────────────────────────────────────

/// Minibatch loss pieces, each averaged over the batch (entropy is
/// state-independent, so its "average" is itself).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub surrogate: f64,
    pub value_mse: f64,
    pub entropy: f64,
}

impl LossParts {
    /// The scalar actually minimized.
    pub fn total(&self, value_coeff: f64, entropy_coeff: f64) -> f64 {
        -self.surrogate + value_coeff * self.value_mse - entropy_coeff * self.entropy
    }
}

/// Side statistics from one gradient evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradStats {
    /// Sum over the batch of `logp_old - logp_new` (the KL proxy).
    pub kl_sum: f64,
    /// Samples whose ratio left the clip interval.
    pub clip_count: usize,
}

/// Evaluates [`LossParts`] on `indices` of `buffer` without touching
/// gradients. `advantages` and `returns` are full-buffer-length arrays.
pub fn minibatch_loss(
    params: &PolicyParams,
    buffer: &RolloutBuffer,
    indices: &[usize],
    advantages: &[f64],
    returns: &[f64],
    clip_ratio: f64,
) -> LossParts {
    let n = indices.len() as f64;
    let mut surrogate = 0.0;
    let mut value_mse = 0.0;
    for &i in indices {
        let mean = params.policy.forward(&buffer.features[i].0);
        let value = params.value.forward(&buffer.features[i].0)[0];
        let logp_new = gaussian_log_prob(&mean, &params.log_std, &buffer.raw_actions[i]);
        let ratio = (logp_new - buffer.log_probs[i]).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio) * adv;
        surrogate += unclipped.min(clipped);
        let err = value - returns[i];
        value_mse += err * err;
    }
    LossParts {
        surrogate: surrogate / n,
        value_mse: value_mse / n,
        entropy: gaussian_entropy(&params.log_std),
    }
}

/// Evaluates the loss *and* its analytic gradient on a minibatch.
///
/// Returns the loss pieces, the gradient of [`LossParts::total`] laid out in
/// [`PolicyParams::to_flat`] order, and the side statistics.
#[allow(clippy::too_many_arguments)] // mirrors minibatch_loss plus the three loss coefficients
pub fn minibatch_grads(
    params: &PolicyParams,
    buffer: &RolloutBuffer,
    indices: &[usize],
    advantages: &[f64],
    returns: &[f64],
    clip_ratio: f64,
    value_coeff: f64,
    entropy_coeff: f64,
) -> (LossParts, Vec<f64>, GradStats) {
    let n = indices.len() as f64;
    let mut policy_grads = params.policy.zero_grads();
    let mut value_grads = params.value.zero_grads();
    let mut log_std_grads = vec![0.0; ACTION_DIM];
    let mut surrogate = 0.0;
    let mut value_mse = 0.0;
    let mut stats = GradStats::default();

    for &i in indices {
        let feature = &buffer.features[i].0;
        let raw = &buffer.raw_actions[i];
        let (mean, policy_cache) = params.policy.forward_cached(feature);
        let (value_out, value_cache) = params.value.forward_cached(feature);
        let value = value_out[0];

        let logp_new = gaussian_log_prob(&mean, &params.log_std, raw);
        let ratio = (logp_new - buffer.log_probs[i]).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio) * adv;
        // When the clipped branch is active the surrogate is locally constant
        // in the parameters, so its gradient contribution vanishes.
        let (surr_i, dsurr_dlogp) = if unclipped <= clipped {
            (unclipped, unclipped)
        } else {
            (clipped, 0.0)
        };
        surrogate += surr_i;
        if ratio < 1.0 - clip_ratio || ratio > 1.0 + clip_ratio {
            stats.clip_count += 1;
        }
        stats.kl_sum += buffer.log_probs[i] - logp_new;

        // Surrogate enters the loss negated and averaged.
        let dloss_dlogp = -dsurr_dlogp / n;
        let mut grad_mean = vec![0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            let inv_sigma = (-params.log_std[d]).exp();
            let z = (raw[d] - mean[d]) * inv_sigma;
            grad_mean[d] = dloss_dlogp * z * inv_sigma;
            log_std_grads[d] += dloss_dlogp * (z * z - 1.0);
        }
        params.policy.backward(&policy_cache, &grad_mean, &mut policy_grads);

        let err = value - returns[i];
        value_mse += err * err;
        let dloss_dvalue = 2.0 * value_coeff * err / n;
        params.value.backward(&value_cache, &[dloss_dvalue], &mut value_grads);
    }

    // The entropy bonus is maximized: dH/dlog_std_d = 1.
    for g in log_std_grads.iter_mut() {
        *g -= entropy_coeff;
    }

    let parts = LossParts {
        surrogate: surrogate / n,
        value_mse: value_mse / n,
        entropy: gaussian_entropy(&params.log_std),
    };
    let mut flat = Vec::with_capacity(params.n_params());
    policy_grads.push_flat(&mut flat);
    flat.extend_from_slice(&log_std_grads);
    value_grads.push_flat(&mut flat);
    (parts, flat, stats)
}

// ─────────────────────────────────────────────────────────────────────────────
// The update
// ─────────────────────────────────────────────────────────────────────────────

/// Aggregate statistics of one [`ppo_update`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean negated surrogate across minibatch steps.
    pub policy_loss: f64,
    /// Mean value regression MSE across minibatch steps.
    pub value_loss: f64,
    /// Mean policy entropy across minibatch steps.
    pub entropy: f64,
    /// Mean `logp_old - logp_new` across all processed samples.
    pub approx_kl: f64,
    /// Fraction of processed samples whose ratio left the clip interval.
    pub clip_fraction: f64,
}

/// Fisher-Yates permutation of `0..n`.
fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        indices.swap(i, j);
    }
    indices
}

/// One full PPO update over `buffer`, mutating `params` in place.
///
/// `opt` carries Adam moments across updates; `rng` drives only the
/// minibatch shuffling. Any non-finite reward, value, advantage or gradient
/// aborts with [`Error::NonFinite`] rather than poisoning the parameters.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<TrainStats, Error> {
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("ppo_update on an empty buffer".into()));
    }
    if !buffer.rewards.iter().all(|r| r.is_finite()) || !buffer.values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "rollout rewards/values entering ppo_update".into(),
        });
    }

    let (mut advantages, returns) = gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.terminals,
        cfg.gamma,
        cfg.gae_lambda,
    );
    normalize_advantages(&mut advantages);
    if !advantages.iter().all(|a| a.is_finite()) {
        return Err(Error::NonFinite {
            context: "normalized advantages".into(),
        });
    }

    let mut flat = params.to_flat();
    let log_std_span = params.log_std_span();

    let mut loss_sums = (0.0, 0.0, 0.0); // policy, value, entropy
    let mut minibatches = 0usize;
    let mut kl_sum = 0.0;
    let mut clip_count = 0usize;
    let mut samples = 0usize;

    for epoch in 0..cfg.epochs_per_update {
        let order = shuffled_indices(buffer.len(), rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            params.set_from_flat(&flat);
            let (parts, grads, gs) = minibatch_grads(
                params,
                buffer,
                chunk,
                &advantages,
                &returns,
                cfg.clip_ratio,
                cfg.value_coeff,
                cfg.entropy_coeff,
            );
            let loss = parts.total(cfg.value_coeff, cfg.entropy_coeff);
            if !loss.is_finite() || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("PPO gradients (epoch {epoch})"),
                });
            }
            opt.step(&mut flat, &grads);
            for ls in &mut flat[log_std_span.clone()] {
                *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
            loss_sums.0 += -parts.surrogate;
            loss_sums.1 += parts.value_mse;
            loss_sums.2 += parts.entropy;
            minibatches += 1;
            kl_sum += gs.kl_sum;
            clip_count += gs.clip_count;
            samples += chunk.len();
        }
    }
    params.set_from_flat(&flat);

    let mb = minibatches as f64;
    Ok(TrainStats {
        policy_loss: loss_sums.0 / mb,
        value_loss: loss_sums.1 / mb,
        entropy: loss_sums.2 / mb,
        approx_kl: kl_sum / samples as f64,
        clip_fraction: clip_count as f64 / samples as f64,
    })
}

// ─────────────────────────────────────────────────────────────────────────────
// Checkpoints
// ─────────────────────────────────────────────────────────────────────────────

/// A saved training state: parameters plus enough bookkeeping to resume.
/// Adam moments are deliberately not persisted; a resumed run restarts the
/// optimizer statistics (documented behavior, keeps checkpoints small and
/// the schema simple).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Update batches completed so far.
    pub updates_done: usize,
    /// Environment steps consumed so far.
    pub steps_done: usize,
    /// The configuration the run was started with.
    pub ppo: PpoConfig,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(updates_done: usize, steps_done: usize, ppo: PpoConfig, params: PolicyParams) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            updates_done,
            steps_done,
            ppo,
            params,
        }
    }

    /// Writes the checkpoint as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let json = serde_json::to_string_pretty(self).expect("checkpoint serialization is infallible");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Reads and validates a checkpoint, rejecting unknown schema versions
    /// before attempting the strict parse.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct VersionProbe {
            schema_version: u32,
        }
        let probe: VersionProbe =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        if probe.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                path: path.to_path_buf(),
                found: probe.schema_version,
                supported: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        ckpt.ppo.validate()?;
        ckpt.params.validate()?;
        Ok(ckpt)
    }
}
