//! Feature extraction and the diagonal-Gaussian policy head.
//!
//! The observation is a 12-vector: the five knobs (azimuth unrolled into its
//! sine and cosine so the circular wrap does not fake a discontinuity), the
//! current visibility, the normalized gap and speeds, and the detection flag
//! and quality from the sensor. The policy network maps features to the mean
//! of a diagonal Gaussian over the 5 raw action components; the log standard
//! deviations are free state-independent parameters clamped to
//! [`LOG_STD_MIN`], [`LOG_STD_MAX`]. A separate value network with the same
//! trunk shape estimates the discounted return.
//!
//! Sampling stores the *unclamped* draw: the environment consumes the clamp
//! of it, but likelihood ratios in the PPO update must be evaluated at the
//! point that was actually sampled, or the importance weights would be
//! biased near the action bounds.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::perception::DetectionResult;
use crate::rng::Rng;
use crate::sim::{SimConfig, WorldState, KNOB_COUNT};

use super::net::Mlp;

/// Observation width.
pub const FEATURE_DIM: usize = 12;
/// Action width: one raw nudge per knob.
pub const ACTION_DIM: usize = KNOB_COUNT;
/// Clamp range for the log standard deviations.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Initial log standard deviation (sigma ~ 0.61).
pub const LOG_STD_INIT: f64 = -0.5;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7; // 0.5 * ln(2 pi)

/// One observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureState(pub [f64; FEATURE_DIM]);

/// Builds the observation for the current tick.
///
/// `det` is the most recent sensor output and `vis` the visibility of the
/// current knobs (passed in because the caller already computed it).
pub fn featurize(world: &WorldState, det: &DetectionResult, vis: f64, sim: &SimConfig) -> FeatureState {
    let k = &world.knobs;
    let az = k.sun_azimuth.to_radians();
    FeatureState([
        k.fog_density,
        k.precipitation,
        k.precipitation_deposits,
        k.sun_altitude / 90.0,
        az.sin(),
        az.cos(),
        vis,
        (world.gap(sim) / 100.0).clamp(0.0, 2.0),
        world.ego_speed / sim.speed_cap,
        world.lead_speed / sim.speed_cap,
        if det.detected { 1.0 } else { 0.0 },
        det.iou,
    ])
}

/// All learned parameters: policy trunk, free log-stds, value trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub log_std: Vec<f64>,
    pub value: Mlp,
}

impl PolicyParams {
    /// Fresh parameters with the given hidden widths. The policy head is
    /// scaled down (gain 0.01) so initial actions hover near zero; the value
    /// head keeps gain 1.
    pub fn init(hidden: &[usize], rng: &mut Rng) -> Self {
        let mut policy_dims = vec![FEATURE_DIM];
        policy_dims.extend_from_slice(hidden);
        policy_dims.push(ACTION_DIM);
        let mut value_dims = vec![FEATURE_DIM];
        value_dims.extend_from_slice(hidden);
        value_dims.push(1);
        // Split the stream so reshaping one network cannot restyle the other.
        PolicyParams {
            policy: Mlp::new(&policy_dims, 0.01, &mut rng.split(1)),
            log_std: vec![LOG_STD_INIT; ACTION_DIM],
            value: Mlp::new(&value_dims, 1.0, &mut rng.split(2)),
        }
    }

    /// Structural checks (shapes chain, heads have the right widths, log-std
    /// length and clamp range).
    pub fn validate(&self) -> Result<(), Error> {
        self.policy.validate()?;
        self.value.validate()?;
        if self.policy.input_dim() != FEATURE_DIM || self.policy.output_dim() != ACTION_DIM {
            return Err(Error::InvalidConfig(format!(
                "policy network must map {FEATURE_DIM} -> {ACTION_DIM}, got {} -> {}",
                self.policy.input_dim(),
                self.policy.output_dim()
            )));
        }
        if self.value.input_dim() != FEATURE_DIM || self.value.output_dim() != 1 {
            return Err(Error::InvalidConfig(format!(
                "value network must map {FEATURE_DIM} -> 1, got {} -> {}",
                self.value.input_dim(),
                self.value.output_dim()
            )));
        }
        if self.log_std.len() != ACTION_DIM {
            return Err(Error::InvalidConfig(format!(
                "log_std must have {ACTION_DIM} entries, got {}",
                self.log_std.len()
            )));
        }
        if !self
            .log_std
            .iter()
            .all(|ls| ls.is_finite() && (LOG_STD_MIN..=LOG_STD_MAX).contains(ls))
        {
            return Err(Error::InvalidConfig(format!(
                "log_std entries must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]"
            )));
        }
        Ok(())
    }

    /// Mean action, log-stds and value estimate for one observation.
    pub fn policy_forward(&self, f: &FeatureState) -> ([f64; ACTION_DIM], [f64; ACTION_DIM], f64) {
        let mean_v = self.policy.forward(&f.0);
        let mut mean = [0.0; ACTION_DIM];
        mean.copy_from_slice(&mean_v);
        let mut log_std = [0.0; ACTION_DIM];
        log_std.copy_from_slice(&self.log_std);
        let value = self.value.forward(&f.0)[0];
        (mean, log_std, value)
    }

    /// Total number of learned scalars.
    pub fn n_params(&self) -> usize {
        self.policy.param_count() + self.log_std.len() + self.value.param_count()
    }

    /// Flattening order: policy layers, log_std, value layers.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        self.policy.push_flat(&mut flat);
        flat.extend_from_slice(&self.log_std);
        self.value.push_flat(&mut flat);
        flat
    }

    /// Inverse of [`PolicyParams::to_flat`] (shapes must already match).
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.n_params());
        let mut off = self.policy.load_flat(flat);
        let ns = self.log_std.len();
        self.log_std.copy_from_slice(&flat[off..off + ns]);
        off += ns;
        self.value.load_flat(&flat[off..]);
    }

    /// Index range of the log-std block inside the flat vector (the update
    /// re-clamps exactly this slice after every optimizer step).
    pub fn log_std_span(&self) -> std::ops::Range<usize> {
        let start = self.policy.param_count();
        start..start + self.log_std.len()
    }
}

/// Log-density of a diagonal Gaussian at `x`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    let mut lp = 0.0;
    for d in 0..mean.len() {
        let z = (x[d] - mean[d]) * (-log_std[d]).exp();
        lp += -0.5 * z * z - log_std[d] - HALF_LN_TAU;
    }
    lp
}

/// Differential entropy of the diagonal Gaussian (state-independent because
/// the log-stds are free parameters).
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (1.0 + std::f64::consts::TAU.ln())
}

/// One sampled action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// The unclamped Gaussian draw (stored for the PPO update).
    pub raw: [f64; ACTION_DIM],
    /// The draw clamped to [-1, 1] (what the environment consumes).
    pub action: [f64; ACTION_DIM],
    /// Log-density of `raw` under the sampling distribution.
    pub log_prob: f64,
}

/// Samples from the policy Gaussian.
pub fn sample_action(mean: &[f64; ACTION_DIM], log_std: &[f64; ACTION_DIM], rng: &mut Rng) -> SampledAction {
    let mut raw = [0.0; ACTION_DIM];
    let mut action = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        raw[d] = mean[d] + log_std[d].exp() * rng.next_normal();
        action[d] = raw[d].clamp(-1.0, 1.0);
    }
    SampledAction {
        raw,
        action,
        log_prob: gaussian_log_prob(mean, log_std, &raw),
    }
}

/// Baseline: uniform random action in [-1, 1]^5.
pub fn act_random(rng: &mut Rng) -> [f64; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    for d in &mut a {
        *d = rng.range_f64(-1.0, 1.0);
    }
    a
}

/// Baseline: touch nothing, leaving the weather clear.
pub fn act_clear() -> [f64; ACTION_DIM] {
    [0.0; ACTION_DIM]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{self, PerceptionConfig};
    use crate::sim::{KnobState, Scene};

    fn test_world() -> (WorldState, SimConfig) {
        let cfg = SimConfig::default();
        let scene = Scene {
            scene_id: "f".into(),
            initial_gap: 40.0,
            ego_speed0: 12.0,
            lead_speed0: 9.0,
            lead_events: vec![],
            cut_in: None,
            noise_seed: 0,
        };
        (WorldState::init(&scene, &cfg), cfg)
    }

    #[test]
    fn featurize_layout_and_ranges() {
        let (mut world, sim) = test_world();
        world.knobs = KnobState {
            fog_density: 0.25,
            precipitation: 0.5,
            precipitation_deposits: 0.75,
            sun_altitude: -45.0,
            sun_azimuth: 90.0,
        };
        let vis = perception::visibility(&world.knobs, &PerceptionConfig::default());
        let det = DetectionResult {
            detected: true,
            est_distance: Some(40.0),
            iou: 0.7,
        };
        let f = featurize(&world, &det, vis, &sim).0;
        assert_eq!(f[0], 0.25);
        assert_eq!(f[1], 0.5);
        assert_eq!(f[2], 0.75);
        assert_eq!(f[3], -0.5);
        assert!((f[4] - 1.0).abs() < 1e-12, "sin 90deg");
        assert!(f[5].abs() < 1e-12, "cos 90deg");
        assert_eq!(f[6], vis);
        assert!((f[7] - 0.4).abs() < 1e-12);
        assert!((f[8] - 0.4).abs() < 1e-12);
        assert!((f[9] - 0.3).abs() < 1e-12);
        assert_eq!(f[10], 1.0);
        assert_eq!(f[11], 0.7);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gap_feature_clamps_far_targets() {
        let (mut world, sim) = test_world();
        world.lead_pos = 1e6;
        let f = featurize(&world, &DetectionResult::miss(), 1.0, &sim).0;
        assert_eq!(f[7], 2.0);
        assert_eq!(f[10], 0.0);
        assert_eq!(f[11], 0.0);
    }

    #[test]
    fn init_shapes_follow_hidden_spec() {
        let mut rng = Rng::new(3);
        let p = PolicyParams::init(&[64, 64], &mut rng);
        p.validate().unwrap();
        assert_eq!(p.policy.input_dim(), FEATURE_DIM);
        assert_eq!(p.policy.output_dim(), ACTION_DIM);
        assert_eq!(p.value.output_dim(), 1);
        assert_eq!(p.log_std, vec![LOG_STD_INIT; ACTION_DIM]);
        assert_eq!(
            p.n_params(),
            p.policy.param_count() + ACTION_DIM + p.value.param_count()
        );
    }

    #[test]
    fn flat_roundtrip_and_log_std_span() {
        let mut rng = Rng::new(8);
        let p = PolicyParams::init(&[8], &mut rng);
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.n_params());
        let span = p.log_std_span();
        assert_eq!(&flat[span.clone()], &p.log_std[..]);
        let mut q = PolicyParams::init(&[8], &mut rng.split(99));
        q.set_from_flat(&flat);
        assert_eq!(p, q);
    }

    #[test]
    fn log_prob_standard_normal_at_mean() {
        // At the mean of a unit Gaussian each of the 5 dims contributes
        // -0.5 ln(2 pi).
        let mean = [0.0; ACTION_DIM];
        let ls = [0.0; ACTION_DIM];
        let lp = gaussian_log_prob(&mean, &ls, &[0.0; ACTION_DIM]);
        assert!((lp + 4.594_692_666_023_363).abs() < 1e-9);
    }

    #[test]
    fn log_prob_scales_with_sigma() {
        // One dim; sigma = e: lp = -0.5 z^2 - 1 - 0.5 ln(2pi), z = (x-mu)/e.
        let lp = gaussian_log_prob(&[1.0], &[1.0], &[1.0 + std::f64::consts::E]);
        let want = -0.5 - 1.0 - HALF_LN_TAU;
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn sampling_stats_and_clamping() {
        let mut rng = Rng::new(17);
        let mean = [0.3, -0.2, 0.0, 0.9, -0.9];
        let ls = [-0.5; ACTION_DIM];
        let n = 20_000;
        let mut sums = [0.0; ACTION_DIM];
        for _ in 0..n {
            let s = sample_action(&mean, &ls, &mut rng);
            for ((action, raw), sum) in s.action.iter().zip(&s.raw).zip(&mut sums) {
                assert!((-1.0..=1.0).contains(action));
                assert_eq!(*action, raw.clamp(-1.0, 1.0));
                *sum += raw;
            }
            assert!(s.log_prob.is_finite());
            // Consistency: stored log_prob is the density at the raw draw.
            assert_eq!(s.log_prob, gaussian_log_prob(&mean, &ls, &s.raw));
        }
        for d in 0..ACTION_DIM {
            assert!((sums[d] / n as f64 - mean[d]).abs() < 0.02, "dim {d}");
        }
    }

    #[test]
    fn baselines() {
        assert_eq!(act_clear(), [0.0; ACTION_DIM]);
        let mut rng = Rng::new(4);
        for _ in 0..1000 {
            let a = act_random(&mut rng);
            assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        }
    }

    #[test]
    fn entropy_formula() {
        // Unit Gaussian in 5 dims: 2.5 (1 + ln 2pi).
        let h = gaussian_entropy(&[0.0; 5]);
        assert!((h - 2.5 * (1.0 + std::f64::consts::TAU.ln())).abs() < 1e-12);
    }
}
