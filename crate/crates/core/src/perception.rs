//! Visibility-limited range sensing and the ego controller that consumes it.
//!
//! The sensor abstracts a camera/radar stack into one scalar channel:
//! a visibility factor in [0, 1] computed from the weather knobs, which
//! scales the maximum detection range, the per-tick detection probability,
//! the detection quality (reported as an IoU-like overlap score) and the
//! range-estimate noise. The model is deliberately simple but keeps the
//! qualitative failure directions of real stacks: fog/rain/deposit
//! attenuation, a night floor, and a glare band when the sun sits low and
//! roughly ahead.
//!
//! The controller is a plain longitudinal policy: track a cruise speed when
//! the road looks clear, brake proportionally to the kinematic deceleration
//! needed to stop `standoff` metres short of the estimated obstacle. It
//! trusts the sensor completely — that trust is exactly the attack surface
//! the adversarial weather search probes.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;
use crate::sim::{ControlSignal, KnobState};

// ─────────────────────────────────────────────────────────────────────────────
// Sensor model
// ─────────────────────────────────────────────────────────────────────────────

/// Sensor-model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    /// Detection range at full visibility, metres.
    pub r_max: f64,
    /// Fog attenuation exponent.
    pub fog_coeff: f64,
    /// Rain attenuation exponent.
    pub rain_coeff: f64,
    /// Sensor-deposit attenuation exponent.
    pub deposit_coeff: f64,
    /// Visibility floor at night (headlights, streetlights).
    pub night_floor: f64,
    /// Multiplier applied inside the glare band.
    pub glare_factor: f64,
    /// Sun altitude below which glare can occur, degrees.
    pub glare_alt_max: f64,
    /// Half-width of the glare azimuth band around the ego heading, degrees.
    pub glare_az_halfwidth: f64,
    /// Relative range-noise scale at zero visibility.
    pub range_noise_coeff: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            r_max: 120.0,
            fog_coeff: 3.0,
            rain_coeff: 1.5,
            deposit_coeff: 0.8,
            night_floor: 0.15,
            glare_factor: 0.5,
            glare_alt_max: 25.0,
            glare_az_halfwidth: 30.0,
            range_noise_coeff: 0.05,
        }
    }
}

impl PerceptionConfig {
    /// Domain checks on the sensor constants.
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "perception.r_max must be finite and > 0, got {}",
                self.r_max
            )));
        }
        let non_negative = [
            ("fog_coeff", self.fog_coeff),
            ("rain_coeff", self.rain_coeff),
            ("deposit_coeff", self.deposit_coeff),
            ("range_noise_coeff", self.range_noise_coeff),
            ("glare_alt_max", self.glare_alt_max),
            ("glare_az_halfwidth", self.glare_az_halfwidth),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "perception.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [("night_floor", self.night_floor), ("glare_factor", self.glare_factor)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidConfig(format!(
                    "perception.{name} must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// What the sensor reports for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    /// Whether the lead vehicle was detected at all this tick.
    pub detected: bool,
    /// Noisy distance estimate, metres; `None` when not detected.
    pub est_distance: Option<f64>,
    /// Detection-quality score in [0, 1]; 0 when not detected.
    pub iou: f64,
}

impl DetectionResult {
    /// The "saw nothing" result.
    pub fn miss() -> Self {
        DetectionResult {
            detected: false,
            est_distance: None,
            iou: 0.0,
        }
    }
}

/// Maps azimuth degrees into (-180, 180] relative to the ego heading at 0.
fn wrap_azimuth(az: f64) -> f64 {
    let d = az.rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Scalar visibility in [0, 1] for the given weather/lighting knobs.
///
/// Daylight rises with the sine of the sun altitude above `night_floor`;
/// fog, rain and deposits attenuate exponentially; a low sun within the
/// forward azimuth band multiplies by `glare_factor`.
pub fn visibility(knobs: &KnobState, cfg: &PerceptionConfig) -> f64 {
    let daylight =
        cfg.night_floor + (1.0 - cfg.night_floor) * knobs.sun_altitude.to_radians().sin().max(0.0);
    let glare = if knobs.sun_altitude > 0.0
        && knobs.sun_altitude < cfg.glare_alt_max
        && wrap_azimuth(knobs.sun_azimuth).abs() < cfg.glare_az_halfwidth
    {
        cfg.glare_factor
    } else {
        1.0
    };
    let attenuation = (-cfg.fog_coeff * knobs.fog_density).exp()
        * (-cfg.rain_coeff * knobs.precipitation).exp()
        * (-cfg.deposit_coeff * knobs.precipitation_deposits).exp();
    (daylight * attenuation * glare).clamp(0.0, 1.0)
}

/// Effective detection range for a given visibility.
pub fn detection_range(vis: f64, cfg: &PerceptionConfig) -> f64 {
    cfg.r_max * vis
}

/// Per-tick detection probability for a target at `gap` with detection range
/// `range`: certain well inside the range, fading linearly to zero at the
/// edge (the 1.2 slope makes the certain zone end at `range / 6`).
pub fn detection_probability(gap: f64, range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    (1.2 * (range - gap) / range).clamp(0.0, 1.0)
}

/// One sensing tick: visibility, range gate, Bernoulli detection, then the
/// quality score and noisy range estimate.
///
/// `rng` must be the per-tick stream derived from the scene's noise seed so
/// that sensing draws can never desynchronize across ticks. At most two draws
/// are consumed: the detection trial, then (on success) one Gaussian for the
/// range noise. Zero visibility or an out-of-range target is a deterministic
/// miss and consumes no draws.
pub fn sense(gap: f64, knobs: &KnobState, cfg: &PerceptionConfig, rng: &mut Rng) -> DetectionResult {
    let vis = visibility(knobs, cfg);
    let range = detection_range(vis, cfg);
    if range <= 0.0 || gap > range {
        return DetectionResult::miss();
    }
    let p = detection_probability(gap, range);
    if !rng.bernoulli(p) {
        return DetectionResult::miss();
    }
    let iou = (vis * (1.0 - gap / range)).clamp(0.0, 1.0);
    let noise = rng.next_normal();
    let est = gap * (1.0 + noise * cfg.range_noise_coeff * (1.0 - vis));
    DetectionResult {
        detected: true,
        est_distance: Some(est.max(0.0)),
        iou,
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Ego controller
// ─────────────────────────────────────────────────────────────────────────────

/// Longitudinal controller gains and limits.
///
/// `brake_authority`/`accel_authority`/`dt` mirror the simulator's physical
/// constants so the controller can convert desired accelerations into pedal
/// fractions; they are configured separately because the controller only
/// *believes* these values — a mismatch is a legitimate modeling choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Cruise speed tracked when the road ahead looks clear, m/s.
    pub cruise_speed: f64,
    /// Proportional gain from speed error to throttle.
    pub speed_gain: f64,
    /// Desired stopping distance short of the obstacle, metres.
    pub standoff: f64,
    /// Deceleration above which the controller commits to braking, m/s^2.
    pub comfort_decel: f64,
    /// Floor on the stopping margin to keep the braking law finite, metres.
    pub distance_floor: f64,
    /// Deceleration the controller assumes at full brake, m/s^2.
    pub brake_authority: f64,
    /// Acceleration the controller assumes at full throttle, m/s^2.
    pub accel_authority: f64,
    /// Control interval the controller assumes, seconds.
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            cruise_speed: 15.0,
            speed_gain: 0.3,
            standoff: 5.0,
            comfort_decel: 2.5,
            distance_floor: 0.1,
            brake_authority: 8.0,
            accel_authority: 3.0,
            dt: 0.1,
        }
    }
}

impl ControllerConfig {
    /// Domain checks on the controller constants.
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("cruise_speed", self.cruise_speed),
            ("speed_gain", self.speed_gain),
            ("standoff", self.standoff),
            ("comfort_decel", self.comfort_decel),
            ("distance_floor", self.distance_floor),
            ("brake_authority", self.brake_authority),
            ("accel_authority", self.accel_authority),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "controller.{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Longitudinal control law.
///
/// * No detection: proportional throttle toward the cruise speed — the
///   controller drives as if the road were empty.
/// * Detection: compute the deceleration needed to stop `standoff` metres
///   short of the estimate. At or above `comfort_decel`, brake with that
///   fraction of the assumed full-brake authority. Below it, throttle toward
///   cruise, capped so the predicted next-tick gap stays above the standoff.
pub fn behavior_control(det: &DetectionResult, ego_speed: f64, cfg: &ControllerConfig) -> ControlSignal {
    let cruise = cfg.speed_gain * (cfg.cruise_speed - ego_speed);
    let Some(est) = det.est_distance else {
        return ControlSignal::with_throttle(cruise);
    };
    let margin = (est - cfg.standoff).max(cfg.distance_floor);
    let required = ego_speed * ego_speed / (2.0 * margin);
    if required >= cfg.comfort_decel {
        ControlSignal::with_brake(required / cfg.brake_authority)
    } else {
        // Highest next-tick speed that keeps (est - v'·dt) >= standoff.
        let speed_limit = ((est - cfg.standoff) / cfg.dt).max(0.0);
        let cap = (speed_limit - ego_speed) / (cfg.accel_authority * cfg.dt);
        ControlSignal::with_throttle(cruise.min(cap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    // proptest's prelude re-exports a `Rng` trait; keep ours the explicit one.
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn knobs(fog: f64, rain: f64, dep: f64, alt: f64, az: f64) -> KnobState {
        KnobState {
            fog_density: fog,
            precipitation: rain,
            precipitation_deposits: dep,
            sun_altitude: alt,
            sun_azimuth: az,
        }
    }

    #[test]
    fn clear_noon_visibility_is_one() {
        let cfg = PerceptionConfig::default();
        assert_eq!(visibility(&KnobState::clear(), &cfg), 1.0);
    }

    #[test]
    fn half_fog_attenuates_to_known_value() {
        let cfg = PerceptionConfig::default();
        let v = visibility(&knobs(0.5, 0.0, 0.0, 90.0, 0.0), &cfg);
        assert!((v - 0.2231302).abs() < 1e-6, "v = {v}");
    }

    #[test]
    fn night_hits_the_floor() {
        let cfg = PerceptionConfig::default();
        for alt in [-90.0, -30.0, 0.0] {
            let v = visibility(&knobs(0.0, 0.0, 0.0, alt, 0.0), &cfg);
            assert!((v - cfg.night_floor).abs() < 1e-12, "alt {alt}: {v}");
        }
    }

    #[test]
    fn glare_band_halves_visibility() {
        let cfg = PerceptionConfig::default();
        let inside = visibility(&knobs(0.0, 0.0, 0.0, 10.0, 15.0), &cfg);
        let outside = visibility(&knobs(0.0, 0.0, 0.0, 10.0, 45.0), &cfg);
        assert!((inside - cfg.glare_factor * outside).abs() < 1e-12);
        // Wrapped azimuth just below 360 is "ahead" too.
        let wrapped = visibility(&knobs(0.0, 0.0, 0.0, 10.0, 350.0), &cfg);
        assert_eq!(wrapped, inside);
        // High sun never glares, whatever the azimuth.
        let high = visibility(&knobs(0.0, 0.0, 0.0, 60.0, 0.0), &cfg);
        let high_off = visibility(&knobs(0.0, 0.0, 0.0, 60.0, 120.0), &cfg);
        assert_eq!(high, high_off);
    }

    #[test]
    fn detection_probability_matches_hand_values() {
        // V = 0.5 -> range 60; gap 30 -> p = 1.2 * 30/60 = 0.6.
        let cfg = PerceptionConfig::default();
        let v = 0.5;
        let range = detection_range(v, &cfg);
        assert_eq!(range, 60.0);
        assert!((detection_probability(30.0, range) - 0.6).abs() < 1e-12);
        // Inside range/6 detection is certain; at the edge it is impossible.
        assert_eq!(detection_probability(10.0, range), 1.0);
        assert_eq!(detection_probability(60.0, range), 0.0);
        assert_eq!(detection_probability(30.0, 0.0), 0.0);
    }

    #[test]
    fn sense_misses_beyond_range_without_consuming_noise() {
        let cfg = PerceptionConfig::default();
        let k = knobs(0.5, 0.0, 0.0, 90.0, 0.0); // V ~ 0.223 -> range ~ 26.8
        let mut a = Rng::new(1);
        let det = sense(100.0, &k, &cfg, &mut a);
        assert_eq!(det, DetectionResult::miss());
        assert_eq!(a, Rng::new(1), "no draws consumed on a deterministic miss");
    }

    #[test]
    fn sense_is_deterministic_given_stream() {
        let cfg = PerceptionConfig::default();
        let k = knobs(0.3, 0.1, 0.0, 45.0, 180.0);
        let d1 = sense(20.0, &k, &cfg, &mut Rng::new(99));
        let d2 = sense(20.0, &k, &cfg, &mut Rng::new(99));
        assert_eq!(d1, d2);
    }

    #[test]
    fn clear_close_target_detected_with_exact_distance() {
        let cfg = PerceptionConfig::default();
        let det = sense(15.0, &KnobState::clear(), &cfg, &mut Rng::new(7));
        assert!(det.detected, "p = 1 inside range/6");
        // Full visibility: the (1 - V) noise scale vanishes.
        assert_eq!(det.est_distance, Some(15.0));
        assert!((det.iou - (1.0 - 15.0 / 120.0)).abs() < 1e-12);
    }

    #[test]
    fn detected_iou_is_positive_and_bounded() {
        let cfg = PerceptionConfig::default();
        let k = knobs(0.4, 0.2, 0.1, 30.0, 200.0);
        let mut rng = Rng::new(3);
        let mut hits = 0;
        for gap in 1..40 {
            let det = sense(gap as f64, &k, &cfg, &mut rng);
            if det.detected {
                hits += 1;
                assert!(det.iou > 0.0 && det.iou <= 1.0, "iou {}", det.iou);
                assert!(det.est_distance.unwrap() >= 0.0);
            } else {
                assert_eq!(det.iou, 0.0);
                assert_eq!(det.est_distance, None);
            }
        }
        assert!(hits > 0, "expected at least some detections close in");
    }

    #[test]
    fn controller_cruises_when_blind_or_clear_ahead() {
        let cfg = ControllerConfig::default();
        let blind = behavior_control(&DetectionResult::miss(), 5.0, &cfg);
        assert!((blind.throttle() - 1.0).abs() < 1e-12, "0.3 * 10 clamps to 1");
        assert_eq!(blind.brake(), 0.0);

        let far = DetectionResult {
            detected: true,
            est_distance: Some(200.0),
            iou: 0.9,
        };
        let ctl = behavior_control(&far, 5.0, &cfg);
        assert!((ctl.throttle() - 1.0).abs() < 1e-12);
        // At cruise speed the throttle goal is zero.
        let ctl = behavior_control(&far, 15.0, &cfg);
        assert_eq!(ctl.throttle(), 0.0);
        assert_eq!(ctl.brake(), 0.0);
    }

    #[test]
    fn controller_brakes_proportionally_when_close() {
        let cfg = ControllerConfig::default();
        // v = 10, est = 15: required = 100 / (2 * 10) = 5 -> brake 5/8.
        let det = DetectionResult {
            detected: true,
            est_distance: Some(15.0),
            iou: 0.5,
        };
        let ctl = behavior_control(&det, 10.0, &cfg);
        assert_eq!(ctl.throttle(), 0.0);
        assert!((ctl.brake() - 5.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn controller_saturates_brake_inside_standoff() {
        let cfg = ControllerConfig::default();
        // Estimate below the standoff: margin floors at 0.1 m, so the
        // required deceleration explodes and the pedal clamps to 1.
        let det = DetectionResult {
            detected: true,
            est_distance: Some(2.0),
            iou: 0.2,
        };
        let ctl = behavior_control(&det, 8.0, &cfg);
        assert_eq!(ctl.brake(), 1.0);
    }

    #[test]
    fn throttle_cap_binds_near_the_standoff() {
        let cfg = ControllerConfig::default();
        // Slow ego just outside the standoff: stopping needs little
        // deceleration, but accelerating would cross the standoff next tick.
        let det = DetectionResult {
            detected: true,
            est_distance: Some(5.4),
            iou: 0.8,
        };
        let ctl = behavior_control(&det, 1.0, &cfg);
        // speed_limit = 0.4/0.1 = 4.0 -> cap = (4 - 1)/0.3 = 10 -> cruise wins.
        assert!(ctl.throttle() > 0.0);
        let closer = DetectionResult {
            detected: true,
            est_distance: Some(5.05),
            iou: 0.8,
        };
        // required = 1/(2*0.1) = 5 >= comfort -> brake branch.
        let ctl = behavior_control(&closer, 1.0, &cfg);
        assert!(ctl.brake() > 0.0);
    }

    proptest! {
        /// Visibility is monotone non-increasing in each density knob.
        #[test]
        fn visibility_monotone_in_densities(
            fog in 0.0..=1.0f64,
            rain in 0.0..=1.0f64,
            dep in 0.0..=1.0f64,
            alt in -90.0..=90.0f64,
            az in 0.0..360.0f64,
            bump in 0.01..=0.5f64,
        ) {
            let cfg = PerceptionConfig::default();
            let base = knobs(fog, rain, dep, alt, az);
            let v0 = visibility(&base, &cfg);
            prop_assert!((0.0..=1.0).contains(&v0));
            for i in 0..3 {
                let mut arr = base.as_array();
                arr[i] = (arr[i] + bump).min(1.0);
                let v1 = visibility(&KnobState::from_array(arr), &cfg);
                prop_assert!(v1 <= v0 + 1e-12, "knob {i}: {v0} -> {v1}");
            }
        }

        /// The controller never presses both pedals and both stay in [0, 1].
        #[test]
        fn controller_output_well_formed(
            detected in proptest::bool::ANY,
            est in 0.0..250.0f64,
            iou in 0.0..=1.0f64,
            speed in 0.0..30.0f64,
        ) {
            let det = if detected {
                DetectionResult { detected, est_distance: Some(est), iou }
            } else {
                DetectionResult::miss()
            };
            let ctl = behavior_control(&det, speed, &ControllerConfig::default());
            prop_assert!((0.0..=1.0).contains(&ctl.throttle()));
            prop_assert!((0.0..=1.0).contains(&ctl.brake()));
            prop_assert!(ctl.throttle() * ctl.brake() == 0.0);
        }
    }
}
