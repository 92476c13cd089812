//! Longitudinal two-vehicle microsimulator with parametric weather.
//!
//! The world is a straight single lane: an ego vehicle follows a scripted
//! lead vehicle. Ego acceleration comes from a [`ControlSignal`] (produced by
//! the perception-driven controller), the lead follows piecewise-constant
//! speed targets from its [`Scene`] script under a symmetric acceleration
//! bound, and an optional cut-in event swaps in a new lead at a configured
//! gap. Integration is semi-implicit Euler: speeds update first, positions
//! advance with the *new* speeds.
//!
//! Weather and lighting live in [`KnobState`]: five continuous knobs (fog,
//! precipitation, deposits, sun altitude, sun azimuth) that the adversary
//! nudges through [`apply_action`]. A single action may move each knob by at
//! most [`PERTURBATION_LIMIT`] of its span, and knobs can never leave their
//! documented ranges — actions are clamped, never rejected.
//!
//! Collisions clamp the ego to the lead's rear bumper (gap exactly zero) on
//! the impact tick, preserving the impact speed for that tick's scoring; from
//! the next tick on both vehicles are stopped and the world is inert.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of adversary-controlled weather/lighting knobs.
pub const KNOB_COUNT: usize = 5;

/// Fraction of a knob's span one action may move it: 5%.
pub const PERTURBATION_LIMIT: f64 = 0.05;

/// Span of each knob's range, in knob units, indexed like
/// [`KnobState::as_array`]. Azimuth is circular, so its span is the full turn.
pub const KNOB_SPANS: [f64; KNOB_COUNT] = [1.0, 1.0, 1.0, 180.0, 360.0];

// ─────────────────────────────────────────────────────────────────────────────
// Weather knobs
// ─────────────────────────────────────────────────────────────────────────────

/// The adversary-facing weather and lighting state.
///
/// Invariants (maintained by every constructor and by [`apply_action`]):
/// densities in [0, 1], altitude in [-90, 90] degrees, azimuth in [0, 360)
/// degrees (wrapping).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnobState {
    /// Fog density, 0 = clear, 1 = opaque.
    pub fog_density: f64,
    /// Rainfall intensity, 0 = dry, 1 = downpour.
    pub precipitation: f64,
    /// Water film / spray deposits on the sensor, 0 = clean, 1 = soaked.
    pub precipitation_deposits: f64,
    /// Sun altitude above the horizon, degrees in [-90, 90].
    pub sun_altitude: f64,
    /// Sun azimuth, degrees in [0, 360), measured against the ego heading.
    pub sun_azimuth: f64,
}

impl KnobState {
    /// Benign daylight: no weather, sun overhead.
    pub fn clear() -> Self {
        KnobState {
            fog_density: 0.0,
            precipitation: 0.0,
            precipitation_deposits: 0.0,
            sun_altitude: 90.0,
            sun_azimuth: 0.0,
        }
    }

    /// Returns a copy with every knob forced into its range (azimuth wraps,
    /// the rest clamp).
    pub fn clamped(self) -> Self {
        KnobState {
            fog_density: self.fog_density.clamp(0.0, 1.0),
            precipitation: self.precipitation.clamp(0.0, 1.0),
            precipitation_deposits: self.precipitation_deposits.clamp(0.0, 1.0),
            sun_altitude: self.sun_altitude.clamp(-90.0, 90.0),
            sun_azimuth: self.sun_azimuth.rem_euclid(360.0),
        }
    }

    /// True when every knob is inside its documented range.
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.fog_density)
            && (0.0..=1.0).contains(&self.precipitation)
            && (0.0..=1.0).contains(&self.precipitation_deposits)
            && (-90.0..=90.0).contains(&self.sun_altitude)
            && (0.0..360.0).contains(&self.sun_azimuth)
    }

    /// Knobs as a fixed-order array: fog, precipitation, deposits, altitude,
    /// azimuth. This order is shared by actions, spans and episode logs.
    pub fn as_array(&self) -> [f64; KNOB_COUNT] {
        [
            self.fog_density,
            self.precipitation,
            self.precipitation_deposits,
            self.sun_altitude,
            self.sun_azimuth,
        ]
    }

    /// Inverse of [`KnobState::as_array`].
    pub fn from_array(a: [f64; KNOB_COUNT]) -> Self {
        KnobState {
            fog_density: a[0],
            precipitation: a[1],
            precipitation_deposits: a[2],
            sun_altitude: a[3],
            sun_azimuth: a[4],
        }
    }
}

/// Applies one adversary action to the knobs.
///
/// Each raw component is clamped to [-1, 1] and scaled to at most
/// [`PERTURBATION_LIMIT`] of the knob's span; bounded knobs then clamp to
/// their range while azimuth wraps modulo 360. The input state is assumed
/// valid; the output always is.
pub fn apply_action(knobs: &KnobState, raw: [f64; KNOB_COUNT]) -> KnobState {
    let mut a = knobs.as_array();
    for (i, (v, span)) in a.iter_mut().zip(KNOB_SPANS).enumerate() {
        *v += raw[i].clamp(-1.0, 1.0) * PERTURBATION_LIMIT * span;
    }
    KnobState::from_array(a).clamped()
}

// ─────────────────────────────────────────────────────────────────────────────
// Scenes
// ─────────────────────────────────────────────────────────────────────────────

/// One piecewise-constant lead-speed command: from `start_tick` for
/// `duration_ticks`, the lead steers its speed toward `target_speed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadEvent {
    pub start_tick: u32,
    pub duration_ticks: u32,
    /// Desired lead speed, m/s (>= 0).
    pub target_speed: f64,
}

impl LeadEvent {
    /// First tick after the event window.
    pub fn end_tick(&self) -> u32 {
        self.start_tick.saturating_add(self.duration_ticks)
    }
}

/// A cut-in: at `trigger_tick` the current lead is replaced by a vehicle
/// inserted `inserted_gap` metres ahead of the ego, moving at
/// `inserted_speed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutIn {
    pub trigger_tick: u32,
    /// Bumper-to-bumper gap at insertion, metres (> 0).
    pub inserted_gap: f64,
    /// Speed of the inserted vehicle, m/s (>= 0).
    pub inserted_speed: f64,
}

/// A reproducible traffic scenario: initial conditions, the lead's script and
/// the seed for all perception noise drawn during the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scene_id: String,
    /// Initial bumper-to-bumper gap, metres (> 0).
    pub initial_gap: f64,
    /// Initial ego speed, m/s (>= 0).
    pub ego_speed0: f64,
    /// Initial lead speed, m/s (>= 0).
    pub lead_speed0: f64,
    /// Sorted, non-overlapping speed commands for the lead.
    pub lead_events: Vec<LeadEvent>,
    /// Optional cut-in event.
    #[serde(default)]
    pub cut_in: Option<CutIn>,
    /// Root seed for this scene's perception noise streams.
    pub noise_seed: u64,
}

impl Scene {
    /// Structural checks: finite positive gap, non-negative speeds, sorted
    /// non-overlapping events with sane targets, positive cut-in gap.
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |reason: &str| {
            Err(Error::InvalidScene {
                scene_id: self.scene_id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.initial_gap.is_finite() && self.initial_gap > 0.0) {
            return fail("initial_gap must be finite and > 0");
        }
        if !(self.ego_speed0.is_finite() && self.ego_speed0 >= 0.0) {
            return fail("ego_speed0 must be finite and >= 0");
        }
        if !(self.lead_speed0.is_finite() && self.lead_speed0 >= 0.0) {
            return fail("lead_speed0 must be finite and >= 0");
        }
        let mut prev_end = 0u32;
        for (i, ev) in self.lead_events.iter().enumerate() {
            if ev.duration_ticks == 0 {
                return fail(&format!("lead_events[{i}] has zero duration"));
            }
            if !(ev.target_speed.is_finite() && ev.target_speed >= 0.0) {
                return fail(&format!("lead_events[{i}] target_speed must be finite and >= 0"));
            }
            if i > 0 && ev.start_tick < prev_end {
                return fail(&format!("lead_events[{i}] overlaps or is out of order"));
            }
            prev_end = ev.end_tick();
        }
        if let Some(c) = &self.cut_in {
            if !(c.inserted_gap.is_finite() && c.inserted_gap > 0.0) {
                return fail("cut_in.inserted_gap must be finite and > 0");
            }
            if !(c.inserted_speed.is_finite() && c.inserted_speed >= 0.0) {
                return fail("cut_in.inserted_speed must be finite and >= 0");
            }
        }
        Ok(())
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Simulator configuration and state
// ─────────────────────────────────────────────────────────────────────────────

/// Physical constants of the microsimulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step, seconds.
    pub dt: f64,
    /// Ego acceleration at full throttle, m/s^2.
    pub accel_max: f64,
    /// Ego deceleration at full brake, m/s^2.
    pub decel_max: f64,
    /// Ego speed ceiling, m/s.
    pub speed_cap: f64,
    /// Vehicle length used for gap computation, metres.
    pub vehicle_length: f64,
    /// Lead acceleration bound (both signs), m/s^2.
    pub lead_accel_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            accel_max: 3.0,
            decel_max: 8.0,
            speed_cap: 30.0,
            vehicle_length: 4.5,
            lead_accel_max: 4.0,
        }
    }
}

impl SimConfig {
    /// Domain checks on the physical constants.
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("dt", self.dt),
            ("accel_max", self.accel_max),
            ("decel_max", self.decel_max),
            ("speed_cap", self.speed_cap),
            ("vehicle_length", self.vehicle_length),
            ("lead_accel_max", self.lead_accel_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "sim.{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Complete world state at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u32,
    /// Ego front-bumper position, metres along the lane.
    pub ego_pos: f64,
    pub ego_speed: f64,
    /// Lead front-bumper position, metres along the lane.
    pub lead_pos: f64,
    pub lead_speed: f64,
    pub knobs: KnobState,
    /// Latched true from the first tick of contact onward.
    pub collided: bool,
}

impl WorldState {
    /// World at tick 0 of a scene, in clear weather.
    pub fn init(scene: &Scene, cfg: &SimConfig) -> Self {
        WorldState {
            tick: 0,
            ego_pos: 0.0,
            ego_speed: scene.ego_speed0,
            lead_pos: scene.initial_gap + cfg.vehicle_length,
            lead_speed: scene.lead_speed0,
            knobs: KnobState::clear(),
            collided: false,
        }
    }

    /// Bumper-to-bumper gap: `lead_pos - ego_pos - vehicle_length`.
    pub fn gap(&self, cfg: &SimConfig) -> f64 {
        self.lead_pos - self.ego_pos - cfg.vehicle_length
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Ego control input
// ─────────────────────────────────────────────────────────────────────────────

/// Normalized ego pedal command. Fields are private so the "at most one pedal
/// pressed, both in [0, 1]" invariant cannot be violated from outside.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSignal {
    throttle: f64,
    brake: f64,
}

impl ControlSignal {
    /// Neither pedal pressed.
    pub fn coast() -> Self {
        ControlSignal::default()
    }

    /// Throttle-only command; the value clamps to [0, 1].
    pub fn with_throttle(x: f64) -> Self {
        ControlSignal {
            throttle: x.clamp(0.0, 1.0),
            brake: 0.0,
        }
    }

    /// Brake-only command; the value clamps to [0, 1].
    pub fn with_brake(x: f64) -> Self {
        ControlSignal {
            throttle: 0.0,
            brake: x.clamp(0.0, 1.0),
        }
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    pub fn brake(&self) -> f64 {
        self.brake
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Dynamics
// ─────────────────────────────────────────────────────────────────────────────

/// The lead's current speed target: the active scripted event if any,
/// otherwise the inserted vehicle's speed after a cut-in, otherwise the
/// scene's initial lead speed.
fn lead_target_speed(scene: &Scene, tick: u32, cut_in_done: bool) -> f64 {
    for ev in &scene.lead_events {
        if tick >= ev.start_tick && tick < ev.end_tick() {
            return ev.target_speed;
        }
    }
    match (&scene.cut_in, cut_in_done) {
        (Some(c), true) => c.inserted_speed,
        _ => scene.lead_speed0,
    }
}

/// Advances the world by one tick.
///
/// Order of operations: cut-in replacement (if this is the trigger tick),
/// lead speed tracking under the acceleration bound, ego semi-implicit Euler
/// update, then contact check. On contact the ego is clamped to the lead's
/// rear bumper with its impact speed preserved for this tick; a collided
/// world is inert (speeds zero, positions frozen) ever after.
pub fn step(world: &WorldState, control: &ControlSignal, scene: &Scene, cfg: &SimConfig) -> WorldState {
    let tick = world.tick + 1;
    if world.collided {
        return WorldState {
            tick,
            ego_speed: 0.0,
            lead_speed: 0.0,
            ..*world
        };
    }

    // Lead: possibly replaced by a cut-in, then tracks its target speed.
    let mut lead_pos = world.lead_pos;
    let mut lead_speed = world.lead_speed;
    let cut_in_done = scene.cut_in.as_ref().is_some_and(|c| world.tick >= c.trigger_tick);
    if let Some(c) = &scene.cut_in {
        if world.tick == c.trigger_tick {
            lead_pos = world.ego_pos + cfg.vehicle_length + c.inserted_gap;
            lead_speed = c.inserted_speed;
        }
    }
    let target = lead_target_speed(scene, world.tick, cut_in_done);
    let dv_bound = cfg.lead_accel_max * cfg.dt;
    let new_lead_speed = (lead_speed + (target - lead_speed).clamp(-dv_bound, dv_bound)).max(0.0);
    let new_lead_pos = lead_pos + new_lead_speed * cfg.dt;

    // Ego: pedal command -> acceleration -> semi-implicit Euler.
    let accel = control.throttle() * cfg.accel_max - control.brake() * cfg.decel_max;
    let new_ego_speed = (world.ego_speed + accel * cfg.dt).clamp(0.0, cfg.speed_cap);
    let mut new_ego_pos = world.ego_pos + new_ego_speed * cfg.dt;

    let mut collided = false;
    if new_lead_pos - new_ego_pos - cfg.vehicle_length <= 0.0 {
        collided = true;
        new_ego_pos = new_lead_pos - cfg.vehicle_length;
    }

    WorldState {
        tick,
        ego_pos: new_ego_pos,
        ego_speed: new_ego_speed,
        lead_pos: new_lead_pos,
        lead_speed: new_lead_speed,
        knobs: world.knobs,
        collided,
    }
}
