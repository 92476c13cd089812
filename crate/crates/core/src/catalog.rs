//! Scenario catalogs: bulk generation, persistence and subset selection.
//!
//! A catalog is a versioned JSON document holding a list of [`Scene`]s plus
//! the seed that generated them. Generation is counter-seeded per scene
//! (`derive_seed(seed, index)`), so catalogs are reproducible and individual
//! scenes can be regenerated without replaying the whole deck. Lead-brake
//! events are placed in equal segments of the horizon, which guarantees the
//! sorted/non-overlapping invariant by construction.
//!
//! Loading is strict: unknown schema versions are refused before parsing,
//! unknown fields are rejected, and every scene re-runs its structural
//! validation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::rng::{derive_seed, Rng};
use crate::sim::{CutIn, LeadEvent, Scene};

/// Schema version for catalog files written by this build.
pub const CATALOG_SCHEMA_VERSION: u32 = 1;

/// A generated scenario deck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCatalog {
    pub schema_version: u32,
    /// Seed the deck was generated from (provenance, not re-used at load).
    pub generator_seed: u64,
    pub scenes: Vec<Scene>,
}

/// Knobs of the scenario generator. All `*_range` fields are inclusive
/// `[lo, hi]` bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Number of scenes to generate.
    pub count: usize,
    /// Initial bumper-to-bumper gap, metres.
    pub gap_range: [f64; 2],
    /// Initial ego speed, m/s.
    pub ego_speed_range: [f64; 2],
    /// Initial lead speed, m/s.
    pub lead_speed_range: [f64; 2],
    /// How many lead-brake events a scene gets.
    pub brake_event_count_range: [u32; 2],
    /// Lead target speed during a brake event, m/s.
    pub brake_target_range: [f64; 2],
    /// Brake event length, ticks.
    pub brake_duration_range: [u32; 2],
    /// Probability that a scene contains a cut-in.
    pub cut_in_probability: f64,
    /// Cut-in trigger tick.
    pub cut_in_trigger_range: [u32; 2],
    /// Gap at which the cut-in vehicle inserts, metres.
    pub cut_in_gap_range: [f64; 2],
    /// Speed of the inserted vehicle, m/s.
    pub cut_in_speed_range: [f64; 2],
    /// Episode horizon the events are laid out within, ticks.
    pub horizon_ticks: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            count: 1200,
            gap_range: [15.0, 60.0],
            ego_speed_range: [8.0, 15.0],
            lead_speed_range: [6.0, 14.0],
            brake_event_count_range: [1, 3],
            brake_target_range: [0.0, 8.0],
            brake_duration_range: [20, 80],
            cut_in_probability: 0.3,
            cut_in_trigger_range: [64, 256],
            cut_in_gap_range: [15.0, 30.0],
            cut_in_speed_range: [6.0, 14.0],
            horizon_ticks: 512,
        }
    }
}

impl GeneratorConfig {
    /// Domain checks: ordered ranges, sane probability, enough horizon to
    /// place the maximum number of events.
    pub fn validate(&self) -> Result<(), Error> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("generator.count must be >= 1".into()));
        }
        let float_ranges = [
            ("gap_range", self.gap_range, 1e-9),
            ("ego_speed_range", self.ego_speed_range, 0.0),
            ("lead_speed_range", self.lead_speed_range, 0.0),
            ("brake_target_range", self.brake_target_range, 0.0),
            ("cut_in_gap_range", self.cut_in_gap_range, 1e-9),
            ("cut_in_speed_range", self.cut_in_speed_range, 0.0),
        ];
        for (name, [lo, hi], min_lo) in float_ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min_lo) {
                return Err(Error::InvalidConfig(format!(
                    "generator.{name} must be an ordered non-negative range, got [{lo}, {hi}]"
                )));
            }
        }
        for (name, [lo, hi]) in [
            ("brake_event_count_range", self.brake_event_count_range),
            ("brake_duration_range", self.brake_duration_range),
            ("cut_in_trigger_range", self.cut_in_trigger_range),
        ] {
            if lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "generator.{name} must be ordered, got [{lo}, {hi}]"
                )));
            }
        }
        if self.brake_duration_range[0] == 0 {
            return Err(Error::InvalidConfig("generator.brake_duration_range must start at >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cut_in_probability) {
            return Err(Error::InvalidConfig(format!(
                "generator.cut_in_probability must be in [0, 1], got {}",
                self.cut_in_probability
            )));
        }
        let max_events = self.brake_event_count_range[1].max(1);
        if self.horizon_ticks / max_events < 2 {
            return Err(Error::InvalidConfig(format!(
                "generator.horizon_ticks ({}) too short for up to {max_events} events",
                self.horizon_ticks
            )));
        }
        Ok(())
    }
}

/// Generates a catalog of `cfg.count` scenes from `seed`.
///
/// Scene `i` draws everything from the stream `derive_seed(seed, i)`, in a
/// fixed order; its `noise_seed` is the final draw of that stream.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<SceneCatalog, Error> {
    cfg.validate()?;
    let mut scenes = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = Rng::new(derive_seed(seed, i as u64));
        let initial_gap = rng.range_f64(cfg.gap_range[0], cfg.gap_range[1]);
        let ego_speed0 = rng.range_f64(cfg.ego_speed_range[0], cfg.ego_speed_range[1]);
        let lead_speed0 = rng.range_f64(cfg.lead_speed_range[0], cfg.lead_speed_range[1]);

        let n_events =
            rng.range_u64(cfg.brake_event_count_range[0] as u64, cfg.brake_event_count_range[1] as u64) as u32;
        let mut lead_events = Vec::with_capacity(n_events as usize);
        if let Some(segment) = cfg.horizon_ticks.checked_div(n_events) {
            for j in 0..n_events {
                let seg_start = j * segment;
                let duration = rng
                    .range_u64(cfg.brake_duration_range[0] as u64, cfg.brake_duration_range[1] as u64)
                    as u32;
                let duration = duration.min(segment - 1).max(1);
                let start_tick = rng.range_u64(seg_start as u64, (seg_start + segment - duration) as u64) as u32;
                let target_speed = rng.range_f64(cfg.brake_target_range[0], cfg.brake_target_range[1]);
                lead_events.push(LeadEvent {
                    start_tick,
                    duration_ticks: duration,
                    target_speed,
                });
            }
        }

        let cut_in = if rng.next_f64() < cfg.cut_in_probability {
            Some(CutIn {
                trigger_tick: rng
                    .range_u64(cfg.cut_in_trigger_range[0] as u64, cfg.cut_in_trigger_range[1] as u64)
                    as u32,
                inserted_gap: rng.range_f64(cfg.cut_in_gap_range[0], cfg.cut_in_gap_range[1]),
                inserted_speed: rng.range_f64(cfg.cut_in_speed_range[0], cfg.cut_in_speed_range[1]),
            })
        } else {
            None
        };

        let scene = Scene {
            scene_id: format!("scene-{i:05}"),
            initial_gap,
            ego_speed0,
            lead_speed0,
            lead_events,
            cut_in,
            noise_seed: rng.next_u64(),
        };
        scene.validate()?;
        scenes.push(scene);
    }
    Ok(SceneCatalog {
        schema_version: CATALOG_SCHEMA_VERSION,
        generator_seed: seed,
        scenes,
    })
}

/// Writes a catalog as pretty JSON.
pub fn save(catalog: &SceneCatalog, path: &Path) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(catalog).expect("catalog serialization is infallible");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a catalog: schema gate first, then a strict parse, then structural
/// validation of every scene and scene-id uniqueness.
pub fn load(path: &Path) -> Result<SceneCatalog, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: u32,
    }
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    if probe.schema_version != CATALOG_SCHEMA_VERSION {
        return Err(Error::UnsupportedSchema {
            path: path.to_path_buf(),
            found: probe.schema_version,
            supported: CATALOG_SCHEMA_VERSION,
        });
    }
    let catalog: SceneCatalog = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    let mut ids = BTreeSet::new();
    for scene in &catalog.scenes {
        scene.validate()?;
        if !ids.insert(scene.scene_id.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "catalog {} contains duplicate scene_id `{}`",
                path.display(),
                scene.scene_id
            )));
        }
    }
    Ok(catalog)
}

/// Deterministically picks `n` distinct scenes via a partial Fisher-Yates
/// shuffle seeded by `seed`. The same `(catalog, n, seed)` always returns the
/// same subset in the same order.
pub fn select_test_subset(catalog: &SceneCatalog, n: usize, seed: u64) -> Result<Vec<Scene>, Error> {
    if n > catalog.scenes.len() {
        return Err(Error::InvalidArgument(format!(
            "subset of {n} requested from a catalog of {}",
            catalog.scenes.len()
        )));
    }
    let mut rng = Rng::new(derive_seed(seed, 0x5e1ec7));
    let mut indices: Vec<usize> = (0..catalog.scenes.len()).collect();
    for j in 0..n {
        let k = j + rng.below((indices.len() - j) as u64) as usize;
        indices.swap(j, k);
    }
    Ok(indices[..n].iter().map(|&i| catalog.scenes[i].clone()).collect())
}

/// SHA-256 of a file's bytes, hex-encoded (recorded in run manifests so an
/// evaluation can be tied to the exact catalog it ran against).
pub fn file_sha256_hex(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
