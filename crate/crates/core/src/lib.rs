//! World-in-the-loop search for perception edge cases.
//!
//! The crate couples three deterministic pieces:
//!
//! * a longitudinal two-vehicle microsimulator whose weather/lighting state is
//!   exposed as five continuous knobs ([`sim`]),
//! * a visibility-driven range sensor plus the braking controller that
//!   consumes it ([`perception`]),
//! * a rulebook that scores each realized trajectory for collision and
//!   unsafe-proximity violations ([`rulebook`]).
//!
//! On top of those sits a PPO agent ([`agent`]) that nudges the weather knobs
//! a few percent per tick, trying to make the controller violate the rulebook,
//! and a harness ([`harness`]) that trains, evaluates and replays episodes
//! reproducibly. Scenario decks come from [`catalog`]. Everything is seeded
//! through the counter RNG in [`rng`]; given the same config, seeds and
//! catalog, every artifact byte outside the run manifest's timestamp is
//! identical across runs and platforms.

pub mod agent;
pub mod catalog;
pub mod error;
pub mod harness;
pub mod perception;
pub mod rng;
pub mod rulebook;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
