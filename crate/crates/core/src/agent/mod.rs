//! The adversarial weather agent: a Gaussian PPO policy over knob nudges.
//!
//! Everything numeric is hand-rolled on `f64` slices — the networks are small
//! (two tanh hidden layers), and writing the forward/backward passes out by
//! hand keeps gradients exactly reproducible and directly checkable against
//! finite differences, which the test suite does.
//!
//! * [`net`]: plain MLPs with manual backprop and an Adam optimizer.
//! * [`policy`]: feature extraction, the diagonal-Gaussian action head and
//!   the two trivial baseline agents (uniform-random and all-zero).
//! * [`ppo`]: rollout storage, generalized advantage estimation, the clipped
//!   surrogate update and checkpointing.

pub mod net;
pub mod policy;
pub mod ppo;

pub use net::{Adam, Mlp};
pub use policy::{
    act_clear, act_random, featurize, gaussian_log_prob, sample_action, FeatureState,
    PolicyParams, ACTION_DIM, FEATURE_DIM, LOG_STD_MAX, LOG_STD_MIN,
};
pub use ppo::{gae, normalize_advantages, ppo_update, Checkpoint, PpoConfig, RolloutBuffer, TrainStats};
