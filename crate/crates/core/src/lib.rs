//! Mirrored Robbins–Monro: one recursion, many game-learning algorithms.
//!
//! Games and action sets live in [`games`], mirror maps in [`mirror`], gradient
//! signals in [`feedback`], the loop in [`engine`], mean dynamics in
//! [`dynamics`] and energy-based diagnostics in [`analysis`].

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod engine;
pub mod feedback;
pub mod games;
pub mod io;
pub mod mirror;
pub mod verify;

pub use config::ExperimentConfig;
pub use engine::{run, Algorithm, RunRecord, RunSpec, Schedule};
pub use games::GameSpec;
pub use mirror::{MirrorKind, MirrorMap};
