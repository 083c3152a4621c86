//! Numeric and selection core for building DPO preference data.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is a
//! pure function of its inputs:
//!
//! * [`preference`]: Bradley–Terry probabilities, reward-model loss, KL
//!   divergence, the DPO loss and its analytic gradient, plus small
//!   gradient-descent trainers used to check the math end to end.
//! * [`selection`]: best-image argmax and best/worst response pairing with
//!   explicit tie-breaking.
//! * [`analysis`]: guidance-scale histograms, top-k overlap between scorer
//!   rankings and judge tallies.
//! * [`seeding`]: platform-stable hashing used for per-candidate seeds and
//!   for the deterministic mock model formulas in [`mock_model`].
//!
//! IO, networking and file formats live in the std companion crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod mock_model;
pub mod preference;
pub mod seeding;
pub mod selection;

pub use error::{Error, Result};
