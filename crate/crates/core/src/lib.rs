//! Self-supervised discovery of experiments that expose hidden causal factors
//! in a toy block world, and binary causal embeddings built from them.
//!
//! The pipeline: [`envworld`] simulates blocks whose dynamics depend on hidden
//! factors; [`trajdist`] compares observed trajectories; [`curiosity`] scores
//! how cleanly an experiment splits a set of environments in two;
//! [`planner`] searches for the experiment maximizing that score;
//! [`hierarchy`] repeats the search recursively on each side of the split;
//! [`inference`] replays the learned experiments on new environments; and
//! [`downstream`] reuses discovered behaviours for reward-driven tasks.

pub mod curiosity;
pub mod downstream;
pub mod envworld;
pub mod error;
pub mod hierarchy;
pub mod inference;
pub mod planner;
pub mod trajdist;

pub use error::{Error, Result};
