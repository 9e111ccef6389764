//! Looped decoder-only transformers with adaptive depth, trained from
//! scratch on algorithmic sequence tasks, plus the exact sequence-program
//! oracles that define the tasks.
//!
//! The crate is organized bottom-up:
//!
//! - [`vocab`]: the shared token table.
//! - [`rasp`]: causal, length-preserving integer sequence primitives.
//! - [`programs`]: loop-form reference programs and direct task oracles.
//! - [`taskgen`]: online instance sampling, encodings, and the curriculum.
//! - [`tensor`], [`tape`], [`optim`], [`checkpoint`]: the training engine.
//! - [`model`]: the weight-tied looped transformer block.
//! - [`trainer`]: step-supervised training and the baseline modes.
//! - [`inference`]: adaptive-depth inference and evaluation.

pub mod checkpoint;
pub mod inference;
pub mod model;
pub mod optim;
pub mod programs;
pub mod rasp;
pub mod tape;
pub mod taskgen;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod vocab;
