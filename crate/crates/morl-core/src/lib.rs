//! Core library for conditioning reinforcement-learning agents on logical
//! behavior specifications over multi-objective gridworlds.
//!
//! The crate is organized around six subsystems:
//!
//! - [`speclang`] — a propositional specification language with quantitative
//!   semantics mapping reward vectors in `[0,1]^n` to satisfaction degrees.
//! - [`gridworld`] — multi-objective gridworld MDPs with slip dynamics and
//!   per-objective reward maps.
//! - [`oracle`] — exact value-iteration baselines, rollout scoring, and
//!   normalized scores against optimal/random reference policies.
//! - [`neural`] — a small dense tensor library with reverse-mode gradients,
//!   a bidirectional GRU sequence encoder, and the Q-value head.
//! - [`agent`] — the specification-conditioned DQN: replay, specification
//!   augmentation, TD loss, target network, and the linear-goal variant.
//! - [`trainer`] — curriculum scheduling, spec-set management, and the
//!   training/evaluation orchestration loop.
//!
//! The crate is `no_std`-compatible (requires `alloc`); IO, file formats, and
//! the command-line surface live in the companion `morl-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod gridworld;
pub mod neural;
pub mod oracle;
pub mod rng;
pub mod speclang;
pub mod trainer;

pub use gridworld::{Action, GridSize, GridWorld, MOState, Transition, WorldError};
pub use speclang::{RewardVector, SpecAst, SpecError, TokenSequence};
