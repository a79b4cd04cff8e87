//! Interactive reward shaping from binary human feedback.
//!
//! A deep Q-learner is trained on the environment reward augmented with two
//! binary bonuses predicted by a bootstrapped ensemble of feedback networks:
//! one for taking the action the feedback model believes is best, one for
//! reaching a state the feedback model believes is good. Labels come from a
//! human operator through the HTTP [`service`], or from the scripted
//! [`oracle`] for automated runs.

pub mod agent;
pub mod buffers;
pub mod cli;
pub mod envs;
pub mod error;
pub mod fnn;
pub mod nnet;
pub mod oracle;
pub mod plot;
pub mod rng;
pub mod service;
pub mod shaping;
pub mod trainer;

pub use error::{Error, Result};
