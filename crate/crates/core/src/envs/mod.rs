//! Environments with delayed or terminal-only reward.
//!
//! Both environments are deterministic given the reset seed and small enough
//! that an exact optimal policy can be computed by dynamic programming. The
//! [`OptimalSolver`] for a layout is what the scripted feedback oracle uses to
//! decide whether an action or a state is good.

pub mod aimline;
pub mod gaterun;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aimline::{AimLine, AimLineConfig, AimLineSolver};
pub use gaterun::{GateRun, GateRunConfig, GateRunSolver};
pub use render::RenderFrame;

use crate::error::{Error, Result};

/// Discount used by the exact solvers when ranking actions and states.
pub const SOLVER_DISCOUNT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub observation_dim: usize,
    pub action_count: usize,
    pub action_names: Vec<String>,
    pub max_episode_steps: usize,
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.action_count < 2 || self.observation_dim < 1 || self.max_episode_steps < 1 {
            return Err(Error::config(format!("degenerate MDP spec {self:?}")));
        }
        if self.action_names.len() != self.action_count {
            return Err(Error::config("action_names length must equal action_count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub render: RenderFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    AimLine,
    GateRun,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::AimLine => "aimline",
            EnvId::GateRun => "gaterun",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aimline" => Ok(EnvId::AimLine),
            "gaterun" => Ok(EnvId::GateRun),
            other => Err(Error::config(format!("unknown environment id {other:?}"))),
        }
    }
}

/// Sizes for either environment; `None` fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aimline: Option<AimLineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaterun: Option<GateRunConfig>,
}

pub trait Environment: Send {
    fn id(&self) -> EnvId;
    fn spec(&self) -> &MdpSpec;
    fn reset(&mut self, seed: u64) -> (Vec<f64>, RenderFrame);
    fn step(&mut self, action: usize) -> Result<StepResult>;
    /// Exact solution for the layout generated by `seed`.
    fn solver(&self, seed: u64) -> Result<Box<dyn OptimalSolver>>;
    fn boxed_clone(&self) -> Box<dyn Environment>;
}

/// Exact optimal behaviour on one layout.
pub trait OptimalSolver: Send + Sync {
    /// The unique best action; ties are resolved by an env-specific
    /// preference and then by lowest index.
    fn optimal_action(&self, obs: &[f64]) -> Result<usize>;
    /// Discounted optimal value of the state encoded by `obs`.
    fn state_value(&self, obs: &[f64]) -> Result<f64>;
    /// Score the feedback oracle ranks states by when labelling them good or bad.
    fn state_score(&self, obs: &[f64]) -> Result<f64> {
        self.state_value(obs)
    }
}

pub fn make_env(id: EnvId, config: &EnvConfig) -> Result<Box<dyn Environment>> {
    Ok(match id {
        EnvId::AimLine => Box::new(AimLine::new(config.aimline.clone().unwrap_or_default())?),
        EnvId::GateRun => Box::new(GateRun::new(config.gaterun.clone().unwrap_or_default())?),
    })
}

pub fn make_env_by_name(name: &str) -> Result<Box<dyn Environment>> {
    make_env(name.parse()?, &EnvConfig::default())
}

/// Plays the solver's policy from `reset(seed)` and returns the undiscounted return.
pub fn optimal_return(env: &mut dyn Environment, seed: u64) -> Result<f64> {
    let solver = env.solver(seed)?;
    let (mut obs, _) = env.reset(seed);
    let mut total = 0.0;
    for _ in 0..env.spec().max_episode_steps {
        let step = env.step(solver.optimal_action(&obs)?)?;
        total += step.reward;
        obs = step.next_observation;
        if step.terminal {
            break;
        }
    }
    Ok(total)
}

pub(crate) fn check_obs_len(obs: &[f64], dim: usize) -> Result<()> {
    if obs.len() != dim {
        return Err(Error::usage(format!(
            "observation has length {}, expected {dim}",
            obs.len()
        )));
    }
    Ok(())
}

/// Index of the largest score; ties within `tol` go to the lowest index.
pub(crate) fn argmax_with_tol(scores: &[f64], tol: f64) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] + tol {
            best = i;
        }
    }
    best
}
