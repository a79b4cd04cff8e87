use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::buffers::{MaskDistribution, TrajectoryPriority, DEFAULT_REPLAY_CAPACITY};
use crate::envs::{EnvConfig, EnvId};
use crate::error::{Error, Result};
use crate::fnn::FnnConfig;
use crate::oracle::OracleConfig;
use crate::shaping::ShapingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSourceKind {
    Oracle,
    Interactive,
    None,
}

impl std::str::FromStr for FeedbackSourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "interactive" => Ok(Self::Interactive),
            "none" => Ok(Self::None),
            other => Err(Error::usage(format!("unknown feedback source {other:?}"))),
        }
    }
}

/// Which kinds of label a session collects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKinds {
    #[default]
    Both,
    ActionsOnly,
    StatesOnly,
}

impl FeedbackKinds {
    pub fn wants_actions(self) -> bool {
        self != FeedbackKinds::StatesOnly
    }

    pub fn wants_states(self) -> bool {
        self != FeedbackKinds::ActionsOnly
    }
}

impl std::str::FromStr for FeedbackKinds {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "actions_only" | "actions" => Ok(Self::ActionsOnly),
            "states_only" | "states" => Ok(Self::StatesOnly),
            other => Err(Error::usage(format!("unknown feedback type {other:?}"))),
        }
    }
}

/// When the shaped reward of a stored transition is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingTiming {
    /// From the feedback network current at each TD update.
    #[default]
    AtUpdate,
    /// Frozen when the transition is collected.
    AtCollection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub env_id: EnvId,
    pub env: EnvConfig,
    pub seed: u64,
    /// Random-play trajectories collected before any feedback.
    pub n_i: usize,
    /// Feedback records gathered before the first network fit; `None` picks a per-environment default.
    pub m_i: Option<usize>,
    /// Episodes between feedback sessions.
    pub n_c: u64,
    /// New records needed to trigger a refit of the feedback network.
    pub n_f: usize,
    pub total_episodes: u64,
    pub feedback_source: FeedbackSourceKind,
    pub feedback_type: FeedbackKinds,
    pub shaping: ShapingConfig,
    pub shaping_timing: ShapingTiming,
    pub fnn: FnnConfig,
    /// Epochs for the first fit on the initial feedback.
    pub initial_fnn_epochs: usize,
    pub masking: MaskDistribution,
    pub oracle: OracleConfig,
    pub agent: AgentConfig,
    pub replay_capacity: usize,
    pub priority: TrajectoryPriority,
    /// Episodes between checkpoints and greedy evaluations; 0 disables both.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Seconds an interactive session waits for operator activity.
    pub session_timeout_secs: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            env_id: EnvId::AimLine,
            env: EnvConfig::default(),
            seed: 0,
            n_i: 100,
            m_i: None,
            n_c: 30,
            n_f: 300,
            total_episodes: 1000,
            feedback_source: FeedbackSourceKind::Oracle,
            feedback_type: FeedbackKinds::Both,
            shaping: ShapingConfig::default(),
            shaping_timing: ShapingTiming::AtUpdate,
            fnn: FnnConfig::default(),
            initial_fnn_epochs: 100,
            masking: MaskDistribution::default(),
            oracle: OracleConfig::default(),
            agent: AgentConfig::default(),
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            priority: TrajectoryPriority::HighestReturn,
            eval_every: 0,
            eval_episodes: 20,
            session_timeout_secs: 600,
        }
    }
}

impl TrainRunConfig {
    pub fn for_env(env_id: EnvId) -> Self {
        TrainRunConfig { env_id, ..Self::default() }
    }

    /// The plain double-DQN arm: no feedback and no shaping.
    pub fn baseline(mut self) -> Self {
        self.feedback_source = FeedbackSourceKind::None;
        self.shaping.lambda_a = 0.0;
        self.shaping.lambda_s = 0.0;
        self
    }

    pub fn initial_feedback(&self) -> usize {
        self.m_i.unwrap_or(match self.env_id {
            EnvId::AimLine => 500,
            EnvId::GateRun => 1500,
        })
    }

    pub fn uses_feedback(&self) -> bool {
        self.feedback_source != FeedbackSourceKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.n_f == 0 {
            return Err(Error::config("n_c and n_f must be positive"));
        }
        if self.uses_feedback() && self.n_i == 0 {
            return Err(Error::config("feedback needs at least one random-play trajectory (n_i > 0)"));
        }
        if self.replay_capacity == 0 {
            return Err(Error::config("replay_capacity must be positive"));
        }
        self.shaping.validate()?;
        self.fnn.validate()?;
        self.masking.validate()?;
        self.oracle.validate()?;
        self.agent.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainRunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }
}
