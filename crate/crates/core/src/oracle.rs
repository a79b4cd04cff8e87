//! Scripted feedback source standing in for a human operator.
//!
//! Action labels compare the proposed action with the exact optimal action.
//! State labels compare the solver's state score with a quantile of scores
//! gathered from random play. Noise is applied with a single uniform draw per
//! label so the oracle stream advances by exactly one value per call.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffers::Label;
use crate::envs::{Environment, OptimalSolver};
use crate::error::{Error, Result};
use crate::rng::{stream, RngState, Stream};

const SOLVER_CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleLabel {
    Good,
    Bad,
    NotSure,
}

impl OracleLabel {
    pub fn stored(self) -> Option<Label> {
        match self {
            OracleLabel::Good => Some(Label::Good),
            OracleLabel::Bad => Some(Label::Bad),
            OracleLabel::NotSure => None,
        }
    }
}

/// Noise levels that take effect from a given episode on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleDrift {
    pub at_episode: u64,
    pub error_rate: f64,
    pub not_sure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub error_rate: f64,
    pub not_sure_rate: f64,
    pub skip_after: Option<usize>,
    pub session_budget: usize,
    pub state_good_quantile: f64,
    pub seed: u64,
    /// Random-play episodes used to place the state quantile.
    pub reference_episodes: usize,
    pub drift: Option<OracleDrift>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            error_rate: 0.05,
            not_sure_rate: 0.1,
            skip_after: None,
            session_budget: 100,
            state_good_quantile: 0.8,
            seed: 0,
            reference_episodes: 50,
            drift: None,
        }
    }
}

impl OracleConfig {
    pub fn noiseless() -> Self {
        OracleConfig { error_rate: 0.0, not_sure_rate: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_rates(self.error_rate, self.not_sure_rate)?;
        if let Some(d) = &self.drift {
            check_rates(d.error_rate, d.not_sure_rate)?;
        }
        if !(self.state_good_quantile > 0.0 && self.state_good_quantile < 1.0) {
            return Err(Error::config("state_good_quantile must lie in (0,1)"));
        }
        if self.session_budget == 0 {
            return Err(Error::config("session_budget must be positive"));
        }
        if self.skip_after == Some(0) {
            return Err(Error::config("skip_after must be positive when set"));
        }
        if self.reference_episodes == 0 {
            return Err(Error::config("reference_episodes must be positive"));
        }
        Ok(())
    }
}

fn check_rates(error_rate: f64, not_sure_rate: f64) -> Result<()> {
    let ok = (0.0..1.0).contains(&error_rate) && (0.0..1.0).contains(&not_sure_rate) && error_rate + not_sure_rate < 1.0;
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("oracle rates error={error_rate} not_sure={not_sure_rate} are out of range")))
    }
}

pub struct Oracle {
    config: OracleConfig,
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    state_threshold: f64,
    solvers: HashMap<u64, Arc<dyn OptimalSolver>>,
    episode: u64,
}

impl Oracle {
    pub fn new(config: OracleConfig, env: &dyn Environment) -> Result<Self> {
        config.validate()?;
        let mut oracle = Oracle {
            rng: stream(config.seed, Stream::Oracle),
            env: env.boxed_clone(),
            state_threshold: 0.0,
            solvers: HashMap::new(),
            episode: 0,
            config,
        };
        let scores = oracle.reference_scores()?;
        oracle.state_threshold = quantile(&scores, oracle.config.state_good_quantile);
        Ok(oracle)
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn state_threshold(&self) -> f64 {
        self.state_threshold
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn restore_rng(&mut self, state: &RngState) -> Result<()> {
        self.rng = state.restore()?;
        Ok(())
    }

    /// Current episode, used to activate configured drift.
    pub fn set_episode(&mut self, episode: u64) {
        self.episode = episode;
    }

    fn rates(&self) -> (f64, f64) {
        match self.config.drift {
            Some(d) if self.episode >= d.at_episode => (d.error_rate, d.not_sure_rate),
            _ => (self.config.error_rate, self.config.not_sure_rate),
        }
    }

    /// States seen under uniformly random play, scored by their own layout's solver.
    pub fn reference_scores(&mut self) -> Result<Vec<f64>> {
        let mut rng = stream(self.config.seed, Stream::OracleReference);
        let actions = self.env.spec().action_count;
        let max_steps = self.env.spec().max_episode_steps;
        let mut scores = Vec::new();
        for _ in 0..self.config.reference_episodes {
            let seed: u64 = rng.random();
            let solver = self.solver(seed)?;
            let (mut obs, _) = self.env.reset(seed);
            scores.push(solver.state_score(&obs)?);
            for _ in 0..max_steps {
                let step = self.env.step(rng.random_range(0..actions))?;
                obs = step.next_observation;
                scores.push(solver.state_score(&obs)?);
                if step.terminal {
                    break;
                }
            }
        }
        Ok(scores)
    }

    pub fn solver(&mut self, env_seed: u64) -> Result<Arc<dyn OptimalSolver>> {
        if let Some(s) = self.solvers.get(&env_seed) {
            return Ok(Arc::clone(s));
        }
        if self.solvers.len() >= SOLVER_CACHE_LIMIT {
            self.solvers.clear();
        }
        let solver: Arc<dyn OptimalSolver> = Arc::from(self.env.solver(env_seed)?);
        self.solvers.insert(env_seed, Arc::clone(&solver));
        Ok(solver)
    }

    pub fn true_action_label(&mut self, obs: &[f64], action: usize, env_seed: u64) -> Result<Label> {
        let best = self.solver(env_seed)?.optimal_action(obs)?;
        Ok(if action == best { Label::Good } else { Label::Bad })
    }

    pub fn true_state_label(&mut self, obs: &[f64], env_seed: u64) -> Result<Label> {
        let score = self.solver(env_seed)?.state_score(obs)?;
        Ok(if score > self.state_threshold { Label::Good } else { Label::Bad })
    }

    pub fn label_action(&mut self, obs: &[f64], action: usize, env_seed: u64) -> Result<OracleLabel> {
        if action >= self.env.spec().action_count {
            return Err(Error::usage(format!("action {action} out of range")));
        }
        let base = self.true_action_label(obs, action, env_seed)?;
        Ok(self.perturb(base))
    }

    pub fn label_state(&mut self, obs: &[f64], env_seed: u64) -> Result<OracleLabel> {
        let base = self.true_state_label(obs, env_seed)?;
        Ok(self.perturb(base))
    }

    fn perturb(&mut self, base: Label) -> OracleLabel {
        let (error_rate, not_sure_rate) = self.rates();
        let u: f64 = self.rng.random();
        let label = if u < not_sure_rate {
            return OracleLabel::NotSure;
        } else if u < not_sure_rate + error_rate {
            base.flipped()
        } else {
            base
        };
        match label {
            Label::Good => OracleLabel::Good,
            Label::Bad => OracleLabel::Bad,
        }
    }
}

/// Lower empirical quantile: the value below which a fraction `q` of the sample lies.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}
