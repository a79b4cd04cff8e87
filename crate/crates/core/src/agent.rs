//! Double DQN with an ε-greedy behaviour policy.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{read_network, write_network, Mode, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub sync_every: u64,
    /// Environment steps between TD updates.
    pub train_every: u64,
    /// Transitions collected before the first TD update.
    pub learning_starts: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            learning_rate: 1e-3,
            hidden: 64,
            batch_size: 32,
            sync_every: 500,
            train_every: 1,
            learning_starts: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0,1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("agent learning_rate must be positive"));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.sync_every == 0 || self.train_every == 0 {
            return Err(Error::config("hidden, batch_size, sync_every and train_every must be positive"));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> ExplorationSchedule {
        ExplorationSchedule {
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            decay_steps: self.epsilon_decay_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub decay_steps: u64,
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::config("epsilon values must lie in [0,1]"));
        }
        Ok(())
    }

    /// Linear from start to end over `decay_steps`, then flat.
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// A transition with its reward already shaped.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSample<'a> {
    pub observation: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub next_observation: &'a [f64],
    pub terminal: bool,
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn rows(observations: &[&[f64]]) -> Result<Array2<f64>> {
    let dim = observations.first().map_or(0, |o| o.len());
    let flat: Vec<f64> = observations.iter().flat_map(|o| o.iter().copied()).collect();
    Array2::from_shape_vec((observations.len(), dim), flat).map_err(|e| Error::usage(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkPair {
    pub online: Network,
    pub target: Network,
}

impl QNetworkPair {
    pub fn new<R: Rng + ?Sized>(observation_dim: usize, action_count: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let online = Network::mlp(&[observation_dim, hidden, hidden, action_count], rng)?;
        Ok(QNetworkPair { target: online.clone(), online })
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
    }

    pub fn action_count(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.online.infer(&rows(&[obs])?)?.row(0).to_vec())
    }

    pub fn greedy_action(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    /// ε-greedy; always consumes one uniform draw, plus one more when exploring.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::usage(format!("epsilon {epsilon} outside [0,1]")));
        }
        if rng.random::<f64>() < epsilon {
            Ok(rng.random_range(0..self.action_count()))
        } else {
            self.greedy_action(obs)
        }
    }

    /// `r` when terminal, else `r + γ·Q_target(s', argmax_a Q_online(s', a))`.
    pub fn double_q_targets(&self, batch: &[TdSample<'_>], gamma: f64) -> Result<Vec<f64>> {
        let next: Vec<&[f64]> = batch.iter().map(|s| s.next_observation).collect();
        let x = rows(&next)?;
        let online = self.online.infer(&x)?;
        let target = self.target.infer(&x)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.terminal {
                    s.reward
                } else {
                    let a = argmax(online.row(i).as_slice().expect("contiguous row"));
                    s.reward + gamma * target[[i, a]]
                }
            })
            .collect())
    }

    /// One SGD step on the mean squared TD error; returns the loss before the step.
    pub fn td_update(&mut self, batch: &[TdSample<'_>], gamma: f64, learning_rate: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::usage("empty TD batch"));
        }
        let targets = self.double_q_targets(batch, gamma)?;
        let obs: Vec<&[f64]> = batch.iter().map(|s| s.observation).collect();
        let q = self.online.forward(&rows(&obs)?, Mode::Train)?;
        let n = batch.len() as f64;
        let mut upstream = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, (s, y)) in batch.iter().zip(&targets).enumerate() {
            let err = q[[i, s.action]] - y;
            loss += err * err / n;
            upstream[[i, s.action]] = 2.0 * err / n;
        }
        if !loss.is_finite() {
            return Err(Error::numeric("TD loss is not finite"));
        }
        self.online.backward(&upstream)?;
        self.online.sgd_step(learning_rate)?;
        Ok(loss)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write_network(w, &self.online)?;
        write_network(w, &self.target)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let online = read_network(r)?;
        let target = read_network(r)?;
        Ok(QNetworkPair { online, target })
    }
}
