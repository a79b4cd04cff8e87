use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::QNetworkPair;
use crate::envs::Environment;
use crate::error::Result;
use crate::fnn::EnsembleFnn;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    QGreedy,
    FnnPolicy,
}

impl std::str::FromStr for PolicyMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_greedy" | "q" => Ok(Self::QGreedy),
            "fnn_policy" | "fnn" => Ok(Self::FnnPolicy),
            other => Err(crate::error::Error::usage(format!("unknown policy mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&returns);
        EvalStats { mean, std, returns }
    }
}

/// Mean and sample standard deviation; the deviation of fewer than two values is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seeds for evaluation episodes; shared by every policy evaluated with `seed`.
pub fn evaluation_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream(seed, Stream::Evaluation);
    (0..episodes).map(|_| rng.random()).collect()
}

/// Undiscounted, unshaped return of `policy` over the evaluation seeds.
pub fn evaluate_with(
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&[f64]) -> Result<usize>,
) -> Result<EvalStats> {
    let max_steps = env.spec().max_episode_steps;
    let mut returns = Vec::with_capacity(episodes);
    for env_seed in evaluation_seeds(seed, episodes) {
        let (mut obs, _) = env.reset(env_seed);
        let mut total = 0.0;
        for _ in 0..max_steps {
            let step = env.step(policy(&obs)?)?;
            total += step.reward;
            obs = step.next_observation;
            if step.terminal {
                break;
            }
        }
        returns.push(total);
    }
    Ok(EvalStats::from_returns(returns))
}

pub fn evaluate_q(q: &QNetworkPair, env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<EvalStats> {
    evaluate_with(env, episodes, seed, |obs| q.greedy_action(obs))
}

pub fn evaluate_fnn(fnn: &EnsembleFnn, env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<EvalStats> {
    evaluate_with(env, episodes, seed, |obs| Ok(fnn.pred_action(obs)?.0))
}

/// The exact solver's policy on the same seeds.
pub fn evaluate_optimal(env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<EvalStats> {
    let mut returns = Vec::with_capacity(episodes);
    for env_seed in evaluation_seeds(seed, episodes) {
        returns.push(crate::envs::optimal_return(env, env_seed)?);
    }
    Ok(EvalStats::from_returns(returns))
}

pub fn evaluate_random(env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<EvalStats> {
    let mut rng = stream(seed, Stream::RandomPlay);
    let n = env.spec().action_count;
    evaluate_with(env, episodes, seed, |_| Ok(rng.random_range(0..n)))
}
