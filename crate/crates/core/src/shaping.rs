//! Shaping rewards from the feedback network and their combination with the
//! environment reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnn::{ConfidenceRule, FnnPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    /// `None` disables the confidence filter; written as `"none"` in config files.
    #[serde(with = "threshold")]
    pub beta_a: Option<f64>,
    #[serde(with = "threshold")]
    pub beta_s: Option<f64>,
    pub lambda_a: f64,
    pub lambda_s: f64,
    pub cycle_distance_threshold: f64,
    pub clip_env_reward: bool,
    /// Linearly decay both weights to zero over this many episodes.
    pub lambda_decay_episodes: Option<u64>,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            beta_a: Some(1.0),
            beta_s: Some(0.02),
            lambda_a: 0.2,
            lambda_s: 0.1,
            cycle_distance_threshold: 1e-6,
            clip_env_reward: true,
            lambda_decay_episodes: None,
        }
    }
}

impl ShapingConfig {
    pub fn disabled() -> Self {
        ShapingConfig { lambda_a: 0.0, lambda_s: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for beta in [self.beta_a, self.beta_s].into_iter().flatten() {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::config(format!("threshold {beta} outside [0,1]")));
            }
        }
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_s", self.lambda_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.cycle_distance_threshold >= 0.0 && self.cycle_distance_threshold.is_finite()) {
            return Err(Error::config("cycle_distance_threshold must be finite and non-negative"));
        }
        if self.lambda_decay_episodes == Some(0) {
            return Err(Error::config("lambda_decay_episodes must be positive when set"));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.lambda_a > 0.0 || self.lambda_s > 0.0
    }

    /// Weights in effect at `episode`.
    pub fn lambdas_at(&self, episode: u64) -> (f64, f64) {
        match self.lambda_decay_episodes {
            None => (self.lambda_a, self.lambda_s),
            Some(n) => {
                let scale = (1.0 - episode as f64 / n as f64).max(0.0);
                (self.lambda_a * scale, self.lambda_s * scale)
            }
        }
    }
}

mod threshold {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x),
            None => Repr::Word("none".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(x) => Ok(Some(x)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected a number or \"none\", got {w:?}"))),
        }
    }
}

pub fn clip_reward(r_e: f64) -> f64 {
    if r_e > 0.0 {
        1.0
    } else if r_e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn confident(c: f64, beta: Option<f64>) -> bool {
    beta.is_none_or(|b| c > 1.0 - b)
}

/// 1 when `action` is the ensemble's choice at `s_t` and the heads agree enough.
pub fn action_shaping(pred: &FnnPrediction, action: usize, beta_a: Option<f64>, rule: ConfidenceRule) -> u8 {
    u8::from(pred.pred_action().0 == action && confident(pred.confidence_action(rule), beta_a))
}

/// 1 when the ensemble calls `s_{t+1}` good and the heads agree enough.
pub fn state_shaping(pred_next: &FnnPrediction, beta_s: Option<f64>, rule: ConfidenceRule) -> u8 {
    u8::from(pred_next.pred_state() && confident(pred_next.confidence_state(rule), beta_s))
}

/// `r_e + λ_a r_a + λ_s r_s`; on a cycle the feedback term is negated.
pub fn shaped_reward(r_e: f64, r_a: u8, r_s: u8, lambda_a: f64, lambda_s: f64, cycle_detected: bool) -> f64 {
    if cycle_detected {
        r_e - (lambda_a * f64::from(r_a) + lambda_s * f64::from(r_s))
    } else {
        r_e + lambda_a * f64::from(r_a) + lambda_s * f64::from(r_s)
    }
}

/// True when the L∞ distance between the two observations is below `threshold`.
pub fn detect_cycle(s_t: &[f64], s_prev: &[f64], threshold: f64) -> Result<bool> {
    if s_t.len() != s_prev.len() {
        return Err(Error::usage(format!("cannot compare observations of length {} and {}", s_t.len(), s_prev.len())));
    }
    let dist = s_t.iter().zip(s_prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(dist < threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedStep {
    pub r_a: u8,
    pub r_s: u8,
    pub cycle: bool,
    pub reward: f64,
}

/// What the ensemble says about one observation, reduced to the numbers shaping needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub action: usize,
    pub action_confidence: f64,
    pub good: bool,
    pub state_confidence: f64,
}

impl Verdict {
    pub fn of(pred: &FnnPrediction, rule: ConfidenceRule) -> Self {
        Verdict {
            action: pred.pred_action().0,
            action_confidence: pred.confidence_action(rule),
            good: pred.pred_state(),
            state_confidence: pred.confidence_state(rule),
        }
    }
}

/// Full shaping for one transition `(s_t, a_t, r_e, s_{t+1})`.
#[allow(clippy::too_many_arguments)]
pub fn shape_transition(
    config: &ShapingConfig,
    episode: u64,
    rule: ConfidenceRule,
    pred: &FnnPrediction,
    pred_next: &FnnPrediction,
    observation: &[f64],
    action: usize,
    env_reward: f64,
    next_observation: &[f64],
) -> Result<ShapedStep> {
    shape_with_verdicts(
        config,
        episode,
        &Verdict::of(pred, rule),
        &Verdict::of(pred_next, rule),
        observation,
        action,
        env_reward,
        next_observation,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn shape_with_verdicts(
    config: &ShapingConfig,
    episode: u64,
    verdict: &Verdict,
    verdict_next: &Verdict,
    observation: &[f64],
    action: usize,
    env_reward: f64,
    next_observation: &[f64],
) -> Result<ShapedStep> {
    let r_e = if config.clip_env_reward { clip_reward(env_reward) } else { env_reward };
    let r_a = u8::from(verdict.action == action && confident(verdict.action_confidence, config.beta_a));
    let r_s = u8::from(verdict_next.good && confident(verdict_next.state_confidence, config.beta_s));
    let cycle = detect_cycle(next_observation, observation, config.cycle_distance_threshold)?;
    let (la, ls) = config.lambdas_at(episode);
    Ok(ShapedStep { r_a, r_s, cycle, reward: shaped_reward(r_e, r_a, r_s, la, ls, cycle) })
}

/// Shaping with no feedback network: only the (clipped) environment reward.
pub fn unshaped(config: &ShapingConfig, env_reward: f64) -> ShapedStep {
    let r_e = if config.clip_env_reward { clip_reward(env_reward) } else { env_reward };
    ShapedStep { r_a: 0, r_s: 0, cycle: false, reward: r_e }
}
