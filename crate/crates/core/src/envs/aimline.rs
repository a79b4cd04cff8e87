//! Bowling-like lane: position a cursor, fire at the pin, and collect a strike
//! bonus only when the *next* round settles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax_with_tol, check_obs_len, EnvId, Environment, MdpSpec, OptimalSolver, RenderFrame,
    StepResult, SOLVER_DISCOUNT,
};
use crate::error::{Error, Result};
use crate::rng;

pub const NOOP: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const FIRE: usize = 3;

const CELL_LANE: u32 = 0;
const CELL_CURSOR: u32 = 1;
const CELL_PIN: u32 = 2;
const CELL_ON_PIN: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AimLineConfig {
    pub positions: usize,
    pub rounds: usize,
    pub max_steps: usize,
    pub round_score: f64,
    pub miss_cost: f64,
    pub strike_bonus: f64,
}

impl Default for AimLineConfig {
    fn default() -> Self {
        AimLineConfig {
            positions: 10,
            rounds: 10,
            max_steps: 200,
            round_score: 10.0,
            miss_cost: 2.0,
            strike_bonus: 5.0,
        }
    }
}

impl AimLineConfig {
    fn start_position(&self) -> usize {
        self.positions / 2
    }

    fn pins(&self, seed: u64) -> Vec<usize> {
        let mut r = rng::stream(seed, rng::Stream::EnvSeeds);
        (0..self.rounds).map(|_| r.random_range(0..self.positions)).collect()
    }

    fn score(&self, pos: usize, pin: usize) -> f64 {
        (self.round_score - self.miss_cost * pos.abs_diff(pin) as f64).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct AimLine {
    config: AimLineConfig,
    spec: MdpSpec,
    pins: Vec<usize>,
    round: usize,
    pos: usize,
    pending: bool,
    steps: usize,
    last_roll: Option<f64>,
    done: bool,
    started: bool,
}

impl AimLine {
    pub fn new(config: AimLineConfig) -> Result<Self> {
        if config.positions < 2 || config.rounds < 1 || config.max_steps < 1 {
            return Err(Error::config(format!("invalid aimline config {config:?}")));
        }
        let spec = MdpSpec {
            observation_dim: 6,
            action_count: 4,
            action_names: ["noop", "up", "down", "fire"].map(String::from).to_vec(),
            max_episode_steps: config.max_steps,
        };
        Ok(AimLine {
            pos: config.start_position(),
            config,
            spec,
            pins: Vec::new(),
            round: 1,
            pending: false,
            steps: 0,
            last_roll: None,
            done: false,
            started: false,
        })
    }

    pub fn config(&self) -> &AimLineConfig {
        &self.config
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn pins(&self) -> &[usize] {
        &self.pins
    }

    fn current_pin(&self) -> Option<usize> {
        self.pins.get(self.round - 1).copied()
    }

    fn observation(&self) -> Vec<f64> {
        let span = (self.config.positions - 1) as f64;
        vec![
            self.pos as f64 / span,
            (self.round - 1) as f64 / self.config.rounds as f64,
            if self.pending { 1.0 } else { 0.0 },
            self.current_pin().map_or(-1.0, |p| p as f64 / span),
            self.current_pin().map_or(0.0, |p| (p as f64 - self.pos as f64) / span),
            if self.current_pin() == Some(self.pos) { 1.0 } else { 0.0 },
        ]
    }

    fn render(&self) -> RenderFrame {
        let p = self.config.positions;
        let mut frame = RenderFrame::blank(
            2,
            p,
            &[(CELL_LANE, "lane"), (CELL_CURSOR, "cursor"), (CELL_PIN, "pin"), (CELL_ON_PIN, "cursor on pin")],
        );
        let row_of = |pos: usize| p - 1 - pos;
        frame.set(row_of(self.pos), 0, CELL_CURSOR);
        if let Some(pin) = self.current_pin() {
            let code = if pin == self.pos { CELL_ON_PIN } else { CELL_PIN };
            frame.set(row_of(pin), 1, code);
        }
        let round = if self.done {
            "game over".to_string()
        } else {
            format!("round {}/{}", self.round, self.config.rounds)
        };
        let pending = if self.pending { ", strike bonus pending" } else { "" };
        let last = self.last_roll.map(|r| format!(", last roll {r}")).unwrap_or_default();
        frame.caption = format!("{round}{pending}{last}");
        frame
    }
}

impl Environment for AimLine {
    fn id(&self) -> EnvId {
        EnvId::AimLine
    }

    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<f64>, RenderFrame) {
        self.pins = self.config.pins(seed);
        self.round = 1;
        self.pos = self.config.start_position();
        self.pending = false;
        self.steps = 0;
        self.last_roll = None;
        self.done = false;
        self.started = true;
        (self.observation(), self.render())
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if !self.started {
            return Err(Error::usage("step before reset"));
        }
        if self.done {
            return Err(Error::usage("step after terminal"));
        }
        if action >= self.spec.action_count {
            return Err(Error::usage(format!("action {action} out of range")));
        }
        self.steps += 1;
        let mut reward = 0.0;
        match action {
            UP => self.pos = (self.pos + 1).min(self.config.positions - 1),
            DOWN => self.pos = self.pos.saturating_sub(1),
            FIRE => {
                let pin = self.current_pin().expect("round within range while not done");
                let roll = self.config.score(self.pos, pin);
                reward += roll;
                if self.pending {
                    reward += self.config.strike_bonus;
                }
                let strike = self.pos == pin;
                self.last_roll = Some(roll);
                if self.round == self.config.rounds {
                    // No next round to carry the bonus; settle it now.
                    if strike {
                        reward += self.config.strike_bonus;
                    }
                    self.pending = false;
                    self.done = true;
                } else {
                    self.pending = strike;
                }
                self.round += 1;
            }
            _ => {}
        }
        if !self.done && self.steps >= self.config.max_steps {
            if self.pending {
                reward += self.config.strike_bonus;
                self.pending = false;
            }
            self.done = true;
        }
        Ok(StepResult {
            next_observation: self.observation(),
            reward,
            terminal: self.done,
            render: self.render(),
        })
    }

    fn solver(&self, seed: u64) -> Result<Box<dyn OptimalSolver>> {
        Ok(Box::new(AimLineSolver::solve(&self.config, seed)))
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Exact discounted values for one pin layout, ignoring the step cap.
///
/// Within a round the cursor moves deterministically, so the value of a
/// position is the best discounted fire value over all target positions.
pub struct AimLineSolver {
    config: AimLineConfig,
    pins: Vec<usize>,
    /// `values[round - 1][pending][pos]`, plus an all-zero row past the last round.
    values: Vec<[Vec<f64>; 2]>,
    fire: Vec<[Vec<f64>; 2]>,
}

impl AimLineSolver {
    pub fn solve(config: &AimLineConfig, seed: u64) -> Self {
        let pins = config.pins(seed);
        let p = config.positions;
        let rounds = config.rounds;
        let g = SOLVER_DISCOUNT;
        let mut values = vec![[vec![0.0; p], vec![0.0; p]]; rounds + 1];
        let mut fire = vec![[vec![0.0; p], vec![0.0; p]]; rounds];
        for r in (0..rounds).rev() {
            let pin = pins[r];
            for pending in 0..2 {
                for t in 0..p {
                    let strike = t == pin;
                    let mut value = config.score(t, pin);
                    if pending == 1 {
                        value += config.strike_bonus;
                    }
                    if r + 1 == rounds {
                        if strike {
                            value += config.strike_bonus;
                        }
                    } else {
                        value += g * values[r + 1][usize::from(strike)][t];
                    }
                    fire[r][pending][t] = value;
                }
                for (pos, slot) in values[r][pending].iter_mut().enumerate() {
                    *slot = (0..p)
                        .map(|t| g.powi(t.abs_diff(pos) as i32) * fire[r][pending][t])
                        .fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        AimLineSolver { config: config.clone(), pins, values, fire }
    }

    fn decode(&self, obs: &[f64]) -> Result<(usize, usize, usize)> {
        check_obs_len(obs, 6)?;
        let span = (self.config.positions - 1) as f64;
        let pos = (obs[0] * span).round();
        let round = (obs[1] * self.config.rounds as f64).round() + 1.0;
        if !(0.0..=span).contains(&pos) || !(1.0..=(self.config.rounds + 1) as f64).contains(&round) {
            return Err(Error::usage(format!("observation {obs:?} is not an aimline state")));
        }
        let (pos, round) = (pos as usize, round as usize);
        if round <= self.config.rounds {
            let pin = (obs[3] * span).round();
            if pin != self.pins[round - 1] as f64 {
                return Err(Error::usage(format!(
                    "observation pin {pin} does not match this layout (round {round})"
                )));
            }
        }
        Ok((round, usize::from(obs[2] > 0.5), pos))
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<[f64; 4]> {
        let (round, pending, pos) = self.decode(obs)?;
        if round > self.config.rounds {
            return Ok([0.0; 4]);
        }
        let g = SOLVER_DISCOUNT;
        let v = &self.values[round - 1][pending];
        let last = self.config.positions - 1;
        Ok([
            g * v[pos],
            g * v[(pos + 1).min(last)],
            g * v[pos.saturating_sub(1)],
            self.fire[round - 1][pending][pos],
        ])
    }
}

impl OptimalSolver for AimLineSolver {
    fn optimal_action(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax_with_tol(&self.q_values(obs)?, 1e-12))
    }

    fn state_value(&self, obs: &[f64]) -> Result<f64> {
        let (round, pending, pos) = self.decode(obs)?;
        Ok(self.values[round - 1].get(pending).map_or(0.0, |v| v[pos]))
    }

    /// Value as a fraction of the best value available in the same round,
    /// so early rounds do not dominate; a finished game scores 1.
    fn state_score(&self, obs: &[f64]) -> Result<f64> {
        let (round, pending, pos) = self.decode(obs)?;
        if round > self.config.rounds {
            return Ok(1.0);
        }
        let best = self.values[round - 1].iter().flatten().fold(0.0f64, |m, &v| m.max(v));
        Ok(if best > 0.0 { self.values[round - 1][pending][pos] / best } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> AimLine {
        AimLine::new(AimLineConfig::default()).unwrap()
    }

    fn move_to(env: &mut AimLine, target: usize) {
        while env.position() < target {
            env.step(UP).unwrap();
        }
        while env.position() > target {
            env.step(DOWN).unwrap();
        }
    }

    #[test]
    fn reset_places_cursor_at_start() {
        let mut e = env();
        let (obs, frame) = e.reset(7);
        assert_eq!(e.position(), 5);
        assert_eq!(e.round(), 1);
        assert_eq!(obs[0], 5.0 / 9.0);
        assert_eq!(obs[1], 0.0);
        frame.validate().unwrap();
    }

    #[test]
    fn strike_bonus_arrives_with_next_settlement() {
        let mut e = env();
        e.reset(11);
        let pins = e.pins().to_vec();
        move_to(&mut e, pins[0]);
        let first = e.step(FIRE).unwrap();
        assert_eq!(first.reward, 10.0);
        assert_eq!(first.next_observation[2], 1.0);
        move_to(&mut e, pins[1]);
        let second = e.step(FIRE).unwrap();
        // 10 for the second strike plus the deferred 5 from round one.
        assert_eq!(second.reward, 15.0);
    }

    #[test]
    fn far_miss_scores_zero() {
        let mut e = env();
        e.reset(0);
        let pin = e.pins()[0];
        let target = if pin >= 5 { pin - 5 } else { pin + 5 };
        move_to(&mut e, target);
        assert_eq!(e.step(FIRE).unwrap().reward, 0.0);
    }

    #[test]
    fn up_at_top_is_clamped() {
        let mut e = env();
        e.reset(3);
        move_to(&mut e, 9);
        let r = e.step(UP).unwrap();
        assert_eq!(e.position(), 9);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn rejects_bad_usage() {
        let mut e = env();
        assert!(matches!(e.step(0), Err(Error::Usage(_))));
        e.reset(1);
        assert!(matches!(e.step(4), Err(Error::Usage(_))));
        for _ in 0..10 {
            e.step(FIRE).unwrap();
        }
        assert!(matches!(e.step(FIRE), Err(Error::Usage(_))));
    }

    #[test]
    fn step_cap_terminates_and_pays_pending_bonus() {
        let cfg = AimLineConfig { max_steps: 3, ..Default::default() };
        let mut e = AimLine::new(cfg).unwrap();
        e.reset(5);
        let pin = e.pins()[0];
        let mut total = 0.0;
        let mut steps = 0;
        // Walk toward the pin, possibly striking, until the cap hits.
        loop {
            let a = if e.position() == pin { FIRE } else if e.position() < pin { UP } else { DOWN };
            let r = e.step(a).unwrap();
            total += r.reward;
            steps += 1;
            if r.terminal {
                break;
            }
        }
        assert_eq!(steps, 3);
        assert!(total >= 0.0);
    }

    #[test]
    fn solver_prefers_moving_toward_pin() {
        let mut e = env();
        let (obs, _) = e.reset(21);
        let solver = e.solver(21).unwrap();
        let pin = e.pins()[0];
        let expected = match e.position().cmp(&pin) {
            std::cmp::Ordering::Less => UP,
            std::cmp::Ordering::Greater => DOWN,
            std::cmp::Ordering::Equal => FIRE,
        };
        assert_eq!(solver.optimal_action(&obs).unwrap(), expected);
    }

    #[test]
    fn solver_rejects_foreign_layout() {
        let mut e = env();
        let (obs, _) = e.reset(1);
        let other = (2..50).find(|s| AimLineConfig::default().pins(*s)[0] != e.pins()[0]).unwrap();
        let solver = e.solver(other).unwrap();
        assert!(solver.state_value(&obs).is_err());
    }
}
