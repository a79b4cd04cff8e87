use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Environment, RenderFrame};
use crate::error::{Error, Result};

pub const DEFAULT_REPLAY_CAPACITY: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Global insertion number; never reused.
    pub serial: u64,
    pub trajectory_id: u64,
    pub step_index: usize,
    pub observation: Vec<f64>,
    pub action: usize,
    pub env_reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub trajectory_id: u64,
    pub episode_index: u64,
    pub env_seed: u64,
    pub first_serial: u64,
    pub len: usize,
    pub total_return: f64,
    pub complete: bool,
}

/// One step of a trajectory as shown to a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: Vec<f64>,
    pub action: usize,
    pub env_reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
    pub render: RenderFrame,
    pub next_render: RenderFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: u64,
    pub episode_index: u64,
    pub env_seed: u64,
    pub total_return: f64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.steps.iter().map(|s| s.env_reward).sum();
        if (sum - self.total_return).abs() > 1e-9 * (1.0 + sum.abs()) {
            return Err(Error::Format(format!(
                "trajectory {} return {} does not match step sum {sum}",
                self.trajectory_id, self.total_return
            )));
        }
        let last = self.steps.len().saturating_sub(1);
        for (i, s) in self.steps.iter().enumerate() {
            if s.terminal != (i == last) {
                return Err(Error::Format(format!("trajectory {} has a misplaced terminal flag", self.trajectory_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryPriority {
    #[default]
    HighestReturn,
    LowestReturn,
}

/// Step-capacity ring of transitions plus an index of the trajectories they
/// belong to. Eviction removes the oldest trajectory as a whole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity_steps: usize,
    transitions: VecDeque<Transition>,
    trajectories: BTreeMap<u64, TrajectoryMeta>,
    next_serial: u64,
    next_trajectory_id: u64,
    /// Open trajectory id and the number of steps pushed to it so far.
    open: Option<(u64, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity_steps: usize) -> Result<Self> {
        if capacity_steps == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity_steps,
            transitions: VecDeque::new(),
            trajectories: BTreeMap::new(),
            next_serial: 0,
            next_trajectory_id: 0,
            open: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity_steps
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &TrajectoryMeta> {
        self.trajectories.values()
    }

    pub fn trajectory(&self, id: u64) -> Option<&TrajectoryMeta> {
        self.trajectories.get(&id)
    }

    pub fn trajectory_count(&self) -> usize {
        self.trajectories.len()
    }

    /// Starts a new trajectory and returns its id.
    pub fn begin_trajectory(&mut self, episode_index: u64, env_seed: u64) -> Result<u64> {
        if self.open.is_some() {
            return Err(Error::usage("previous trajectory was not finished"));
        }
        let id = self.next_trajectory_id;
        self.next_trajectory_id += 1;
        self.trajectories.insert(
            id,
            TrajectoryMeta {
                trajectory_id: id,
                episode_index,
                env_seed,
                first_serial: self.next_serial,
                len: 0,
                total_return: 0.0,
                complete: false,
            },
        );
        self.open = Some((id, 0));
        Ok(id)
    }

    /// Appends a step to the open trajectory; a terminal step closes it.
    pub fn push(
        &mut self,
        observation: Vec<f64>,
        action: usize,
        env_reward: f64,
        next_observation: Vec<f64>,
        terminal: bool,
    ) -> Result<u64> {
        let (id, step_index) = self.open.ok_or_else(|| Error::usage("no open trajectory"))?;
        while self.transitions.len() >= self.capacity_steps {
            self.evict_oldest();
        }
        let serial = self.next_serial;
        self.next_serial += 1;
        if let Some(meta) = self.trajectories.get_mut(&id) {
            meta.len += 1;
            meta.total_return += env_reward;
            meta.complete = terminal;
        }
        self.transitions.push_back(Transition {
            serial,
            trajectory_id: id,
            step_index,
            observation,
            action,
            env_reward,
            next_observation,
            terminal,
        });
        self.open = if terminal { None } else { Some((id, step_index + 1)) };
        Ok(serial)
    }

    fn evict_oldest(&mut self) {
        let Some(front) = self.transitions.front() else { return };
        let id = front.trajectory_id;
        self.trajectories.remove(&id);
        if self.open.is_some_and(|(open, _)| open == id) {
            self.transitions.pop_front();
            return;
        }
        while self.transitions.front().is_some_and(|t| t.trajectory_id == id) {
            self.transitions.pop_front();
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    /// Steps of a trajectory still held in the ring.
    pub fn steps_of(&self, id: u64) -> Result<&[Transition]> {
        let meta = self.trajectories.get(&id).ok_or_else(|| Error::usage(format!("unknown trajectory {id}")))?;
        let front = self.transitions.front().map_or(0, |t| t.serial);
        let start = (meta.first_serial - front) as usize;
        let (a, b) = self.transitions.as_slices();
        // A trajectory may straddle the ring's two halves.
        if start + meta.len <= a.len() {
            Ok(&a[start..start + meta.len])
        } else if start >= a.len() {
            Ok(&b[start - a.len()..start - a.len() + meta.len])
        } else {
            Err(Error::NotReady("trajectory straddles ring boundary; call make_contiguous".into()))
        }
    }

    pub fn make_contiguous(&mut self) {
        self.transitions.make_contiguous();
    }

    /// Completed, unreviewed trajectory first in priority order; ties go to
    /// the lowest id.
    pub fn sample_trajectory_for_feedback(
        &self,
        already_reviewed: &BTreeSet<u64>,
        priority: TrajectoryPriority,
    ) -> Result<&TrajectoryMeta> {
        let mut best: Option<&TrajectoryMeta> = None;
        for meta in self.trajectories.values() {
            if !meta.complete || already_reviewed.contains(&meta.trajectory_id) {
                continue;
            }
            let better = match (best, priority) {
                (None, _) => true,
                (Some(b), TrajectoryPriority::HighestReturn) => meta.total_return > b.total_return,
                (Some(b), TrajectoryPriority::LowestReturn) => meta.total_return < b.total_return,
            };
            if better {
                best = Some(meta);
            }
        }
        best.ok_or_else(|| Error::Exhausted("every stored trajectory has been reviewed".into()))
    }

    /// Uniform sample without replacement.
    pub fn sample_transition_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if batch_size == 0 || batch_size > self.transitions.len() {
            return Err(Error::NotReady(format!(
                "batch of {batch_size} requested from {} transitions",
                self.transitions.len()
            )));
        }
        Ok(index::sample(rng, self.transitions.len(), batch_size).into_iter().map(|i| &self.transitions[i]).collect())
    }

    /// Rebuilds a trajectory with renders by replaying its actions from the
    /// stored seed; fails if the replay diverges from what was recorded.
    pub fn materialize(&mut self, id: u64, env: &mut dyn Environment) -> Result<Trajectory> {
        self.make_contiguous();
        let meta = self.trajectories.get(&id).ok_or_else(|| Error::usage(format!("unknown trajectory {id}")))?.clone();
        let stored = self.steps_of(id)?;
        let (mut obs, mut render) = env.reset(meta.env_seed);
        let mut steps = Vec::with_capacity(stored.len());
        for t in stored {
            if obs != t.observation {
                return Err(Error::Format(format!("trajectory {id} does not replay from its seed at step {}", t.step_index)));
            }
            let res = env.step(t.action)?;
            if res.next_observation != t.next_observation || res.terminal != t.terminal {
                return Err(Error::Format(format!("trajectory {id} diverged on replay at step {}", t.step_index)));
            }
            steps.push(TrajectoryStep {
                observation: t.observation.clone(),
                action: t.action,
                env_reward: t.env_reward,
                next_observation: t.next_observation.clone(),
                terminal: t.terminal,
                render: render.clone(),
                next_render: res.render.clone(),
            });
            obs = res.next_observation;
            render = res.render;
        }
        Ok(Trajectory {
            trajectory_id: id,
            episode_index: meta.episode_index,
            env_seed: meta.env_seed,
            total_return: meta.total_return,
            steps,
        })
    }
}
