use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use super::config::FeedbackKinds;
use crate::buffers::{
    FeedbackBuffer, FeedbackRecord, FeedbackSource, FeedbackTarget, Label, MaskDistribution, ReplayBuffer,
    Trajectory, TrajectoryMeta, TrajectoryPriority,
};
use crate::envs::{Environment, MdpSpec};
use crate::error::{Error, Result};
use crate::oracle::Oracle;

/// Mutable view of the trainer state lent to whoever supplies labels for one
/// session. Training is paused for as long as this exists.
pub struct FeedbackSession<'a> {
    pub(super) replay: &'a mut ReplayBuffer,
    pub(super) reviewed: &'a mut BTreeSet<u64>,
    pub(super) feedback: &'a mut FeedbackBuffer,
    pub(super) mask_rng: &'a mut ChaCha8Rng,
    pub(super) env: &'a mut dyn Environment,
    pub(super) masking: MaskDistribution,
    pub(super) heads_action: usize,
    pub(super) heads_state: usize,
    pub(super) kinds: FeedbackKinds,
    pub(super) priority: TrajectoryPriority,
    pub(super) budget: usize,
    pub(super) appended: usize,
    pub(super) episode: u64,
}

impl FeedbackSession<'_> {
    pub fn spec(&self) -> &MdpSpec {
        self.env.spec()
    }

    pub fn env_id(&self) -> crate::envs::EnvId {
        self.env.id()
    }

    pub fn kinds(&self) -> FeedbackKinds {
        self.kinds
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn appended(&self) -> usize {
        self.appended
    }

    pub fn remaining(&self) -> usize {
        self.budget.saturating_sub(self.appended)
    }

    pub fn feedback(&self) -> &FeedbackBuffer {
        self.feedback
    }

    /// Highest-priority trajectory nobody has reviewed yet.
    pub fn next_trajectory(&self) -> Option<TrajectoryMeta> {
        self.replay.sample_trajectory_for_feedback(self.reviewed, self.priority).ok().cloned()
    }

    pub fn materialize(&mut self, id: u64) -> Result<Trajectory> {
        self.replay.materialize(id, self.env)
    }

    pub fn mark_reviewed(&mut self, id: u64) {
        self.reviewed.insert(id);
    }

    /// Appends one label with a freshly drawn mask.
    pub fn store(
        &mut self,
        target: FeedbackTarget,
        observation: Vec<f64>,
        action: Option<usize>,
        label: Label,
        source: FeedbackSource,
    ) -> Result<()> {
        if self.remaining() == 0 {
            return Err(Error::Exhausted("session budget reached".into()));
        }
        let allowed = match target {
            FeedbackTarget::Action => self.kinds.wants_actions(),
            FeedbackTarget::State => self.kinds.wants_states(),
        };
        if !allowed {
            return Err(Error::usage(format!("this run does not collect {} feedback", target.as_str())));
        }
        let record = match target {
            FeedbackTarget::Action => {
                let action = action.ok_or_else(|| Error::usage("action feedback needs an action"))?;
                let mask = self.masking.sample(self.heads_action, self.mask_rng);
                FeedbackRecord::action(observation, action, label, mask, source, self.episode)
            }
            FeedbackTarget::State => {
                let mask = self.masking.sample(self.heads_state, self.mask_rng);
                FeedbackRecord::state(observation, label, mask, source, self.episode)
            }
        };
        self.feedback.append(record)?;
        self.appended += 1;
        Ok(())
    }
}

/// Something that can fill a session with labels: the scripted oracle or a
/// person at the feedback console.
pub trait SessionHandler {
    fn run_session(&mut self, session: &mut FeedbackSession<'_>) -> Result<()>;
}

/// Walks priority trajectories step by step, asking for the next-state label
/// and then the action label, until the budget is spent or nothing is left.
pub fn run_oracle_session(oracle: &mut Oracle, session: &mut FeedbackSession<'_>) -> Result<()> {
    oracle.set_episode(session.episode());
    let skip_after = oracle.config().skip_after;
    while session.remaining() > 0 {
        let Some(meta) = session.next_trajectory() else { break };
        let steps = session.replay.steps_of(meta.trajectory_id).map(<[_]>::to_vec);
        let steps = match steps {
            Ok(s) => s,
            Err(_) => {
                session.replay.make_contiguous();
                session.replay.steps_of(meta.trajectory_id)?.to_vec()
            }
        };
        let mut from_this = 0usize;
        'steps: for t in &steps {
            for target in [FeedbackTarget::State, FeedbackTarget::Action] {
                if session.remaining() == 0 || skip_after.is_some_and(|n| from_this >= n) {
                    break 'steps;
                }
                let verdict = match target {
                    FeedbackTarget::State if session.kinds().wants_states() => {
                        oracle.label_state(&t.next_observation, meta.env_seed)?
                    }
                    FeedbackTarget::Action if session.kinds().wants_actions() => {
                        oracle.label_action(&t.observation, t.action, meta.env_seed)?
                    }
                    _ => continue,
                };
                if let Some(label) = verdict.stored() {
                    let (obs, action) = match target {
                        FeedbackTarget::State => (t.next_observation.clone(), None),
                        FeedbackTarget::Action => (t.observation.clone(), Some(t.action)),
                    };
                    session.store(target, obs, action, label, FeedbackSource::Oracle)?;
                    from_this += 1;
                }
            }
        }
        session.mark_reviewed(meta.trajectory_id);
    }
    Ok(())
}
