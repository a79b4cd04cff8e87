//! Trajectory replay and the append-only feedback store.

mod feedback;
mod replay;

pub use feedback::{FeedbackBuffer, FeedbackRecord, FeedbackSource, FeedbackTarget, Label, MaskDistribution};
pub use replay::{
    ReplayBuffer, Trajectory, TrajectoryMeta, TrajectoryPriority, TrajectoryStep, Transition, DEFAULT_REPLAY_CAPACITY,
};
