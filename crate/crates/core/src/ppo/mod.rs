//! Proximal policy optimization over the match-2 engine.

mod buffer;
mod config;
mod log;
mod loss;
mod trainer;

pub use buffer::{compute_gae, normalize_advantages, RolloutBuffer};
pub use config::PpoConfig;
pub use log::{LogRow, TrainLog};
pub use loss::{ppo_loss, ppo_loss_and_grad, LossCoefficients, LossStats, Minibatch};
pub use trainer::{EpisodeRecord, TrainSummary, Trainer, TrainerState, UpdateOutcome};

use crate::engine::EngineError;
use crate::nn::NnError;
use crate::policy::PolicyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("config: {0}")]
    Config(String),
    #[error("levels: {0}")]
    Levels(String),
    #[error("every action is masked (update {update}, actor {actor}, level {level_id}, step {step})")]
    MaskedAllActions { update: u64, actor: usize, level_id: u32, step: u64, board: String },
    #[error("non-finite loss at update {update}: {detail}")]
    NonFiniteLoss { update: u64, detail: String },
    #[error("training has halted ({0})")]
    Halted(String),
    #[error("resume state: {0}")]
    State(String),
    #[error("log: {0}")]
    Log(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PpoError {
    /// Short tag written to the log's `status` column.
    pub fn status(&self) -> &'static str {
        match self {
            PpoError::MaskedAllActions { .. } => "masked-all-actions",
            PpoError::NonFiniteLoss { .. } => "non-finite-loss",
            _ => "error",
        }
    }
}
