//! Small feed-forward networks with hand-written reverse-mode gradients.
//!
//! All networks keep their parameters in one flat `Vec<f64>` so the optimizer,
//! target copies, checkpoints and finite-difference checks treat them uniformly.

mod gradcheck;
mod loss;
mod mlp;
mod nets;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{
    finite_difference_blocks, grad_check_actor, grad_check_critic, grad_check_value, relative_error, BlockError,
    GradCheckConfig, GradCheckReport,
};
pub use loss::{actor_loss, clipped_surrogate, mse_loss, ActorLossConfig, ActorLossStats, ActorSample};
pub use mlp::{Mlp, MlpTape};
pub use nets::{CriticInput, CriticNet, CriticTape, PolicyNet, PolicyOutput, ScalarNet, ValueNet};
pub use optim::{clip_grad_norm, OptimizerState};

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("non-finite gradient at parameter {index} ({value}); step rejected")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const CHECKPOINT_FORMAT: &str = "gpae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Critic-side networks, which depend on the advantage estimator being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticBundle {
    /// Per-agent counterfactual value `EQ^i`.
    PerAgent { critic: CriticNet },
    /// State value `V(s)`.
    StateValue { value: ValueNet },
    /// State value plus a per-agent expected-reward model.
    DifferenceReward { value: ValueNet, reward: CriticNet },
    /// Joint action value `Q(s, a)` evaluated per own action.
    JointQ { q: CriticNet },
}

/// Versioned JSON checkpoint with architecture metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub iteration: usize,
    pub env_steps: u64,
    pub policy: PolicyNet,
    pub critic: CriticBundle,
}

impl Checkpoint {
    pub fn new(iteration: usize, env_steps: u64, policy: PolicyNet, critic: CriticBundle) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, iteration, env_steps, policy, critic }
    }

    pub fn save(&self, path: &Path) -> Result<(), ApproxError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ApproxError> {
        let ckpt: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(ApproxError::Checkpoint(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        if ckpt.policy.params.len() != ckpt.policy.mlp.num_params() {
            return Err(ApproxError::Checkpoint("policy parameter count does not match its architecture".into()));
        }
        Ok(ckpt)
    }
}
