use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::correction::TraceScheme;
use crate::env::BuiltinParams;

/// Which advantage estimator drives the actor, and with it which critic is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainEstimator {
    /// Per-agent counterfactual critic `EQ^i` with trace-corrected GPAE.
    Gpae,
    /// Shared state-value critic with GAE.
    Gae,
    /// Joint action-value critic with the counterfactual baseline.
    Coma,
    /// State-value critic plus a learned expected-reward model.
    Dae,
}

impl TrainEstimator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gpae => "gpae",
            Self::Gae => "gae",
            Self::Coma => "coma",
            Self::Dae => "dae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Built-in environment name.
    pub env: String,
    pub env_params: BuiltinParams,
    /// Collect with the environment's anomalous behavior when it defines one.
    pub anomaly: bool,
    pub gamma: f64,
    pub lambda: f64,
    pub eta: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub anneal_lr: bool,
    /// Steps per environment per collection, rounded up to whole episodes.
    pub rollout_steps: usize,
    pub num_envs: usize,
    pub total_timesteps: u64,
    /// Number of collection batches kept for reuse (`M`).
    pub reuse: usize,
    pub scheme: TraceScheme,
    pub estimator: TrainEstimator,
    /// `β` for the difference-reward estimator.
    pub dae_beta: f64,
    pub seed: u64,
    pub normalize_advantages: bool,
    /// Copy critic parameters into the target every this many iterations.
    pub target_sync_every: usize,
    pub minibatches: usize,
    pub hidden: usize,
    pub max_grad_norm: Option<f64>,
    /// Evaluate every this many iterations (0 disables periodic evaluation).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_greedy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "chain_gather".into(),
            env_params: BuiltinParams::default(),
            anomaly: true,
            gamma: 0.99,
            lambda: 0.95,
            eta: 1.05,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            epochs: 5,
            learning_rate: 5e-4,
            anneal_lr: true,
            rollout_steps: 128,
            num_envs: 4,
            total_timesteps: 50_000,
            reuse: 4,
            scheme: TraceScheme::Dt,
            estimator: TrainEstimator::Gpae,
            dae_beta: 0.5,
            seed: 0,
            normalize_advantages: true,
            target_sync_every: 1,
            minibatches: 1,
            hidden: 128,
            max_grad_norm: None,
            eval_every: 1,
            eval_episodes: 32,
            eval_greedy: false,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> TrainError {
    TrainError::InvalidConfig { field, reason: reason.into() }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", "must lie in [0, 1)"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(invalid("lambda", "must lie in (0, 1]"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return Err(invalid("clip_eps", "must be positive"));
        }
        if !self.entropy_coef.is_finite() {
            return Err(invalid("entropy_coef", "must be finite"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dae_beta) {
            return Err(invalid("dae_beta", "must lie in [0, 1]"));
        }
        if let Some(norm) = self.max_grad_norm {
            if !(norm > 0.0) {
                return Err(invalid("max_grad_norm", "must be positive"));
            }
        }
        for (field, value) in [
            ("epochs", self.epochs),
            ("rollout_steps", self.rollout_steps),
            ("num_envs", self.num_envs),
            ("reuse", self.reuse),
            ("target_sync_every", self.target_sync_every),
            ("minibatches", self.minibatches),
        ] {
            if value == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.hidden < 4 {
            return Err(invalid("hidden", "must be at least 4"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.gamma, c.lambda, c.eta, c.clip_eps, c.entropy_coef), (0.99, 0.95, 1.05, 0.2, 0.01));
        assert_eq!((c.epochs, c.reuse, c.hidden), (5, 4, 128));
        assert_eq!(c.learning_rate, 5e-4);
        assert!(c.anneal_lr);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let bad = [
            TrainConfig { gamma: 1.0, ..Default::default() },
            TrainConfig { lambda: 0.0, ..Default::default() },
            TrainConfig { clip_eps: 0.0, ..Default::default() },
            TrainConfig { reuse: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig { .. })));
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"gamma": 0.9, "gama": 1}"#).unwrap_err();
        assert!(err.to_string().contains("gama"));
        let ok: TrainConfig = serde_json::from_str(r#"{"estimator": "gae", "scheme": "lambda_only"}"#).unwrap();
        assert_eq!(ok.estimator, TrainEstimator::Gae);
        assert_eq!(ok.scheme, TraceScheme::LambdaOnly);
    }
}
