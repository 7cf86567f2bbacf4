//! Learning-ordering experiment: off-policy GPAE with double truncation and
//! sample reuse against the on-policy shared-advantage baseline.

use gpae_core::correction::TraceScheme;
use gpae_core::env::BuiltinParams;
use gpae_core::trainer::{train, TrainConfig, TrainEstimator};
use serde::{Deserialize, Serialize};

use crate::{map_seeds, LabError, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub model: ModelSpec,
    pub seeds: u64,
    pub seed: u64,
    pub total_timesteps: u64,
    pub rollout_steps: usize,
    pub num_envs: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Reuse window for the off-policy method. The baseline always uses 1.
    pub reuse: usize,
    pub eta: f64,
    pub final_eval_episodes: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::with(
                "chain_gather",
                BuiltinParams { length: Some(6), horizon: Some(10), push_cost: Some(0.05), ..Default::default() },
            ),
            seeds: 5,
            seed: 0,
            total_timesteps: 20_000,
            rollout_steps: 64,
            num_envs: 4,
            hidden: 16,
            learning_rate: 5e-4,
            reuse: 4,
            eta: 1.05,
            final_eval_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GpaeDt,
    GaeBaseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::GpaeDt => "gpae_dt",
            Self::GaeBaseline => "gae_baseline",
        }
    }
}

impl LearningConfig {
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let (estimator, scheme, reuse) = match method {
            Method::GpaeDt => (TrainEstimator::Gpae, TraceScheme::Dt, self.reuse),
            Method::GaeBaseline => (TrainEstimator::Gae, TraceScheme::LambdaOnly, 1),
        };
        TrainConfig {
            env: self.model.name.clone(),
            env_params: self.model.params.clone(),
            estimator,
            scheme,
            reuse,
            eta: self.eta,
            total_timesteps: self.total_timesteps,
            rollout_steps: self.rollout_steps,
            num_envs: self.num_envs,
            hidden: self.hidden,
            learning_rate: self.learning_rate,
            eval_every: 0,
            eval_episodes: self.final_eval_episodes,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRow {
    pub seed: u64,
    pub method: String,
    /// Mean over iterations of the average episodic return collected in that iteration.
    pub mean_return: f64,
    pub final_return: Option<f64>,
    pub final_success: Option<f64>,
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningSummary {
    pub seeds: usize,
    /// Seeds where the off-policy method's mean return is at least the baseline's.
    pub gpae_at_least_baseline: usize,
    pub mean_gpae: f64,
    pub mean_baseline: f64,
}

fn seed_rows(cfg: &LearningConfig, seed: u64) -> Result<Vec<LearningRow>, LabError> {
    [Method::GpaeDt, Method::GaeBaseline]
        .into_iter()
        .map(|method| {
            let out = train(&cfg.train_config(method, seed), |_| Ok(()))?;
            let steps: u64 = out.metrics.iter().map(|m| m.env_steps).max().unwrap_or(0);
            let mean_return = out.metrics.iter().map(|m| m.train_return).sum::<f64>() / out.metrics.len().max(1) as f64;
            Ok(LearningRow {
                seed,
                method: method.name().into(),
                mean_return,
                final_return: out.final_eval.map(|e| e.mean_return),
                final_success: out.final_eval.and_then(|e| e.success_rate),
                env_steps: steps,
            })
        })
        .collect()
}

pub fn run(cfg: &LearningConfig) -> Result<Vec<LearningRow>, LabError> {
    Ok(map_seeds(cfg.seed..cfg.seed + cfg.seeds, |s| seed_rows(cfg, s))?.into_iter().flatten().collect())
}

pub fn summarize(rows: &[LearningRow]) -> LearningSummary {
    let pick = |method: Method| -> Vec<&LearningRow> { rows.iter().filter(|r| r.method == method.name()).collect() };
    let (gpae, base) = (pick(Method::GpaeDt), pick(Method::GaeBaseline));
    let wins = gpae.iter().filter(|g| base.iter().any(|b| b.seed == g.seed && g.mean_return >= b.mean_return)).count();
    let mean = |xs: &[&LearningRow]| xs.iter().map(|r| r.mean_return).sum::<f64>() / xs.len().max(1) as f64;
    LearningSummary { seeds: gpae.len(), gpae_at_least_baseline: wins, mean_gpae: mean(&gpae), mean_baseline: mean(&base) }
}
