//! Trace-gap comparison across truncation schemes on a perturbed-behavior
//! preset: random softmax target policies and behavior policies with noisy
//! logits, on a stateless team game.

use gpae_core::correction::{compute_isr, gap_metric, truncate, IsrSeries, TraceScheme};
use gpae_core::env::{rollout_with_rng, BuiltinParams, TabularPolicy};
use gpae_core::seeded_rng;
use gpae_core::trainer::{train, TrainConfig, TrainEstimator};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{map_seeds, LabError, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    /// `μ = softmax(z + σ·ε)` for the target logits `z`.
    Perturbed,
    /// `μ = π`.
    OnPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub agents: usize,
    pub actions: usize,
    pub horizon: usize,
    pub trajectories: usize,
    pub seeds: u64,
    pub seed: u64,
    pub lambda: f64,
    /// `η` used for the headline double-truncation comparison.
    pub eta: f64,
    pub eta_sweep: Vec<f64>,
    /// Standard deviation of the logit noise that separates `μ` from `π`.
    pub logit_noise: f64,
    pub behavior: BehaviorKind,
    /// Training steps per row for the downstream-return column (0 disables it).
    pub downstream_timesteps: u64,
    pub downstream_hidden: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            agents: 2,
            actions: 4,
            horizon: 16,
            trajectories: 200,
            seeds: 20,
            seed: 0,
            lambda: 0.95,
            eta: 1.05,
            eta_sweep: vec![1.0, 1.05, 1.1, 1.15],
            logit_noise: 0.5,
            behavior: BehaviorKind::Perturbed,
            downstream_timesteps: 512,
            downstream_hidden: 16,
        }
    }
}

impl CompareConfig {
    pub fn model(&self) -> ModelSpec {
        ModelSpec::with(
            "matrix_team",
            BuiltinParams { agents: Some(self.agents), actions: Some(self.actions), horizon: Some(self.horizon), ..Default::default() },
        )
    }

    /// `(scheme, η)` pairs in output order.
    pub fn variants(&self) -> Vec<(TraceScheme, Option<f64>)> {
        let mut out = vec![(TraceScheme::LambdaOnly, None), (TraceScheme::St, None), (TraceScheme::It, None)];
        let mut etas = self.eta_sweep.clone();
        if !etas.contains(&self.eta) {
            etas.push(self.eta);
        }
        out.extend(etas.into_iter().map(|e| (TraceScheme::Dt, Some(e))));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: String,
    pub eta: Option<f64>,
    pub seed: u64,
    pub delta_c: f64,
    pub d_indiv: f64,
    pub d_joint: f64,
    pub downstream_return: Option<f64>,
}

/// Per-seed ordering of the headline schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOrdering {
    pub seed: u64,
    pub dt: f64,
    pub st: f64,
    pub it: f64,
    pub dt_smallest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub seeds: usize,
    pub dt_smallest_seeds: usize,
    pub mean_dt: f64,
    pub mean_st: f64,
    pub mean_it: f64,
    pub per_seed: Vec<SeedOrdering>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Random target and behavior policies for one seed.
pub fn preset_policies(cfg: &CompareConfig, seed: u64) -> (TabularPolicy, TabularPolicy) {
    let mut rng = seeded_rng(seed);
    let mut target = Vec::with_capacity(cfg.agents);
    let mut behavior = Vec::with_capacity(cfg.agents);
    for _ in 0..cfg.agents {
        let z: Vec<f64> = (0..cfg.actions).map(|_| rng.sample(StandardNormal)).collect();
        let noisy: Vec<f64> = z.iter().map(|v| v + cfg.logit_noise * rng.sample::<f64, _>(StandardNormal)).collect();
        target.push(vec![softmax(&z)]);
        behavior.push(vec![match cfg.behavior {
            BehaviorKind::Perturbed => softmax(&noisy),
            BehaviorKind::OnPolicy => softmax(&z),
        }]);
    }
    (TabularPolicy { per_agent: target, full_support: true }, TabularPolicy { per_agent: behavior, full_support: true })
}

fn seed_rows(cfg: &CompareConfig, seed: u64) -> Result<Vec<CompareRow>, LabError> {
    let b = cfg.model().build()?;
    let (pi, mu) = preset_policies(cfg, seed);
    pi.validate(&b.model)?;
    mu.validate(&b.model)?;
    let mut rng = seeded_rng(seed);
    rng.set_stream(1);
    let isr: Vec<IsrSeries> = (0..cfg.trajectories)
        .map(|_| {
            let traj = rollout_with_rng(&b.model, &mu, &mut rng, b.model.horizon)?;
            Ok(compute_isr(&traj, &pi)?)
        })
        .collect::<Result<_, LabError>>()?;
    let mut rows = Vec::new();
    for (scheme, eta) in cfg.variants() {
        let e = eta.unwrap_or(cfg.eta);
        let pairs = isr.iter().map(|s| Ok((s.clone(), truncate(s, scheme, cfg.lambda, e)?))).collect::<Result<Vec<_>, LabError>>()?;
        let report = gap_metric(&pairs)?;
        let downstream_return = if cfg.downstream_timesteps > 0 {
            let tc = TrainConfig {
                env: "matrix_team".into(),
                env_params: cfg.model().params,
                estimator: TrainEstimator::Gpae,
                scheme,
                lambda: cfg.lambda,
                eta: e,
                total_timesteps: cfg.downstream_timesteps,
                rollout_steps: 64,
                num_envs: 1,
                hidden: cfg.downstream_hidden,
                eval_every: 0,
                eval_episodes: 16,
                seed,
                ..Default::default()
            };
            train(&tc, |_| Ok(()))?.final_eval.map(|e| e.mean_return)
        } else {
            None
        };
        rows.push(CompareRow {
            scheme: scheme.name().to_string(),
            eta,
            seed,
            delta_c: report.gap,
            d_indiv: report.d_indiv,
            d_joint: report.d_joint,
            downstream_return,
        });
    }
    Ok(rows)
}

fn validate(cfg: &CompareConfig) -> Result<(), LabError> {
    let bad = |field: &str, why: &str| Err(LabError::config(format!("compare.{field}"), why.to_string()));
    if cfg.agents < 2 {
        return bad("agents", "at least two agents are needed for a joint ratio");
    }
    if cfg.actions == 0 || cfg.horizon == 0 || cfg.trajectories == 0 || cfg.seeds == 0 {
        return bad("actions/horizon/trajectories/seeds", "must be positive");
    }
    if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
        return bad("lambda", "must lie in (0, 1]");
    }
    if cfg.eta_sweep.iter().chain([&cfg.eta]).any(|e| !(*e > 0.0 && e.is_finite())) {
        return bad("eta", "must be positive");
    }
    if !(cfg.logit_noise >= 0.0 && cfg.logit_noise.is_finite()) {
        return bad("logit_noise", "must be non-negative");
    }
    if cfg.downstream_hidden < 4 {
        return bad("downstream_hidden", "must be at least 4");
    }
    Ok(())
}

/// All rows, grouped by seed in seed order.
pub fn run(cfg: &CompareConfig) -> Result<Vec<CompareRow>, LabError> {
    validate(cfg)?;
    Ok(map_seeds(cfg.seed..cfg.seed + cfg.seeds, |s| seed_rows(cfg, s))?.into_iter().flatten().collect())
}

pub fn summarize(cfg: &CompareConfig, rows: &[CompareRow]) -> CompareSummary {
    let find = |seed: u64, scheme: TraceScheme, eta: Option<f64>| {
        rows.iter().find(|r| r.seed == seed && r.scheme == scheme.name() && r.eta == eta).map_or(f64::NAN, |r| r.delta_c)
    };
    let per_seed: Vec<SeedOrdering> = (cfg.seed..cfg.seed + cfg.seeds)
        .map(|seed| {
            let (dt, st, it) = (find(seed, TraceScheme::Dt, Some(cfg.eta)), find(seed, TraceScheme::St, None), find(seed, TraceScheme::It, None));
            SeedOrdering { seed, dt, st, it, dt_smallest: dt < st && dt < it }
        })
        .collect();
    let n = per_seed.len().max(1) as f64;
    CompareSummary {
        seeds: per_seed.len(),
        dt_smallest_seeds: per_seed.iter().filter(|s| s.dt_smallest).count(),
        mean_dt: per_seed.iter().map(|s| s.dt).sum::<f64>() / n,
        mean_st: per_seed.iter().map(|s| s.st).sum::<f64>() / n,
        mean_it: per_seed.iter().map(|s| s.it).sum::<f64>() / n,
        per_seed,
    }
}
