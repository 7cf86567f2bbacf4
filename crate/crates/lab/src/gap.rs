//! Advantage-gap diagnostic on the anomaly model: how strongly each estimator
//! singles out the agent whose forced action caused a bad step.

use gpae_core::correction::{compute_isr, truncate, TraceScheme, TraceWeights};
use gpae_core::env::{rollout_anomalous, wrap_anomaly, AnomalyConfig, Builtin, TabularPolicy, Trajectory};
use gpae_core::estimators::{advantage_gap, coma, dae, expected_reward_table, gae, gpae, per_agent_td_errors, AdvantageSeries, TabularCritic};
use gpae_core::oracle::{counterfactual_value, exact_joint_q, fixed_point, Operator, PerAgentValueTable, Provenance};
use gpae_core::seeded_rng;
use gpae_core::trainer::{train, TrainConfig, TrainEstimator};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{map_seeds, LabError, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapEstimator {
    Gae,
    Coma,
    Dae,
    GpaeOn,
    GpaeOff,
}

impl GapEstimator {
    pub const ALL: [GapEstimator; 5] = [Self::Gae, Self::Coma, Self::Dae, Self::GpaeOn, Self::GpaeOff];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gae => "gae",
            Self::Coma => "coma",
            Self::Dae => "dae",
            Self::GpaeOn => "gpae_on",
            Self::GpaeOff => "gpae_off",
        }
    }

    /// Training settings for the performance panel.
    fn train_config(self, base: TrainConfig) -> TrainConfig {
        let (estimator, scheme, reuse) = match self {
            Self::Gae => (TrainEstimator::Gae, TraceScheme::LambdaOnly, 1),
            Self::Coma => (TrainEstimator::Coma, TraceScheme::LambdaOnly, 1),
            Self::Dae => (TrainEstimator::Dae, TraceScheme::LambdaOnly, 1),
            Self::GpaeOn => (TrainEstimator::Gpae, TraceScheme::LambdaOnly, 1),
            Self::GpaeOff => (TrainEstimator::Gpae, TraceScheme::Dt, base.reuse),
        };
        TrainConfig { estimator, scheme, reuse, ..base }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub model: ModelSpec,
    pub seeds: u64,
    pub seed: u64,
    /// Trajectories sampled per seed for the advantage panel.
    pub trajectories: usize,
    pub lambda: f64,
    pub eta: f64,
    pub dae_beta: f64,
    /// Training steps per run for the performance panel (0 disables it).
    pub performance_timesteps: u64,
    pub performance_hidden: usize,
    pub reuse: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::new("anomaly_team"),
            seeds: 20,
            seed: 0,
            trajectories: 200,
            lambda: 0.95,
            eta: 1.05,
            dae_beta: 0.5,
            performance_timesteps: 1024,
            performance_hidden: 16,
            reuse: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub estimator: String,
    pub seed: u64,
    /// Mean advantage gap over anomaly events; empty when none fired.
    pub delta_a: Option<f64>,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub estimator: String,
    pub seed: u64,
    pub final_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub mean_delta_a: f64,
    pub std_delta_a: f64,
    pub mean_final_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub seeds: usize,
    pub estimators: Vec<EstimatorSummary>,
    /// Largest `|ΔA|` of the shared-advantage estimator over all seeds.
    pub gae_max_abs_delta_a: f64,
    /// One-sided t-test of mean GPAE-off ΔA > 0 across seeds.
    pub gpae_off_t: f64,
    pub gpae_off_p_value: f64,
    /// Seeds where GPAE-off ΔA ≥ GPAE-on ΔA.
    pub off_at_least_on_seeds: usize,
}

/// Exact critics under the anomalous behavior, shared by all seeds.
struct Critics<'a> {
    target: &'a TabularPolicy,
    behavior: TabularPolicy,
    anomaly: AnomalyConfig,
    on: TabularCritic<'a>,
    off: TabularCritic<'a>,
    shared: TabularCritic<'a>,
}

fn critics<'a>(b: &'a Builtin, cfg: &GapConfig) -> Result<Critics<'a>, LabError> {
    let m = &b.model;
    let anomaly = b.anomaly.clone().ok_or_else(|| LabError::config("gap.model", format!("`{}` defines no anomaly", b.name)))?;
    if m.num_agents < 2 {
        return Err(LabError::config("gap.model", "needs at least two agents"));
    }
    let behavior = wrap_anomaly(&b.reference, &anomaly)?;
    let q_mu = exact_joint_q(m, &behavior)?;

    let mut on = TabularCritic::new(m);
    on.eq = (0..m.num_agents).map(|i| counterfactual_value(m, &q_mu, &behavior, i)).collect::<Result<_, _>>()?;

    let mut off = TabularCritic::new(m);
    off.eq = (0..m.num_agents)
        .map(|i| {
            let op = Operator::off_policy(m, &b.reference, &behavior, i, TraceScheme::Dt, cfg.lambda, cfg.eta)?;
            let zero = PerAgentValueTable::zeros(m, i, Provenance::OracleExact);
            Ok(fixed_point(&op, &zero, 1e-12, 10_000)?.table)
        })
        .collect::<Result<_, LabError>>()?;

    let mut shared = TabularCritic::new(m);
    shared.v = Some(q_mu.state_values(m, &behavior));
    shared.expected_reward = Some((0..m.num_agents).map(|i| expected_reward_table(m, &behavior, i)).collect());
    shared.q = Some(q_mu);
    Ok(Critics { target: &b.reference, behavior, anomaly, on, off, shared })
}

fn advantages(est: GapEstimator, traj: &Trajectory, c: &Critics, cfg: &GapConfig, gamma: f64) -> Result<AdvantageSeries, LabError> {
    let n = c.on.eq.len();
    Ok(match est {
        GapEstimator::Gae => gae(traj, &c.shared, gamma, cfg.lambda)?,
        GapEstimator::Coma => coma(traj, &c.shared, &c.behavior)?,
        GapEstimator::Dae => dae(traj, &c.shared, gamma, cfg.lambda, cfg.dae_beta)?,
        GapEstimator::GpaeOn => {
            let d = per_agent_td_errors(traj, &c.on, gamma)?;
            gpae(&d, &TraceWeights::lambda_only(traj.len(), n, cfg.lambda), gamma)?
        }
        GapEstimator::GpaeOff => {
            let d = per_agent_td_errors(traj, &c.off, gamma)?;
            let isr = compute_isr(traj, c.target)?;
            gpae(&d, &truncate(&isr, TraceScheme::Dt, cfg.lambda, cfg.eta)?, gamma)?
        }
    })
}

fn seed_rows(cfg: &GapConfig, b: &Builtin, c: &Critics, seed: u64) -> Result<(Vec<GapRow>, Vec<PerformanceRow>), LabError> {
    let m = &b.model;
    let mut rng = seeded_rng(seed);
    let trajs: Vec<Trajectory> = (0..cfg.trajectories)
        .map(|_| rollout_anomalous(m, c.target, &c.anomaly, &mut rng, m.horizon))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut perf = Vec::new();
    for est in GapEstimator::ALL {
        let series: Vec<AdvantageSeries> = trajs.iter().map(|t| advantages(est, t, c, cfg, m.discount)).collect::<Result<_, _>>()?;
        let items: Vec<_> = series.iter().zip(&trajs).filter_map(|(a, t)| t.anomaly.as_ref().map(|cfg| (a, cfg))).collect();
        let gap = advantage_gap(&items)?;
        rows.push(GapRow { estimator: est.name().into(), seed, delta_a: gap.mean, events: gap.events() });

        let final_return = if cfg.performance_timesteps > 0 {
            let base = TrainConfig {
                env: cfg.model.name.clone(),
                env_params: cfg.model.params.clone(),
                lambda: cfg.lambda,
                eta: cfg.eta,
                dae_beta: cfg.dae_beta,
                total_timesteps: cfg.performance_timesteps,
                rollout_steps: 64,
                num_envs: 1,
                hidden: cfg.performance_hidden,
                reuse: cfg.reuse,
                eval_every: 0,
                eval_episodes: 16,
                seed,
                ..Default::default()
            };
            train(&est.train_config(base), |_| Ok(()))?.final_eval.map(|e| e.mean_return)
        } else {
            None
        };
        perf.push(PerformanceRow { estimator: est.name().into(), seed, final_return });
    }
    Ok((rows, perf))
}

/// Both panels, grouped by seed in seed order.
pub fn run(cfg: &GapConfig) -> Result<(Vec<GapRow>, Vec<PerformanceRow>), LabError> {
    if cfg.seeds == 0 || cfg.trajectories == 0 {
        return Err(LabError::config("gap.seeds/trajectories", "must be positive"));
    }
    if cfg.performance_hidden < 4 {
        return Err(LabError::config("gap.performance_hidden", "must be at least 4"));
    }
    let b = cfg.model.build()?;
    let c = critics(&b, cfg)?;
    let per_seed = map_seeds(cfg.seed..cfg.seed + cfg.seeds, |s| seed_rows(cfg, &b, &c, s))?;
    let (mut rows, mut perf) = (Vec::new(), Vec::new());
    for (r, p) in per_seed {
        rows.extend(r);
        perf.extend(p);
    }
    Ok((rows, perf))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// One-sided p-value for `mean > 0` from a one-sample t-test.
pub fn one_sided_p(xs: &[f64]) -> (f64, f64) {
    let (mean, sd) = mean_std(xs);
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    if sd == 0.0 {
        return if mean > 0.0 { (f64::INFINITY, 0.0) } else { (f64::NAN, 1.0) };
    }
    let t = mean / (sd / (xs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, xs.len() as f64 - 1.0).expect("valid degrees of freedom");
    (t, 1.0 - dist.cdf(t))
}

pub fn summarize(rows: &[GapRow], perf: &[PerformanceRow]) -> GapSummary {
    let values = |est: GapEstimator| -> Vec<f64> { rows.iter().filter(|r| r.estimator == est.name()).filter_map(|r| r.delta_a).collect() };
    let estimators = GapEstimator::ALL
        .iter()
        .map(|&est| {
            let (mean, sd) = mean_std(&values(est));
            let returns: Vec<f64> = perf.iter().filter(|p| p.estimator == est.name()).filter_map(|p| p.final_return).collect();
            EstimatorSummary {
                estimator: est.name().into(),
                mean_delta_a: mean,
                std_delta_a: sd,
                mean_final_return: (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64),
            }
        })
        .collect();
    let (t, p) = one_sided_p(&values(GapEstimator::GpaeOff));
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    };
    let at = |est: GapEstimator, seed: u64| rows.iter().find(|r| r.seed == seed && r.estimator == est.name()).and_then(|r| r.delta_a);
    let off_at_least_on_seeds = seeds
        .iter()
        .filter(|&&s| matches!((at(GapEstimator::GpaeOff, s), at(GapEstimator::GpaeOn, s)), (Some(a), Some(b)) if a >= b))
        .count();
    GapSummary {
        seeds: seeds.len(),
        estimators,
        gae_max_abs_delta_a: values(GapEstimator::Gae).iter().map(|v| v.abs()).fold(0.0, f64::max),
        gpae_off_t: t,
        gpae_off_p_value: p,
        off_at_least_on_seeds,
    }
}
