//! Off-policy actor-critic training with a bounded reuse window.
//!
//! Each iteration collects fresh episodes with the current policy, stores
//! them in a [`ReplayWindow`], computes advantages and frozen critic targets
//! over the whole window, then runs a fixed number of epochs of actor and
//! critic updates.

mod config;
mod evaluate;
mod targets;
mod window;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{TrainConfig, TrainEstimator};
pub use evaluate::{evaluate, EvalResult, Greedy};
pub use targets::{compute_targets, trace_weights, Regression, WindowTargets};
pub use window::{ReplayWindow, StoredBatch};

use crate::approx::{
    actor_loss, clip_grad_norm, mse_loss, ActorLossConfig, ActorSample, ApproxError, Checkpoint, CriticBundle, CriticNet,
    OptimizerState, PolicyNet, ScalarNet, ValueNet,
};
use crate::correction::{gap_metric, truncate, CorrectionError, IsrSeries, TraceScheme};
use crate::env::{make_builtin, rollout_anomalous, rollout_with_rng, AnomalyConfig, DecPomdp, EnvError, Trajectory};
use crate::estimators::{advantage_gap, AdvantageSeries, EstimatorError};
use crate::seeded_rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("batch version {version} is not newer than {latest}")]
    StaleVersion { version: usize, latest: usize },
    #[error("non-finite importance ratio at step {t} for agent {agent}")]
    NonFiniteRatio { t: usize, agent: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Collection = 0,
    Evaluation = 1,
    Shuffle = 2,
    Init = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream as u64);
    rng
}

/// One row of the metrics stream. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub env_steps: u64,
    /// Mean undiscounted return of the episodes collected this iteration.
    pub train_return: f64,
    pub eval_return: Option<f64>,
    pub eval_success: Option<f64>,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Mean advantage gap at anomaly events across the window.
    pub delta_a: Option<f64>,
    pub delta_c_st: Option<f64>,
    pub delta_c_it: Option<f64>,
    pub delta_c_dt: Option<f64>,
    pub window_batches: usize,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 14] = [
        "iteration",
        "env_steps",
        "train_return",
        "eval_return",
        "eval_success",
        "actor_loss",
        "critic_loss",
        "entropy",
        "clip_fraction",
        "delta_a",
        "delta_c_st",
        "delta_c_it",
        "delta_c_dt",
        "window_batches",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint: Checkpoint,
    pub final_eval: Option<EvalResult>,
}

/// Collects whole episodes until at least `steps` transitions are gathered.
/// Behavior log-probs are those of `policy` (mixed with the anomaly, if any)
/// at collection time.
pub fn collect<R: Rng + ?Sized>(
    model: &DecPomdp,
    policy: &PolicyNet,
    anomaly: Option<&AnomalyConfig>,
    rng: &mut R,
    steps: usize,
) -> Result<Vec<Trajectory>, TrainError> {
    let mut out = Vec::new();
    let mut gathered = 0;
    while gathered < steps {
        let traj = match anomaly {
            Some(cfg) => rollout_anomalous(model, policy, cfg, rng, model.horizon)?,
            None => rollout_with_rng(model, policy, rng, model.horizon)?,
        };
        if traj.is_empty() {
            return Err(EnvError::InvalidParameter("episode produced no transitions".into()).into());
        }
        gathered += traj.len();
        out.push(traj);
    }
    Ok(out)
}

/// Builds the critic-side networks for `estimator`.
pub fn build_critic<R: Rng + ?Sized>(model: &DecPomdp, estimator: TrainEstimator, hidden: usize, rng: &mut R) -> Result<CriticBundle, TrainError> {
    Ok(match estimator {
        TrainEstimator::Gpae => CriticBundle::PerAgent { critic: CriticNet::new(model, hidden, rng)? },
        TrainEstimator::Gae => CriticBundle::StateValue { value: ValueNet::new(model.num_states, hidden, rng)? },
        TrainEstimator::Dae => CriticBundle::DifferenceReward {
            value: ValueNet::new(model.num_states, hidden, rng)?,
            reward: CriticNet::new(model, hidden, rng)?,
        },
        TrainEstimator::Coma => CriticBundle::JointQ { q: CriticNet::new(model, hidden, rng)? },
    })
}

enum NetMut<'a> {
    Critic(&'a mut CriticNet),
    Value(&'a mut ValueNet),
}

impl NetMut<'_> {
    fn num_params(&self) -> usize {
        match self {
            Self::Critic(n) => n.params.len(),
            Self::Value(n) => n.params.len(),
        }
    }

    fn sync_target(&mut self) {
        match self {
            Self::Critic(n) => n.sync_target(),
            Self::Value(n) => n.sync_target(),
        }
    }
}

fn bundle_nets(bundle: &mut CriticBundle) -> Vec<NetMut<'_>> {
    match bundle {
        CriticBundle::PerAgent { critic } => vec![NetMut::Critic(critic)],
        CriticBundle::StateValue { value } => vec![NetMut::Value(value)],
        CriticBundle::DifferenceReward { value, reward } => vec![NetMut::Value(value), NetMut::Critic(reward)],
        CriticBundle::JointQ { q } => vec![NetMut::Critic(q)],
    }
}

/// Copies every critic-side network into its target.
pub fn sync_targets(bundle: &mut CriticBundle) {
    for mut net in bundle_nets(bundle) {
        net.sync_target();
    }
}

fn chunks(order: &[usize], parts: usize) -> impl Iterator<Item = &[usize]> {
    let size = order.len().div_ceil(parts.max(1)).max(1);
    order.chunks(size)
}

fn shuffled<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

fn normalize(samples: &mut [ActorSample]) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt() + 1e-8;
    for s in samples {
        s.advantage = (s.advantage - mean) / scale;
    }
}

fn step<F>(params: &mut [f64], opt: &mut OptimizerState, max_norm: Option<f64>, loss: F) -> Result<f64, TrainError>
where
    F: FnOnce(&[f64], &mut [f64]) -> Result<f64, ApproxError>,
{
    let mut grad = vec![0.0; params.len()];
    let value = loss(params, &mut grad)?;
    if let Some(max) = max_norm {
        clip_grad_norm(&mut grad, max);
    }
    opt.apply(params, &grad)?;
    Ok(value)
}

#[derive(Default)]
struct Running {
    sum: f64,
    count: usize,
}

impl Running {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Mean actor loss, entropy and clip fraction over one epoch.
pub struct ActorEpoch {
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One epoch of clipped actor updates over shuffled minibatches.
pub fn actor_update<R: Rng + ?Sized>(
    policy: &mut PolicyNet,
    opt: &mut OptimizerState,
    samples: &[ActorSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ActorEpoch, TrainError> {
    let loss_cfg = ActorLossConfig { clip_eps: cfg.clip_eps, entropy_coef: cfg.entropy_coef };
    let (mut loss, mut entropy, mut clip) = (Running::default(), Running::default(), Running::default());
    let order = shuffled(samples.len(), rng);
    for idx in chunks(&order, cfg.minibatches) {
        let mut batch: Vec<ActorSample> = idx.iter().map(|&k| samples[k].clone()).collect();
        if cfg.normalize_advantages {
            normalize(&mut batch);
        }
        let net = policy.clone();
        let mut stats = None;
        step(&mut policy.params, opt, cfg.max_grad_norm, |p, g| {
            let s = actor_loss(&net, p, &batch, &loss_cfg, Some(g))?;
            let l = s.loss;
            stats = Some(s);
            Ok(l)
        })?;
        let stats = stats.expect("loss evaluated");
        loss.add(stats.loss);
        entropy.add(stats.entropy);
        clip.add(stats.clip_fraction);
    }
    Ok(ActorEpoch { loss: loss.mean(), entropy: entropy.mean(), clip_fraction: clip.mean() })
}

fn regress<N, R>(
    net: &mut N,
    opt: &mut OptimizerState,
    inputs: &[N::Input],
    targets: &[f64],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Running, TrainError>
where
    N: ScalarNet + Clone,
    N::Input: Clone,
    R: Rng + ?Sized,
{
    let mut loss = Running::default();
    let order = shuffled(targets.len(), rng);
    for idx in chunks(&order, cfg.minibatches) {
        let x: Vec<N::Input> = idx.iter().map(|&k| inputs[k].clone()).collect();
        let y: Vec<f64> = idx.iter().map(|&k| targets[k]).collect();
        let frozen = net.clone();
        loss.add(step(net.params_mut(), opt, cfg.max_grad_norm, |p, g| mse_loss(&frozen, p, &x, &y, Some(g)))?);
    }
    Ok(loss)
}

/// One epoch of critic regression onto frozen targets. Returns the mean loss.
pub fn critic_update<R: Rng + ?Sized>(
    bundle: &mut CriticBundle,
    opts: &mut [OptimizerState],
    regressions: &[Regression],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let mut loss = Running::default();
    for ((net, opt), reg) in bundle_nets(bundle).into_iter().zip(opts.iter_mut()).zip(regressions) {
        let r = match (net, reg) {
            (NetMut::Critic(n), Regression::Critic { inputs, targets }) => regress(n, opt, inputs, targets, cfg, rng)?,
            (NetMut::Value(n), Regression::Value { inputs, targets }) => regress(n, opt, inputs, targets, cfg, rng)?,
            _ => return Err(ApproxError::InvalidArchitecture("regression does not match critic bundle".into()).into()),
        };
        loss.add(r.mean());
    }
    Ok(loss.mean())
}

fn mean_gap(isr: &[IsrSeries], scheme: TraceScheme, cfg: &TrainConfig) -> Result<Option<f64>, TrainError> {
    let pairs: Vec<_> = isr
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| Ok((s.clone(), truncate(s, scheme, cfg.lambda, cfg.eta)?)))
        .collect::<Result<_, TrainError>>()?;
    if pairs.is_empty() {
        return Ok(None);
    }
    Ok(Some(gap_metric(&pairs)?.gap))
}

fn mean_advantage_gap(trajectories: &[&Trajectory], advantages: &[AdvantageSeries]) -> Result<Option<f64>, TrainError> {
    let items: Vec<_> = trajectories
        .iter()
        .filter(|t| !t.is_empty())
        .zip(advantages)
        .filter_map(|(t, a)| t.anomaly.as_ref().map(|cfg| (a, cfg)))
        .filter(|(a, _)| a.num_agents() >= 2)
        .collect();
    if items.is_empty() {
        return Ok(None);
    }
    Ok(advantage_gap(&items)?.mean)
}

/// Runs the full training loop. `on_record` sees every metrics row as soon
/// as it is produced, so callers can persist partial progress.
pub fn train<F>(cfg: &TrainConfig, mut on_record: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&MetricsRecord) -> Result<(), TrainError>,
{
    cfg.validate()?;
    let builtin = make_builtin(&cfg.env, &cfg.env_params)?;
    let model = &builtin.model;
    let anomaly = builtin.anomaly.as_ref().filter(|_| cfg.anomaly);

    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut collect_rng = stream_rng(cfg.seed, Stream::Collection);
    let mut eval_rng = stream_rng(cfg.seed, Stream::Evaluation);
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);

    let mut policy = PolicyNet::new(model, cfg.hidden, &mut init_rng)?;
    let mut bundle = build_critic(model, cfg.estimator, cfg.hidden, &mut init_rng)?;
    let mut actor_opt = OptimizerState::new(policy.params.len(), cfg.learning_rate, cfg.anneal_lr);
    let mut critic_opts: Vec<OptimizerState> = bundle_nets(&mut bundle)
        .iter()
        .map(|n| OptimizerState::new(n.num_params(), cfg.learning_rate, cfg.anneal_lr))
        .collect();

    let mut window = ReplayWindow::new(cfg.reuse)?;
    let batch_steps = cfg.rollout_steps * cfg.num_envs;
    let mut metrics = Vec::new();
    let mut env_steps = 0u64;
    let mut iteration = 0usize;

    while env_steps < cfg.total_timesteps {
        let progress = env_steps as f64 / cfg.total_timesteps as f64;
        actor_opt.set_progress(progress);
        for opt in &mut critic_opts {
            opt.set_progress(progress);
        }

        let fresh = collect(model, &policy, anomaly, &mut collect_rng, batch_steps)?;
        env_steps += fresh.iter().map(|t| t.len() as u64).sum::<u64>();
        let train_return = fresh.iter().map(Trajectory::undiscounted_return).sum::<f64>() / fresh.len() as f64;
        window.push(iteration, fresh)?;

        let trajectories: Vec<&Trajectory> = window.trajectories().collect();
        let targets = compute_targets(&trajectories, &bundle, &policy, cfg)?;

        let (mut a_loss, mut c_loss, mut entropy, mut clip) =
            (Running::default(), Running::default(), Running::default(), Running::default());
        for _ in 0..cfg.epochs {
            let epoch = actor_update(&mut policy, &mut actor_opt, &targets.actor_samples, cfg, &mut shuffle_rng)?;
            a_loss.add(epoch.loss);
            entropy.add(epoch.entropy);
            clip.add(epoch.clip_fraction);
            c_loss.add(critic_update(&mut bundle, &mut critic_opts, &targets.regressions, cfg, &mut shuffle_rng)?);
        }
        if (iteration + 1) % cfg.target_sync_every == 0 {
            sync_targets(&mut bundle);
        }

        let eval = if cfg.eval_every > 0 && (iteration + 1) % cfg.eval_every == 0 {
            evaluate(&policy, model, cfg.eval_episodes, &mut eval_rng, cfg.eval_greedy)?
        } else {
            None
        };

        let record = MetricsRecord {
            iteration,
            env_steps,
            train_return,
            eval_return: eval.map(|e| e.mean_return),
            eval_success: eval.and_then(|e| e.success_rate),
            actor_loss: a_loss.mean(),
            critic_loss: c_loss.mean(),
            entropy: entropy.mean(),
            clip_fraction: clip.mean(),
            delta_a: mean_advantage_gap(&trajectories, &targets.advantages)?,
            delta_c_st: mean_gap(&targets.isr, TraceScheme::St, cfg)?,
            delta_c_it: mean_gap(&targets.isr, TraceScheme::It, cfg)?,
            delta_c_dt: mean_gap(&targets.isr, TraceScheme::Dt, cfg)?,
            window_batches: window.len(),
        };
        on_record(&record)?;
        metrics.push(record);
        iteration += 1;
    }

    let final_eval = evaluate(&policy, model, cfg.eval_episodes, &mut eval_rng, cfg.eval_greedy)?;
    Ok(TrainOutcome { metrics, checkpoint: Checkpoint::new(iteration, env_steps, policy, bundle), final_eval })
}
