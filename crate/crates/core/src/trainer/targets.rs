use super::{TrainConfig, TrainError};
use crate::approx::{ActorSample, CriticBundle, CriticInput, CriticNet, PolicyNet};
use crate::correction::{truncate, IsrSeries, TraceScheme, TraceWeights};
use crate::env::Trajectory;
use crate::estimators::{coma, dae, gae, gpae, per_agent_td_errors, AdvantageSeries, SeriesCritic};

/// Frozen regression data for one critic-side network.
#[derive(Debug, Clone, PartialEq)]
pub enum Regression {
    Critic { inputs: Vec<CriticInput>, targets: Vec<f64> },
    Value { inputs: Vec<Vec<f64>>, targets: Vec<f64> },
}

impl Regression {
    pub fn targets(&self) -> &[f64] {
        match self {
            Self::Critic { targets, .. } | Self::Value { targets, .. } => targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets().len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets().is_empty()
    }
}

/// Everything the update phase consumes, computed once per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTargets {
    /// Raw (unnormalized) advantages, one series per trajectory.
    pub advantages: Vec<AdvantageSeries>,
    /// Ratios of the snapshot policy to the behavior policy.
    pub isr: Vec<IsrSeries>,
    pub actor_samples: Vec<ActorSample>,
    /// One entry per network in the critic bundle, in bundle order.
    pub regressions: Vec<Regression>,
}

/// Per-step snapshot-policy quantities for one trajectory.
struct Snapshot {
    /// `[t][agent]` action distributions.
    probs: Vec<Vec<Vec<f64>>>,
    /// `[t][agent]` log-probability of the taken action.
    log_probs: Vec<Vec<f64>>,
}

fn snapshot(traj: &Trajectory, policy: &PolicyNet) -> Result<(Snapshot, IsrSeries), TrainError> {
    let mut probs = Vec::with_capacity(traj.len());
    let mut log_probs = Vec::with_capacity(traj.len());
    let mut ratios = Vec::with_capacity(traj.len());
    for step in &traj.steps {
        let mut p_row = Vec::with_capacity(step.observations.len());
        let mut lp_row = Vec::with_capacity(step.observations.len());
        let mut rho_row = Vec::with_capacity(step.observations.len());
        for (i, &o) in step.observations.iter().enumerate() {
            let out = policy.forward(i, o)?;
            let lp = out.log_probs[step.joint_action[i]];
            let rho = (lp - step.behavior_log_probs[i]).exp();
            if !rho.is_finite() {
                return Err(TrainError::NonFiniteRatio { t: step.t, agent: i });
            }
            p_row.push(out.probs);
            lp_row.push(lp);
            rho_row.push(rho);
        }
        probs.push(p_row);
        log_probs.push(lp_row);
        ratios.push(rho_row);
    }
    Ok((Snapshot { probs, log_probs }, IsrSeries::from_individual(ratios)))
}

fn one_hot(k: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

fn critic_inputs(net: &CriticNet, traj: &Trajectory, own: impl Fn(usize, usize) -> Vec<f64>) -> Result<Vec<Vec<CriticInput>>, TrainError> {
    traj.steps
        .iter()
        .enumerate()
        .map(|(k, step)| {
            (0..step.joint_action.len())
                .map(|i| Ok(net.input(i, step.state, &step.joint_action, &own(k, i))?))
                .collect()
        })
        .collect()
}

fn target_values(net: &CriticNet, inputs: &[Vec<CriticInput>]) -> Result<Vec<Vec<f64>>, TrainError> {
    inputs.iter().map(|row| row.iter().map(|x| Ok(net.target_value(x)?)).collect()).collect()
}

/// Trace weights for the configured scheme.
pub fn trace_weights(isr: &IsrSeries, cfg: &TrainConfig) -> Result<TraceWeights, TrainError> {
    Ok(match cfg.scheme {
        TraceScheme::LambdaOnly => TraceWeights::lambda_only(isr.len(), isr.num_agents(), cfg.lambda),
        scheme => truncate(isr, scheme, cfg.lambda, cfg.eta)?,
    })
}

/// Computes advantages and frozen critic targets over `trajectories`, using the
/// target networks in `bundle` and the snapshot `policy`.
///
/// For the per-agent critic the regression target is
/// `EQ_ψ̄(s_t, a^{-i}_t) + min(1, ρ^i_t)·Â^i_t`.
pub fn compute_targets(
    trajectories: &[&Trajectory],
    bundle: &CriticBundle,
    policy: &PolicyNet,
    cfg: &TrainConfig,
) -> Result<WindowTargets, TrainError> {
    let mut out = WindowTargets { advantages: Vec::new(), isr: Vec::new(), actor_samples: Vec::new(), regressions: Vec::new() };
    let mut primary_critic: (Vec<CriticInput>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut primary_value: (Vec<Vec<f64>>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut secondary: (Vec<CriticInput>, Vec<f64>) = (Vec::new(), Vec::new());

    for traj in trajectories.iter().copied().filter(|t| !t.is_empty()) {
        let (snap, isr) = snapshot(traj, policy)?;
        let n = isr.num_agents();
        let adv = match bundle {
            CriticBundle::PerAgent { critic } => {
                let inputs = critic_inputs(critic, traj, |k, i| snap.probs[k][i].clone())?;
                let eq = target_values(critic, &inputs)?;
                let series = SeriesCritic { eq: Some(eq.clone()), ..Default::default() };
                let deltas = per_agent_td_errors(traj, &series.view(traj), cfg.gamma)?;
                let adv = gpae(&deltas, &trace_weights(&isr, cfg)?, cfg.gamma)?;
                for (k, row) in inputs.into_iter().enumerate() {
                    for (i, x) in row.into_iter().enumerate() {
                        primary_critic.0.push(x);
                        primary_critic.1.push(eq[k][i] + isr.individual[k][i].min(1.0) * adv.values[i][k]);
                    }
                }
                adv
            }
            CriticBundle::StateValue { value } | CriticBundle::DifferenceReward { value, .. } => {
                let inputs: Vec<Vec<f64>> = traj.steps.iter().map(|s| value.input(s.state)).collect::<Result<_, _>>()?;
                let v: Vec<f64> = inputs.iter().map(|x| value.target_value(x)).collect::<Result<_, _>>()?;
                let shared = gae(traj, &SeriesCritic { v: Some(v.clone()), ..Default::default() }.view(traj), cfg.gamma, cfg.lambda)?;
                for (k, x) in inputs.into_iter().enumerate() {
                    primary_value.0.push(x);
                    primary_value.1.push(v[k] + shared.values[0][k]);
                }
                match bundle {
                    CriticBundle::DifferenceReward { reward, .. } => {
                        let r_inputs = critic_inputs(reward, traj, |k, i| snap.probs[k][i].clone())?;
                        let er = target_values(reward, &r_inputs)?;
                        let series = SeriesCritic { v: Some(v), expected_reward: Some(er), ..Default::default() };
                        let adv = dae(traj, &series.view(traj), cfg.gamma, cfg.lambda, cfg.dae_beta)?;
                        for (row, step) in r_inputs.into_iter().zip(&traj.steps) {
                            for x in row {
                                secondary.0.push(x);
                                secondary.1.push(step.reward);
                            }
                        }
                        adv
                    }
                    _ => shared,
                }
            }
            CriticBundle::JointQ { q } => {
                let mut slices = Vec::with_capacity(traj.len());
                for step in &traj.steps {
                    let mut row = Vec::with_capacity(n);
                    for i in 0..n {
                        let k = q.actions_per_agent[i];
                        let slice: Vec<f64> = (0..k)
                            .map(|a| Ok(q.target_value(&q.input(i, step.state, &step.joint_action, &one_hot(k, a))?)?))
                            .collect::<Result<_, TrainError>>()?;
                        row.push(slice);
                    }
                    slices.push(row);
                }
                for (k, step) in traj.steps.iter().enumerate() {
                    for i in 0..n {
                        let bootstrap = match slices.get(k + 1) {
                            Some(next) => snap.probs[k + 1][i].iter().zip(&next[i]).map(|(p, v)| p * v).sum::<f64>(),
                            None => 0.0,
                        };
                        let own = one_hot(q.actions_per_agent[i], step.joint_action[i]);
                        primary_critic.0.push(q.input(i, step.state, &step.joint_action, &own)?);
                        primary_critic.1.push(step.reward + cfg.gamma * bootstrap);
                    }
                }
                let series = SeriesCritic { q_slices: Some(slices), ..Default::default() };
                coma(traj, &series.view(traj), policy)?
            }
        };
        for (k, step) in traj.steps.iter().enumerate() {
            for i in 0..n {
                out.actor_samples.push(ActorSample {
                    agent: i,
                    observation: step.observations[i],
                    action: step.joint_action[i],
                    advantage: adv.values[i][k],
                    log_prob_old: step.behavior_log_probs[i],
                    log_prob_curr: snap.log_probs[k][i],
                });
            }
        }
        out.advantages.push(adv);
        out.isr.push(isr);
    }

    out.regressions = match bundle {
        CriticBundle::PerAgent { .. } | CriticBundle::JointQ { .. } => {
            vec![Regression::Critic { inputs: primary_critic.0, targets: primary_critic.1 }]
        }
        CriticBundle::StateValue { .. } => vec![Regression::Value { inputs: primary_value.0, targets: primary_value.1 }],
        CriticBundle::DifferenceReward { .. } => vec![
            Regression::Value { inputs: primary_value.0, targets: primary_value.1 },
            Regression::Critic { inputs: secondary.0, targets: secondary.1 },
        ],
    };
    Ok(out)
}
