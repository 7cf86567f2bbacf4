//! Per-agent TD errors and advantage estimators: GPAE (on- and off-policy),
//! GAE, COMA and DAE, plus the advantage-gap diagnostic.
//!
//! Every estimator bootstraps with 0 after the last step of a trajectory.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::{TraceScheme, TraceWeights};
use crate::env::{AnomalyConfig, DecPomdp, Policy, TabularPolicy, Trajectory};
use crate::oracle::{JointQTable, PerAgentValueTable};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("critic has no {what} for agent {agent} at step {t}")]
    MissingValue { what: &'static str, agent: usize, t: usize },
    #[error("length mismatch: {0} steps vs {1} trace rows")]
    LengthMismatch(usize, usize),
    #[error("advantage gap needs at least two agents")]
    TooFewAgents,
    #[error("invalid estimator parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The step a critic is queried at.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub t: usize,
    pub state: usize,
    pub observations: &'a [usize],
    pub joint_action: &'a [usize],
}

impl<'a> StepContext<'a> {
    pub fn of(traj: &'a Trajectory, k: usize) -> Self {
        let s = &traj.steps[k];
        Self { t: s.t, state: s.state, observations: &s.observations, joint_action: &s.joint_action }
    }
}

/// Values an estimator may need at a step. Methods return `None` when the
/// critic does not provide that quantity.
pub trait CriticView {
    /// `EQ^i(s_t, a^{-i}_t)`.
    fn eq_value(&self, agent: usize, ctx: &StepContext) -> Option<f64>;

    /// `V(s_t)`.
    fn state_value(&self, _ctx: &StepContext) -> Option<f64> {
        None
    }

    /// `Q(s_t, (a^i, a^{-i}_t))` for every own action `a^i`.
    fn q_slice(&self, _agent: usize, _ctx: &StepContext) -> Option<Vec<f64>> {
        None
    }

    /// `E_{a^i∼π^i}[r(s_t, a^i, a^{-i}_t)]`.
    fn expected_reward(&self, _agent: usize, _ctx: &StepContext) -> Option<f64> {
        None
    }
}

/// Critic backed by exact stage-indexed tables.
#[derive(Debug, Clone)]
pub struct TabularCritic<'a> {
    pub model: &'a DecPomdp,
    /// One table per agent, indexed by agent.
    pub eq: Vec<PerAgentValueTable>,
    /// `V_t(s)`.
    pub v: Option<Vec<Vec<f64>>>,
    pub q: Option<JointQTable>,
    /// `[agent][s][a^{-i}]`.
    pub expected_reward: Option<Vec<Vec<Vec<f64>>>>,
}

impl<'a> TabularCritic<'a> {
    pub fn new(model: &'a DecPomdp) -> Self {
        Self { model, eq: Vec::new(), v: None, q: None, expected_reward: None }
    }
}

impl CriticView for TabularCritic<'_> {
    fn eq_value(&self, agent: usize, ctx: &StepContext) -> Option<f64> {
        let table = self.eq.iter().find(|e| e.agent == agent)?;
        let m = self.model.others_index(agent, ctx.joint_action);
        table.values.get(ctx.t).map(|stage| stage[ctx.state][m])
    }

    fn state_value(&self, ctx: &StepContext) -> Option<f64> {
        self.v.as_ref()?.get(ctx.t).map(|stage| stage[ctx.state])
    }

    fn q_slice(&self, agent: usize, ctx: &StepContext) -> Option<Vec<f64>> {
        let q = self.q.as_ref()?;
        let stage = &q.values.get(ctx.t)?[ctx.state];
        let m = self.model.others_index(agent, ctx.joint_action);
        Some((0..self.model.actions_per_agent[agent]).map(|a| stage[self.model.compose(agent, a, m)]).collect())
    }

    fn expected_reward(&self, agent: usize, ctx: &StepContext) -> Option<f64> {
        let table = self.expected_reward.as_ref()?;
        let m = self.model.others_index(agent, ctx.joint_action);
        Some(table[agent][ctx.state][m])
    }
}

/// `E_{a^i∼π^i(·|s)}[R(s, a^i, a^{-i})]` for every `(s, a^{-i})`.
pub fn expected_reward_table(model: &DecPomdp, policy: &TabularPolicy, agent: usize) -> Vec<Vec<f64>> {
    (0..model.num_states)
        .map(|s| {
            let pi = policy.state_distribution(model, agent, s);
            (0..model.num_others(agent))
                .map(|m| pi.iter().enumerate().map(|(a, p)| p * model.reward[s][model.compose(agent, a, m)]).sum())
                .collect()
        })
        .collect()
}

/// Critic backed by per-step values precomputed for one trajectory.
#[derive(Debug, Clone, Default)]
pub struct SeriesCritic {
    /// `[t][agent]`.
    pub eq: Option<Vec<Vec<f64>>>,
    /// `[t]`.
    pub v: Option<Vec<f64>>,
    /// `[t][agent][a^i]`.
    pub q_slices: Option<Vec<Vec<Vec<f64>>>>,
    /// `[t][agent]`.
    pub expected_reward: Option<Vec<Vec<f64>>>,
}

/// Series are indexed by position in the trajectory, not by stage.
pub struct PositionedSeries<'a> {
    pub critic: &'a SeriesCritic,
    pub offset: usize,
}

impl CriticView for PositionedSeries<'_> {
    fn eq_value(&self, agent: usize, ctx: &StepContext) -> Option<f64> {
        self.critic.eq.as_ref()?.get(ctx.t - self.offset).map(|r| r[agent])
    }

    fn state_value(&self, ctx: &StepContext) -> Option<f64> {
        self.critic.v.as_ref()?.get(ctx.t - self.offset).copied()
    }

    fn q_slice(&self, agent: usize, ctx: &StepContext) -> Option<Vec<f64>> {
        self.critic.q_slices.as_ref()?.get(ctx.t - self.offset).map(|r| r[agent].clone())
    }

    fn expected_reward(&self, agent: usize, ctx: &StepContext) -> Option<f64> {
        self.critic.expected_reward.as_ref()?.get(ctx.t - self.offset).map(|r| r[agent])
    }
}

impl SeriesCritic {
    /// A view that maps each step of `traj` to its position in the series.
    pub fn view<'a>(&'a self, traj: &Trajectory) -> PositionedSeries<'a> {
        PositionedSeries { critic: self, offset: traj.steps.first().map_or(0, |s| s.t) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    GpaeOn,
    GpaeOff,
    Gae,
    Coma,
    Dae,
}

impl EstimatorTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::GpaeOn => "gpae_on",
            Self::GpaeOff => "gpae_off",
            Self::Gae => "gae",
            Self::Coma => "coma",
            Self::Dae => "dae",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub gamma: f64,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub scheme: Option<TraceScheme>,
    pub eta: Option<f64>,
}

/// Per-agent advantages, indexed `values[agent][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSeries {
    pub estimator: EstimatorTag,
    pub params: EstimatorParams,
    pub values: Vec<Vec<f64>>,
}

impl AdvantageSeries {
    pub fn num_agents(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at `(t, agent)`.
    pub fn at(&self, t: usize, agent: usize) -> f64 {
        self.values[agent][t]
    }
}

fn num_agents(traj: &Trajectory) -> usize {
    traj.steps.first().map_or(0, |s| s.joint_action.len())
}

fn check_gamma(gamma: f64) -> Result<(), EstimatorError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(EstimatorError::InvalidParameter(format!("gamma {gamma} outside [0,1]")));
    }
    Ok(())
}

/// `δ^i_t = r_t + γ·EQ^i_{t+1} − EQ^i_t`, indexed `[agent][t]`.
pub fn per_agent_td_errors<C: CriticView + ?Sized>(traj: &Trajectory, critic: &C, gamma: f64) -> Result<Vec<Vec<f64>>, EstimatorError> {
    let n = num_agents(traj);
    let len = traj.len();
    let mut eq = vec![vec![0.0; len + 1]; n];
    for k in 0..len {
        let ctx = StepContext::of(traj, k);
        for (i, row) in eq.iter_mut().enumerate() {
            row[k] = critic
                .eq_value(i, &ctx)
                .ok_or(EstimatorError::MissingValue { what: "EQ value", agent: i, t: ctx.t })?;
        }
    }
    Ok(eq
        .iter()
        .map(|row| (0..len).map(|k| traj.steps[k].reward + gamma * row[k + 1] - row[k]).collect())
        .collect())
}

/// `Â^i_t = Σ_{l≥t} γ^{l−t} (Π_{j=t+1}^{l} c^i_j) δ^i_l` by one backward pass.
pub fn gpae(deltas: &[Vec<f64>], traces: &TraceWeights, gamma: f64) -> Result<AdvantageSeries, EstimatorError> {
    check_gamma(gamma)?;
    let len = deltas.first().map_or(0, Vec::len);
    if traces.len() != len {
        return Err(EstimatorError::LengthMismatch(len, traces.len()));
    }
    let values = deltas
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut out = vec![0.0; len];
            let mut acc = 0.0;
            for t in (0..len).rev() {
                let carry = if t + 1 < len { gamma * traces.coefficient(t + 1, i) * acc } else { 0.0 };
                acc = d[t] + carry;
                out[t] = acc;
            }
            out
        })
        .collect();
    let estimator = if traces.scheme == TraceScheme::LambdaOnly { EstimatorTag::GpaeOn } else { EstimatorTag::GpaeOff };
    Ok(AdvantageSeries {
        estimator,
        params: EstimatorParams {
            gamma,
            lambda: Some(traces.lambda),
            beta: None,
            scheme: Some(traces.scheme),
            eta: Some(traces.eta),
        },
        values,
    })
}

fn discounted_backward(deltas: &[f64], decay: f64) -> Vec<f64> {
    let mut out = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        acc = deltas[t] + decay * acc;
        out[t] = acc;
    }
    out
}

fn state_values<C: CriticView + ?Sized>(traj: &Trajectory, critic: &C) -> Result<Vec<f64>, EstimatorError> {
    let mut v = Vec::with_capacity(traj.len() + 1);
    for k in 0..traj.len() {
        let ctx = StepContext::of(traj, k);
        v.push(critic.state_value(&ctx).ok_or(EstimatorError::MissingValue { what: "state value", agent: 0, t: ctx.t })?);
    }
    v.push(0.0);
    Ok(v)
}

fn gae_shared<C: CriticView + ?Sized>(traj: &Trajectory, critic: &C, gamma: f64, lambda: f64) -> Result<Vec<f64>, EstimatorError> {
    let v = state_values(traj, critic)?;
    let deltas: Vec<f64> = (0..traj.len()).map(|k| traj.steps[k].reward + gamma * v[k + 1] - v[k]).collect();
    Ok(discounted_backward(&deltas, gamma * lambda))
}

/// Shared-reward GAE on `V`, replicated identically for every agent.
pub fn gae<C: CriticView + ?Sized>(traj: &Trajectory, critic: &C, gamma: f64, lambda: f64) -> Result<AdvantageSeries, EstimatorError> {
    check_gamma(gamma)?;
    let shared = gae_shared(traj, critic, gamma, lambda)?;
    Ok(AdvantageSeries {
        estimator: EstimatorTag::Gae,
        params: EstimatorParams { gamma, lambda: Some(lambda), beta: None, scheme: None, eta: None },
        values: vec![shared; num_agents(traj)],
    })
}

/// Counterfactual advantage `Q(s,a) − Σ_{a^i} π^i(a^i|o^i) Q(s,(a^i,a^{-i}))`.
pub fn coma<C, P>(traj: &Trajectory, critic: &C, policy: &P) -> Result<AdvantageSeries, EstimatorError>
where
    C: CriticView + ?Sized,
    P: Policy + ?Sized,
{
    let n = num_agents(traj);
    let mut values = vec![vec![0.0; traj.len()]; n];
    for k in 0..traj.len() {
        let ctx = StepContext::of(traj, k);
        for (i, row) in values.iter_mut().enumerate() {
            let slice = critic
                .q_slice(i, &ctx)
                .ok_or(EstimatorError::MissingValue { what: "joint Q", agent: i, t: ctx.t })?;
            let pi = policy.distribution(i, ctx.observations[i]);
            let baseline: f64 = pi.iter().zip(&slice).map(|(p, q)| p * q).sum();
            row[k] = slice[ctx.joint_action[i]] - baseline;
        }
    }
    Ok(AdvantageSeries {
        estimator: EstimatorTag::Coma,
        params: EstimatorParams { gamma: 0.0, lambda: None, beta: None, scheme: None, eta: None },
        values,
    })
}

/// Difference-reward advantage:
/// `Â^i_t = Σ_l (γλ)^l (r_{t+l} − β^{l+1} E_{a^i}[r_{t+l}] + γV_{t+l+1} − V_{t+l})`.
pub fn dae<C: CriticView + ?Sized>(traj: &Trajectory, critic: &C, gamma: f64, lambda: f64, beta: f64) -> Result<AdvantageSeries, EstimatorError> {
    check_gamma(gamma)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(EstimatorError::InvalidParameter(format!("beta {beta} outside [0,1]")));
    }
    let shared = gae_shared(traj, critic, gamma, lambda)?;
    let n = num_agents(traj);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut er = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            let ctx = StepContext::of(traj, k);
            er.push(
                critic
                    .expected_reward(i, &ctx)
                    .ok_or(EstimatorError::MissingValue { what: "expected reward", agent: i, t: ctx.t })?,
            );
        }
        let penalty = discounted_backward(&er, gamma * lambda * beta);
        values.push(shared.iter().zip(&penalty).map(|(g, b)| g - beta * b).collect());
    }
    Ok(AdvantageSeries {
        estimator: EstimatorTag::Dae,
        params: EstimatorParams { gamma, lambda: Some(lambda), beta: Some(beta), scheme: None, eta: None },
        values,
    })
}

/// Pooled advantage gap at anomaly events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGap {
    /// Gap per event, in trajectory then time order.
    pub per_event: Vec<f64>,
    /// Mean over all events pooled across trajectories; `None` without events.
    pub mean: Option<f64>,
}

impl AdvantageGap {
    pub fn events(&self) -> usize {
        self.per_event.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_event.is_empty()
    }
}

/// `ΔA = mean_{j≠i} Â^j_t − Â^i_t` at every step where the anomaly fired for
/// the misbehaving agent `i`, pooled over all events.
pub fn advantage_gap(items: &[(&AdvantageSeries, &AnomalyConfig)]) -> Result<AdvantageGap, EstimatorError> {
    let mut per_event = Vec::new();
    for (adv, cfg) in items {
        let n = adv.num_agents();
        if n < 2 {
            return Err(EstimatorError::TooFewAgents);
        }
        if cfg.event_log.len() != adv.len() {
            return Err(EstimatorError::LengthMismatch(adv.len(), cfg.event_log.len()));
        }
        let i = cfg.agent_index;
        for (t, _) in cfg.event_log.iter().enumerate().filter(|(_, &e)| e) {
            let others: f64 = (0..n).filter(|&j| j != i).map(|j| adv.values[j][t]).sum::<f64>() / (n - 1) as f64;
            per_event.push(others - adv.values[i][t]);
        }
    }
    let mean = (!per_event.is_empty()).then(|| per_event.iter().sum::<f64>() / per_event.len() as f64);
    Ok(AdvantageGap { per_event, mean })
}

#[derive(Serialize)]
struct AdvantageRow<'a> {
    trajectory: usize,
    agent: usize,
    t: usize,
    value: f64,
    estimator: &'a str,
    gamma: f64,
    lambda: Option<f64>,
    beta: Option<f64>,
    scheme: Option<&'a str>,
    eta: Option<f64>,
}

/// Writes `trajectory,agent,t,value,estimator,gamma,lambda,beta,scheme,eta` rows.
pub fn write_advantage_csv<W: Write>(writer: W, series: &[(usize, &AdvantageSeries)]) -> Result<(), EstimatorError> {
    let mut w = csv::Writer::from_writer(writer);
    for (id, adv) in series {
        for (agent, row) in adv.values.iter().enumerate() {
            for (t, &value) in row.iter().enumerate() {
                w.serialize(AdvantageRow {
                    trajectory: *id,
                    agent,
                    t,
                    value,
                    estimator: adv.estimator.name(),
                    gamma: adv.params.gamma,
                    lambda: adv.params.lambda,
                    beta: adv.params.beta,
                    scheme: adv.params.scheme.map(TraceScheme::name),
                    eta: adv.params.eta,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Transition;

    fn traj(rewards: &[f64], agents: usize) -> Trajectory {
        Trajectory {
            steps: rewards
                .iter()
                .enumerate()
                .map(|(t, &r)| Transition {
                    t,
                    state: 0,
                    observations: vec![0; agents],
                    joint_action: vec![0; agents],
                    reward: r,
                    behavior_log_probs: vec![0.0; agents],
                })
                .collect(),
            terminal: true,
            anomaly: None,
            final_state: None,
        }
    }

    fn series(eq: Vec<Vec<f64>>, v: Vec<f64>) -> SeriesCritic {
        SeriesCritic { eq: Some(eq), v: Some(v), ..Default::default() }
    }

    #[test]
    fn zero_critic_gives_rewards() {
        let tr = traj(&[1.0, 2.0, 3.0], 2);
        let c = series(vec![vec![0.0; 2]; 3], vec![0.0; 3]);
        let d = per_agent_td_errors(&tr, &c.view(&tr), 0.9).unwrap();
        assert_eq!(d, vec![vec![1.0, 2.0, 3.0]; 2]);
    }

    #[test]
    fn terminal_bootstrap_is_zero() {
        let tr = traj(&[1.0], 1);
        let c = series(vec![vec![0.4]], vec![0.4]);
        let d = per_agent_td_errors(&tr, &c.view(&tr), 0.99).unwrap();
        assert!((d[0][0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_trace_gives_td_errors() {
        let d = vec![vec![0.3, -0.2, 0.5]];
        let w = TraceWeights { scheme: TraceScheme::LambdaOnly, lambda: 0.0, eta: 1.0, coefficients: vec![vec![0.0]; 3] };
        assert_eq!(gpae(&d, &w, 0.9).unwrap().values, d);
    }

    #[test]
    fn telescoping_two_steps() {
        let d = vec![vec![1.0, 0.0]];
        let adv = gpae(&d, &TraceWeights::lambda_only(2, 1, 1.0), 1.0).unwrap();
        assert_eq!(adv.values[0], vec![1.0, 0.0]);
        assert_eq!(adv.estimator, EstimatorTag::GpaeOn);
    }

    #[test]
    fn gpae_matches_direct_sum() {
        let d = vec![vec![0.5, -1.0, 0.25, 2.0]];
        let c = [0.0, 0.7, 0.3, 0.9];
        let w = TraceWeights { scheme: TraceScheme::Dt, lambda: 1.0, eta: 1.05, coefficients: c.iter().map(|&x| vec![x]).collect() };
        let gamma = 0.8;
        let adv = gpae(&d, &w, gamma).unwrap();
        for t in 0..4 {
            let direct: f64 = (t..4)
                .map(|l| gamma.powi((l - t) as i32) * (t + 1..=l).map(|j| c[j]).product::<f64>() * d[0][l])
                .sum();
            assert!((adv.values[0][t] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn gae_remaining_return_and_one_step() {
        let tr = traj(&[1.0, 2.0, 3.0], 3);
        let zero = series(vec![vec![0.0; 3]; 3], vec![0.0; 3]);
        let adv = gae(&tr, &zero.view(&tr), 1.0, 1.0).unwrap();
        assert_eq!(adv.values[0], vec![6.0, 5.0, 3.0]);
        assert!(adv.values.iter().all(|row| row == &adv.values[0]));

        let v = vec![0.5, 1.0, -0.5];
        let c = series(vec![vec![0.0; 3]; 3], v.clone());
        let adv = gae(&tr, &c.view(&tr), 0.9, 0.0).unwrap();
        let expect = [1.0 + 0.9 * 1.0 - 0.5, 2.0 + 0.9 * -0.5 - 1.0, 3.0 + 0.5];
        for t in 0..3 {
            assert!((adv.values[1][t] - expect[t]).abs() < 1e-15);
        }
    }

    #[test]
    fn coma_examples() {
        let tr = traj(&[0.0], 2);
        let critic = SeriesCritic { q_slices: Some(vec![vec![vec![3.0, 1.0], vec![3.0, 1.0]]]), ..Default::default() };
        let uniform = TabularPolicy { per_agent: vec![vec![vec![0.5, 0.5]]; 2], full_support: true };
        let adv = coma(&tr, &critic.view(&tr), &uniform).unwrap();
        assert_eq!(adv.values[0][0], 1.0);
        let greedy = TabularPolicy { per_agent: vec![vec![vec![1.0, 0.0]]; 2], full_support: false };
        assert_eq!(coma(&tr, &critic.view(&tr), &greedy).unwrap().values[1][0], 0.0);
    }

    #[test]
    fn dae_beta_zero_is_gae_and_single_action_case() {
        let tr = traj(&[1.0, -0.5, 2.0], 2);
        let mut c = series(vec![vec![0.0; 2]; 3], vec![0.3, 0.1, -0.2]);
        c.expected_reward = Some(vec![vec![0.7, 0.2], vec![0.1, 0.4], vec![0.0, 1.0]]);
        let g = gae(&tr, &c.view(&tr), 0.9, 0.8).unwrap();
        let d = dae(&tr, &c.view(&tr), 0.9, 0.8, 0.0).unwrap();
        for i in 0..2 {
            for t in 0..3 {
                assert!((g.values[i][t] - d.values[i][t]).abs() <= 1e-12);
            }
        }
        c.expected_reward = Some(tr.steps.iter().map(|s| vec![s.reward; 2]).collect());
        let d = dae(&tr, &c.view(&tr), 0.9, 0.0, 1.0).unwrap();
        let v = [0.3, 0.1, -0.2, 0.0];
        for t in 0..3 {
            assert!((d.values[0][t] - (0.9 * v[t + 1] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_examples() {
        let adv = AdvantageSeries {
            estimator: EstimatorTag::GpaeOn,
            params: EstimatorParams { gamma: 0.9, lambda: None, beta: None, scheme: None, eta: None },
            values: vec![vec![2.0], vec![0.0]],
        };
        let mut cfg = AnomalyConfig::new(1, 0.05, 0);
        cfg.event_log = vec![true];
        assert_eq!(advantage_gap(&[(&adv, &cfg)]).unwrap().mean, Some(2.0));
        cfg.event_log = vec![false];
        let empty = advantage_gap(&[(&adv, &cfg)]).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.mean, None);
    }

    #[test]
    fn missing_values_are_reported() {
        let tr = traj(&[1.0], 1);
        let c = SeriesCritic::default();
        assert!(matches!(per_agent_td_errors(&tr, &c.view(&tr), 0.9), Err(EstimatorError::MissingValue { .. })));
        assert!(gae(&tr, &c.view(&tr), 0.9, 0.9).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let adv = AdvantageSeries {
            estimator: EstimatorTag::Dae,
            params: EstimatorParams { gamma: 0.9, lambda: Some(0.95), beta: Some(0.5), scheme: None, eta: None },
            values: vec![vec![1.0, 2.0]],
        };
        let mut buf = Vec::new();
        write_advantage_csv(&mut buf, &[(3, &adv)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trajectory,agent,t,value,estimator,gamma,lambda,beta,scheme,eta");
        assert_eq!(lines[2], "3,0,1,2.0,dae,0.9,0.95,0.5,,");
    }
}
