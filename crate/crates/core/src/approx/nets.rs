//! Policy, per-agent critic and state-value networks.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpTape};
use super::ApproxError;
use crate::env::{DecPomdp, Policy};

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;

fn one_hot_into(out: &mut [f64], index: usize) {
    out[index] = 1.0;
}

fn check_width(hidden: usize, minimum: usize) -> Result<(), ApproxError> {
    if hidden < minimum {
        return Err(ApproxError::InvalidArchitecture(format!("hidden width {hidden} is below {minimum}")));
    }
    Ok(())
}

/// A network with a scalar output that can be trained by regression.
pub trait ScalarNet {
    type Input;
    type Tape;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn eval(&self, params: &[f64], input: &Self::Input) -> Result<(f64, Self::Tape), ApproxError>;

    /// Adds `d_out · ∂output/∂params` to `grad`.
    fn accumulate(&self, params: &[f64], tape: &Self::Tape, d_out: f64, grad: &mut [f64]);

    /// Smallest distance of any ReLU pre-activation from its kink.
    fn kink_distance(&self, tape: &Self::Tape) -> f64;

    fn blocks(&self) -> Vec<(String, Range<usize>)>;

    fn value(&self, input: &Self::Input) -> Result<f64, ApproxError> {
        Ok(self.eval(self.params(), input)?.0)
    }
}

/// Shared categorical policy over observation and agent-id one-hots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyNet {
    pub num_agents: usize,
    pub num_observations: Vec<usize>,
    pub actions_per_agent: Vec<usize>,
    pub hidden: usize,
    pub mlp: Mlp,
    pub params: Vec<f64>,
}

/// Result of a policy forward pass for one agent.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub agent: usize,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub tape: MlpTape,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(model: &DecPomdp, hidden: usize, rng: &mut R) -> Result<Self, ApproxError> {
        Self::with_shape(model.num_agents, model.num_observations.clone(), model.actions_per_agent.clone(), hidden, rng)
    }

    pub fn with_shape<R: Rng + ?Sized>(
        num_agents: usize,
        num_observations: Vec<usize>,
        actions_per_agent: Vec<usize>,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, ApproxError> {
        check_width(hidden, 1)?;
        let obs_dim = num_observations.iter().copied().max().unwrap_or(0);
        let act_dim = actions_per_agent.iter().copied().max().unwrap_or(0);
        let mlp = Mlp::new(vec![obs_dim + num_agents, hidden, hidden, act_dim], 0, false);
        let mut params = vec![0.0; mlp.num_params()];
        mlp.init(&mut params, rng, HIDDEN_GAIN, true);
        Ok(Self { num_agents, num_observations, actions_per_agent, hidden, mlp, params })
    }

    pub fn features(&self, agent: usize, observation: usize) -> Result<Vec<f64>, ApproxError> {
        if agent >= self.num_agents {
            return Err(ApproxError::DimensionMismatch { what: "agent id", expected: self.num_agents, got: agent });
        }
        if observation >= self.num_observations[agent] {
            return Err(ApproxError::DimensionMismatch { what: "observation", expected: self.num_observations[agent], got: observation });
        }
        let obs_dim = self.mlp.input_dim() - self.num_agents;
        let mut x = vec![0.0; self.mlp.input_dim()];
        one_hot_into(&mut x, observation);
        one_hot_into(&mut x, obs_dim + agent);
        Ok(x)
    }

    pub fn forward(&self, agent: usize, observation: usize) -> Result<PolicyOutput, ApproxError> {
        self.forward_with(&self.params, agent, observation)
    }

    pub fn forward_with(&self, params: &[f64], agent: usize, observation: usize) -> Result<PolicyOutput, ApproxError> {
        let tape = self.mlp.forward(params, &self.features(agent, observation)?)?;
        let logits = &tape.output[..self.actions_per_agent[agent]];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_z).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(PolicyOutput { agent, probs, log_probs, tape })
    }

    /// Adds `Σ_a grad_logits[a] · ∂logit_a/∂params` to `grad`.
    pub fn accumulate(&self, params: &[f64], out: &PolicyOutput, grad_logits: &[f64], grad: &mut [f64]) {
        let mut full = vec![0.0; self.mlp.output_dim()];
        full[..grad_logits.len()].copy_from_slice(grad_logits);
        self.mlp.backward(params, &out.tape, &full, grad, false);
    }

    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        self.mlp.blocks("policy")
    }
}

impl Policy for PolicyNet {
    fn distribution(&self, agent: usize, observation: usize) -> Vec<f64> {
        self.forward(agent, observation).expect("agent and observation within the policy's model").probs
    }
}

/// Inputs to [`CriticNet`] for one agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticInput {
    /// State one-hot followed by agent-id one-hot.
    pub state: Vec<f64>,
    /// Concatenated one-hots of the other agents' actions.
    pub others: Vec<f64>,
    /// The agent's own action-probability vector (or an action one-hot).
    pub own: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CriticTape {
    state: MlpTape,
    others: MlpTape,
    own: MlpTape,
    head: MlpTape,
}

/// Centralized per-agent critic with three input branches: state, the other
/// agents' actions, and the agent's own action distribution. Each branch has
/// its own hidden layer; the concatenation feeds a shared head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticNet {
    pub num_agents: usize,
    pub num_states: usize,
    pub actions_per_agent: Vec<usize>,
    pub hidden: usize,
    pub state_branch: Mlp,
    pub others_branch: Mlp,
    pub own_branch: Mlp,
    pub head: Mlp,
    pub params: Vec<f64>,
    pub target: Vec<f64>,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(model: &DecPomdp, hidden: usize, rng: &mut R) -> Result<Self, ApproxError> {
        Self::with_shape(model.num_agents, model.num_states, model.actions_per_agent.clone(), hidden, rng)
    }

    pub fn with_shape<R: Rng + ?Sized>(
        num_agents: usize,
        num_states: usize,
        actions_per_agent: Vec<usize>,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, ApproxError> {
        check_width(hidden, 4)?;
        let act_dim = actions_per_agent.iter().copied().max().unwrap_or(0);
        let (half, quarter) = (hidden / 2, hidden / 4);
        let state_branch = Mlp::new(vec![num_states + num_agents, half], 0, true);
        let others_branch = Mlp::new(vec![num_agents.saturating_sub(1) * act_dim, quarter], state_branch.range().end, true);
        let own_branch = Mlp::new(vec![act_dim, quarter], others_branch.range().end, true);
        let head = Mlp::new(vec![half + 2 * quarter, hidden, 1], own_branch.range().end, false);
        let mut params = vec![0.0; head.range().end];
        for branch in [&state_branch, &others_branch, &own_branch] {
            branch.init(&mut params, rng, HIDDEN_GAIN, false);
        }
        head.init(&mut params, rng, HIDDEN_GAIN, true);
        let target = params.clone();
        Ok(Self { num_agents, num_states, actions_per_agent, hidden, state_branch, others_branch, own_branch, head, params, target })
    }

    fn act_dim(&self) -> usize {
        self.own_branch.input_dim()
    }

    /// Builds the input for `agent` at `state` given the joint action and the
    /// agent's own-action vector.
    pub fn input(&self, agent: usize, state: usize, joint_action: &[usize], own: &[f64]) -> Result<CriticInput, ApproxError> {
        if agent >= self.num_agents || joint_action.len() != self.num_agents {
            return Err(ApproxError::DimensionMismatch { what: "joint action", expected: self.num_agents, got: joint_action.len() });
        }
        if state >= self.num_states {
            return Err(ApproxError::DimensionMismatch { what: "state", expected: self.num_states, got: state });
        }
        if own.len() != self.actions_per_agent[agent] {
            return Err(ApproxError::DimensionMismatch { what: "own-action vector", expected: self.actions_per_agent[agent], got: own.len() });
        }
        let k = self.act_dim();
        let mut state_x = vec![0.0; self.state_branch.input_dim()];
        one_hot_into(&mut state_x, state);
        one_hot_into(&mut state_x, self.num_states + agent);
        let mut others = vec![0.0; self.others_branch.input_dim()];
        for (slot, (_, &a)) in joint_action.iter().enumerate().filter(|(j, _)| *j != agent).enumerate() {
            if a >= k {
                return Err(ApproxError::DimensionMismatch { what: "action", expected: k, got: a });
            }
            one_hot_into(&mut others[slot * k..(slot + 1) * k], a);
        }
        let mut own_x = vec![0.0; k];
        own_x[..own.len()].copy_from_slice(own);
        Ok(CriticInput { state: state_x, others, own: own_x })
    }

    pub fn target_value(&self, input: &CriticInput) -> Result<f64, ApproxError> {
        Ok(self.eval(&self.target, input)?.0)
    }

    /// Hard copy of the main parameters into the target.
    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.params);
    }
}

impl ScalarNet for CriticNet {
    type Input = CriticInput;
    type Tape = CriticTape;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn eval(&self, params: &[f64], input: &CriticInput) -> Result<(f64, CriticTape), ApproxError> {
        let state = self.state_branch.forward(params, &input.state)?;
        let others = self.others_branch.forward(params, &input.others)?;
        let own = self.own_branch.forward(params, &input.own)?;
        let joined: Vec<f64> = state.output.iter().chain(&others.output).chain(&own.output).copied().collect();
        let head = self.head.forward(params, &joined)?;
        let value = head.output[0];
        if !value.is_finite() {
            return Err(ApproxError::NonFinite { what: "critic output" });
        }
        Ok((value, CriticTape { state, others, own, head }))
    }

    fn accumulate(&self, params: &[f64], tape: &CriticTape, d_out: f64, grad: &mut [f64]) {
        let d_joined = self.head.backward(params, &tape.head, &[d_out], grad, true);
        let (a, b) = (self.state_branch.output_dim(), self.others_branch.output_dim());
        self.state_branch.backward(params, &tape.state, &d_joined[..a], grad, false);
        self.others_branch.backward(params, &tape.others, &d_joined[a..a + b], grad, false);
        self.own_branch.backward(params, &tape.own, &d_joined[a + b..], grad, false);
    }

    fn kink_distance(&self, tape: &CriticTape) -> f64 {
        [
            tape.state.min_kink_distance(true),
            tape.others.min_kink_distance(true),
            tape.own.min_kink_distance(true),
            tape.head.min_kink_distance(false),
        ]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min)
    }

    fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out = self.state_branch.blocks("critic.state");
        out.extend(self.others_branch.blocks("critic.others"));
        out.extend(self.own_branch.blocks("critic.own"));
        out.extend(self.head.blocks("critic.head"));
        out
    }
}

/// State-value network `V(s)` with a target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueNet {
    pub num_states: usize,
    pub hidden: usize,
    pub mlp: Mlp,
    pub params: Vec<f64>,
    pub target: Vec<f64>,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(num_states: usize, hidden: usize, rng: &mut R) -> Result<Self, ApproxError> {
        check_width(hidden, 1)?;
        let mlp = Mlp::new(vec![num_states, hidden, hidden, 1], 0, false);
        let mut params = vec![0.0; mlp.num_params()];
        mlp.init(&mut params, rng, HIDDEN_GAIN, true);
        let target = params.clone();
        Ok(Self { num_states, hidden, mlp, params, target })
    }

    pub fn input(&self, state: usize) -> Result<Vec<f64>, ApproxError> {
        if state >= self.num_states {
            return Err(ApproxError::DimensionMismatch { what: "state", expected: self.num_states, got: state });
        }
        let mut x = vec![0.0; self.num_states];
        one_hot_into(&mut x, state);
        Ok(x)
    }

    pub fn target_value(&self, input: &[f64]) -> Result<f64, ApproxError> {
        Ok(self.eval(&self.target, &input.to_vec())?.0)
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.params);
    }
}

impl ScalarNet for ValueNet {
    type Input = Vec<f64>;
    type Tape = MlpTape;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn eval(&self, params: &[f64], input: &Vec<f64>) -> Result<(f64, MlpTape), ApproxError> {
        let tape = self.mlp.forward(params, input)?;
        let value = tape.output[0];
        if !value.is_finite() {
            return Err(ApproxError::NonFinite { what: "value output" });
        }
        Ok((value, tape))
    }

    fn accumulate(&self, params: &[f64], tape: &MlpTape, d_out: f64, grad: &mut [f64]) {
        self.mlp.backward(params, tape, &[d_out], grad, false);
    }

    fn kink_distance(&self, tape: &MlpTape) -> f64 {
        tape.min_kink_distance(false).unwrap_or(f64::INFINITY)
    }

    fn blocks(&self) -> Vec<(String, Range<usize>)> {
        self.mlp.blocks("value")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_builtin, BuiltinParams};
    use crate::seeded_rng;

    fn chain() -> DecPomdp {
        make_builtin("chain_gather", &BuiltinParams::default()).unwrap().model
    }

    #[test]
    fn fresh_policy_is_uniform() {
        let m = chain();
        let net = PolicyNet::new(&m, 16, &mut seeded_rng(0)).unwrap();
        for o in 0..m.num_observations[0] {
            let out = net.forward(1, o).unwrap();
            assert!(out.probs.iter().all(|p| (p - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn policy_outputs_are_normalized_and_consistent() {
        let m = chain();
        let mut rng = seeded_rng(5);
        let mut net = PolicyNet::new(&m, 16, &mut rng).unwrap();
        for p in net.params.iter_mut() {
            *p += rng.gen_range(-1.0..1.0);
        }
        for agent in 0..2 {
            for o in 0..m.num_observations[agent] {
                let out = net.forward(agent, o).unwrap();
                assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(out.probs.iter().all(|p| *p > 0.0));
                for (p, lp) in out.probs.iter().zip(&out.log_probs) {
                    assert!((p.ln() - lp).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn policy_rejects_bad_observation() {
        let m = chain();
        let net = PolicyNet::new(&m, 8, &mut seeded_rng(0)).unwrap();
        assert!(matches!(net.forward(0, 99), Err(ApproxError::DimensionMismatch { .. })));
        assert!(matches!(net.forward(7, 0), Err(ApproxError::DimensionMismatch { .. })));
    }

    #[test]
    fn fresh_critic_outputs_zero_and_is_deterministic() {
        let m = chain();
        let net = CriticNet::new(&m, 16, &mut seeded_rng(1)).unwrap();
        let x = net.input(0, 1, &[1, 0], &[0.3, 0.7]).unwrap();
        assert_eq!(net.value(&x).unwrap(), 0.0);
        assert_eq!(net.value(&x).unwrap(), net.value(&x).unwrap());
    }

    #[test]
    fn critic_depends_on_own_probabilities() {
        let m = chain();
        let mut rng = seeded_rng(2);
        let mut net = CriticNet::new(&m, 16, &mut rng).unwrap();
        for p in net.params.iter_mut() {
            *p += rng.gen_range(-0.5..0.5);
        }
        let a = net.value(&net.input(0, 0, &[0, 1], &[0.2, 0.8]).unwrap()).unwrap();
        let b = net.value(&net.input(0, 0, &[0, 1], &[0.8, 0.2]).unwrap()).unwrap();
        assert_ne!(a, b);
        let x = net.input(0, 0, &[0, 1], &[0.2, 0.8]).unwrap();
        let (_, tape) = net.eval(&net.params, &x).unwrap();
        let mut grad = vec![0.0; net.params.len()];
        net.accumulate(&net.params, &tape, 1.0, &mut grad);
        assert!(grad[net.own_branch.range()].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn target_tracks_sync() {
        let m = chain();
        let mut rng = seeded_rng(3);
        let mut net = CriticNet::new(&m, 8, &mut rng).unwrap();
        let initial = net.target.clone();
        for p in net.params.iter_mut() {
            *p += rng.gen_range(-0.5..0.5);
        }
        assert_eq!(net.target, initial);
        net.sync_target();
        let x = net.input(1, 2, &[1, 1], &[0.5, 0.5]).unwrap();
        assert_eq!(net.value(&x).unwrap(), net.target_value(&x).unwrap());
    }

    #[test]
    fn critic_input_layout() {
        let net = CriticNet::with_shape(3, 2, vec![2, 2, 2], 8, &mut seeded_rng(0)).unwrap();
        let x = net.input(1, 1, &[1, 0, 1], &[0.25, 0.75]).unwrap();
        assert_eq!(x.state, vec![0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(x.others, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(x.own, vec![0.25, 0.75]);
        assert!(matches!(net.input(0, 0, &[0, 0, 0], &[1.0]), Err(ApproxError::DimensionMismatch { .. })));
    }

    #[test]
    fn single_agent_critic_has_empty_others_branch() {
        let net = CriticNet::with_shape(1, 3, vec![2], 8, &mut seeded_rng(0)).unwrap();
        let x = net.input(0, 2, &[1], &[0.5, 0.5]).unwrap();
        assert!(x.others.is_empty());
        assert_eq!(net.value(&x).unwrap(), 0.0);
    }
}
