//! Tabular cooperative Dec-POMDP models, tabular policies, trajectory records
//! and the anomalous-behavior wrapper.

mod builtins;
mod io;
mod sampling;

pub use builtins::{make_builtin, Builtin, BuiltinParams, BUILTIN_NAMES};
pub use io::{
    load_json, read_trajectories_jsonl, save_json, write_trajectories_jsonl, TransitionLine,
};
pub use sampling::{
    enumerate_rooted, enumerate_trajectories, enumeration_size, rollout, rollout_anomalous,
    rollout_with_rng, sample_categorical, DEFAULT_ENUMERATION_BUDGET,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that distribution rows are normalized.
pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("policy does not match model: {0}")]
    PolicyMismatch(String),
    #[error("model corruption: cannot sample from {context} (total mass {mass})")]
    ModelCorruption { context: String, mass: f64 },
    #[error("enumeration budget exceeded: {required:.3e} trajectories > budget {budget:.3e}")]
    BudgetExceeded { required: f64, budget: f64 },
    #[error("unknown built-in environment `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid built-in parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid anomaly config: {0}")]
    InvalidAnomaly(String),
    #[error("requested horizon {requested} exceeds model horizon {limit}")]
    HorizonTooLong { requested: usize, limit: usize },
    #[error("corrupt trajectory: {0}")]
    CorruptTrajectory(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A finite cooperative Dec-POMDP with a shared reward and episodic horizon.
///
/// Joint actions are encoded in mixed radix with agent 0 as the least
/// significant digit. Tables are row-major nested arrays:
/// `transition[s][a][s']`, `reward[s][a]`, `observation[i][s][o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecPomdp {
    pub num_agents: usize,
    pub num_states: usize,
    pub actions_per_agent: Vec<usize>,
    pub num_observations: Vec<usize>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub observation: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
    pub horizon: usize,
    pub reward_bound: f64,
    /// States counted as a success when reached (used for success rates).
    #[serde(default)]
    pub success_states: Vec<usize>,
}

impl DecPomdp {
    pub fn num_joint_actions(&self) -> usize {
        self.actions_per_agent.iter().product()
    }

    /// Number of joint actions of all agents except `agent`.
    pub fn num_others(&self, agent: usize) -> usize {
        self.actions_per_agent
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .map(|(_, &k)| k)
            .product()
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (a, k) in actions.iter().zip(&self.actions_per_agent) {
            idx += a * stride;
            stride *= k;
        }
        idx
    }

    pub fn decode_joint(&self, mut index: usize) -> Vec<usize> {
        self.actions_per_agent
            .iter()
            .map(|&k| {
                let a = index % k;
                index /= k;
                a
            })
            .collect()
    }

    /// Mixed-radix index of `a^{-i}`, skipping `agent`'s digit.
    pub fn others_index(&self, agent: usize, actions: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (j, (a, k)) in actions.iter().zip(&self.actions_per_agent).enumerate() {
            if j == agent {
                continue;
            }
            idx += a * stride;
            stride *= k;
        }
        idx
    }

    /// Decodes `a^{-i}` into the actions of the other agents, in agent order.
    pub fn decode_others(&self, agent: usize, mut index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_agents.saturating_sub(1));
        for (j, &k) in self.actions_per_agent.iter().enumerate() {
            if j == agent {
                continue;
            }
            out.push(index % k);
            index /= k;
        }
        out
    }

    /// Joint index of `(own, a^{-i})` for agent `agent`.
    pub fn compose(&self, agent: usize, own: usize, others: usize) -> usize {
        let mut rest = others;
        let mut idx = 0;
        let mut stride = 1;
        for (j, &k) in self.actions_per_agent.iter().enumerate() {
            let a = if j == agent {
                own
            } else {
                let a = rest % k;
                rest /= k;
                a
            };
            idx += a * stride;
            stride *= k;
        }
        idx
    }

    /// True when every agent observes the state index exactly.
    pub fn is_fully_observable(&self) -> bool {
        self.observation.iter().enumerate().all(|(i, table)| {
            self.num_observations[i] == self.num_states
                && table
                    .iter()
                    .enumerate()
                    .all(|(s, row)| row.iter().enumerate().all(|(o, &p)| p == if o == s { 1.0 } else { 0.0 }))
        })
    }

    pub fn is_success(&self, state: usize) -> bool {
        self.success_states.contains(&state)
    }

    /// Runs `validate_model` and converts a failing report into an error.
    pub fn validated(self) -> Result<Self, EnvError> {
        let report = validate_model(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(EnvError::InvalidModel(report.first_failure()))
        }
    }
}

/// Identity observation tables for `n` agents over `num_states` states.
pub fn identity_observations(n: usize, num_states: usize) -> Vec<Vec<Vec<f64>>> {
    let table: Vec<Vec<f64>> = (0..num_states)
        .map(|s| (0..num_states).map(|o| if o == s { 1.0 } else { 0.0 }).collect())
        .collect();
    vec![table; n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub invariant: String,
    pub passed: bool,
    /// Index of the first offending entry, when the check failed.
    pub index: Option<Vec<usize>>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, invariant: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.invariant == invariant)
    }

    fn first_failure(&self) -> String {
        self.checks
            .iter()
            .find(|c| !c.passed)
            .map(|c| {
                format!(
                    "{} failed at {:?}: {}",
                    c.invariant,
                    c.index.clone().unwrap_or_default(),
                    c.detail.clone().unwrap_or_default()
                )
            })
            .unwrap_or_default()
    }

    fn push(&mut self, invariant: &str, failure: Option<(Vec<usize>, String)>) {
        let (index, detail) = match failure {
            Some((i, d)) => (Some(i), Some(d)),
            None => (None, None),
        };
        self.checks.push(ValidationCheck {
            invariant: invariant.to_string(),
            passed: index.is_none(),
            index,
            detail,
        });
    }
}

fn row_failure(row: &[f64]) -> Option<String> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE || !sum.is_finite() {
        Some(format!("row sums to {sum}"))
    } else {
        None
    }
}

fn range_failure(row: &[f64]) -> Option<(usize, String)> {
    row.iter()
        .position(|p| !(0.0..=1.0).contains(p))
        .map(|k| (k, format!("probability {} outside [0,1]", row[k])))
}

fn dimension_failure(m: &DecPomdp) -> Option<(Vec<usize>, String)> {
    let joint = m.num_joint_actions();
    if m.num_agents == 0 {
        return Some((vec![], "num_agents must be at least 1".into()));
    }
    if m.num_states == 0 {
        return Some((vec![], "num_states must be at least 1".into()));
    }
    if m.actions_per_agent.len() != m.num_agents || m.actions_per_agent.contains(&0) {
        return Some((vec![], "actions_per_agent must list a positive count per agent".into()));
    }
    if m.num_observations.len() != m.num_agents || m.num_observations.contains(&0) {
        return Some((vec![], "num_observations must list a positive count per agent".into()));
    }
    if m.transition.len() != m.num_states {
        return Some((vec![], "transition must have one block per state".into()));
    }
    for (s, block) in m.transition.iter().enumerate() {
        if block.len() != joint {
            return Some((vec![s], "transition block must have one row per joint action".into()));
        }
        if let Some(a) = block.iter().position(|row| row.len() != m.num_states) {
            return Some((vec![s, a], "transition row must have one entry per state".into()));
        }
    }
    if m.reward.len() != m.num_states {
        return Some((vec![], "reward must have one row per state".into()));
    }
    if let Some(s) = m.reward.iter().position(|row| row.len() != joint) {
        return Some((vec![s], "reward row must have one entry per joint action".into()));
    }
    if m.observation.len() != m.num_agents {
        return Some((vec![], "observation must have one table per agent".into()));
    }
    for (i, table) in m.observation.iter().enumerate() {
        if table.len() != m.num_states {
            return Some((vec![i], "observation table must have one row per state".into()));
        }
        if let Some(s) = table.iter().position(|row| row.len() != m.num_observations[i]) {
            return Some((vec![i, s], "observation row has the wrong width".into()));
        }
    }
    if m.initial_dist.len() != m.num_states {
        return Some((vec![], "initial_dist must have one entry per state".into()));
    }
    if let Some(&s) = m.success_states.iter().find(|&&s| s >= m.num_states) {
        return Some((vec![s], "success state out of range".into()));
    }
    None
}

/// Checks every model invariant, reporting the first offending index of each.
pub fn validate_model(m: &DecPomdp) -> ValidationReport {
    let mut report = ValidationReport { checks: Vec::new() };
    let dims = dimension_failure(m);
    let dims_ok = dims.is_none();
    report.push("dimensions", dims);
    if !dims_ok {
        for name in [
            "transition_rows",
            "observation_rows",
            "initial_dist",
            "probability_range",
            "reward_bound",
            "discount",
            "horizon",
        ] {
            report.push(name, Some((vec![], "skipped: dimensions invalid".into())));
        }
        return report;
    }

    let mut failure = None;
    'outer: for (s, block) in m.transition.iter().enumerate() {
        for (a, row) in block.iter().enumerate() {
            if let Some(d) = row_failure(row) {
                failure = Some((vec![s, a], d));
                break 'outer;
            }
        }
    }
    report.push("transition_rows", failure);

    let mut failure = None;
    'obs: for (i, table) in m.observation.iter().enumerate() {
        for (s, row) in table.iter().enumerate() {
            if let Some(d) = row_failure(row) {
                failure = Some((vec![i, s], d));
                break 'obs;
            }
        }
    }
    report.push("observation_rows", failure);

    report.push("initial_dist", row_failure(&m.initial_dist).map(|d| (vec![], d)));

    let mut failure = None;
    'range: {
        for (s, block) in m.transition.iter().enumerate() {
            for (a, row) in block.iter().enumerate() {
                if let Some((k, d)) = range_failure(row) {
                    failure = Some((vec![0, s, a, k], d));
                    break 'range;
                }
            }
        }
        for (i, table) in m.observation.iter().enumerate() {
            for (s, row) in table.iter().enumerate() {
                if let Some((k, d)) = range_failure(row) {
                    failure = Some((vec![1, i, s, k], d));
                    break 'range;
                }
            }
        }
        if let Some((k, d)) = range_failure(&m.initial_dist) {
            failure = Some((vec![2, k], d));
        }
    }
    report.push("probability_range", failure);

    let mut failure = None;
    if !(m.reward_bound.is_finite() && m.reward_bound >= 0.0) {
        failure = Some((vec![], format!("reward_bound {} must be finite and non-negative", m.reward_bound)));
    } else {
        'rew: for (s, row) in m.reward.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                if !r.is_finite() || r.abs() > m.reward_bound {
                    failure = Some((vec![s, a], format!("reward {r} exceeds bound {}", m.reward_bound)));
                    break 'rew;
                }
            }
        }
    }
    report.push("reward_bound", failure);

    report.push(
        "discount",
        (!(0.0..1.0).contains(&m.discount)).then(|| (vec![], format!("discount {} outside [0,1)", m.discount))),
    );
    report.push(
        "horizon",
        (m.horizon == 0).then(|| (vec![], "horizon must be at least 1".to_string())),
    );
    report
}

/// Anything that yields a per-agent categorical distribution over actions
/// given that agent's observation.
pub trait Policy {
    fn distribution(&self, agent: usize, observation: usize) -> Vec<f64>;

    fn probability(&self, agent: usize, observation: usize, action: usize) -> f64 {
        self.distribution(agent, observation)[action]
    }
}

/// Per-agent tables `π^i(a^i | o^i)`, indexed `per_agent[i][o][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularPolicy {
    pub per_agent: Vec<Vec<Vec<f64>>>,
    /// Marks the policy as usable for behavior: every probability is positive.
    #[serde(default)]
    pub full_support: bool,
}

impl Policy for TabularPolicy {
    fn distribution(&self, agent: usize, observation: usize) -> Vec<f64> {
        self.per_agent[agent][observation].clone()
    }

    fn probability(&self, agent: usize, observation: usize, action: usize) -> f64 {
        self.per_agent[agent][observation][action]
    }
}

impl TabularPolicy {
    pub fn uniform(model: &DecPomdp) -> Self {
        let per_agent = (0..model.num_agents)
            .map(|i| {
                let k = model.actions_per_agent[i];
                vec![vec![1.0 / k as f64; k]; model.num_observations[i]]
            })
            .collect();
        Self { per_agent, full_support: true }
    }

    /// Same row for every observation of each agent.
    pub fn observation_independent(model: &DecPomdp, rows: &[Vec<f64>]) -> Self {
        let per_agent = (0..model.num_agents)
            .map(|i| vec![rows[i].clone(); model.num_observations[i]])
            .collect();
        let full_support = rows.iter().all(|r| r.iter().all(|&p| p > 0.0));
        Self { per_agent, full_support }
    }

    pub fn has_full_support(&self) -> bool {
        self.per_agent.iter().flatten().flatten().all(|&p| p > 0.0)
    }

    /// Checks shapes, normalization and the full-support flag against a model.
    pub fn validate(&self, model: &DecPomdp) -> Result<(), EnvError> {
        if self.per_agent.len() != model.num_agents {
            return Err(EnvError::PolicyMismatch(format!(
                "{} agent tables for {} agents",
                self.per_agent.len(),
                model.num_agents
            )));
        }
        for (i, table) in self.per_agent.iter().enumerate() {
            if table.len() != model.num_observations[i] {
                return Err(EnvError::PolicyMismatch(format!("agent {i}: wrong observation count")));
            }
            for (o, row) in table.iter().enumerate() {
                if row.len() != model.actions_per_agent[i] {
                    return Err(EnvError::PolicyMismatch(format!("agent {i}, obs {o}: wrong action count")));
                }
                if let Some(d) = row_failure(row) {
                    return Err(EnvError::PolicyMismatch(format!("agent {i}, obs {o}: {d}")));
                }
                if let Some((a, d)) = range_failure(row) {
                    return Err(EnvError::PolicyMismatch(format!("agent {i}, obs {o}, action {a}: {d}")));
                }
            }
        }
        if self.full_support && !self.has_full_support() {
            return Err(EnvError::PolicyMismatch("marked full-support but has a zero entry".into()));
        }
        Ok(())
    }

    /// `π^i(·|s)` marginalized over the agent's observation distribution.
    pub fn state_distribution(&self, model: &DecPomdp, agent: usize, state: usize) -> Vec<f64> {
        let k = model.actions_per_agent[agent];
        let mut out = vec![0.0; k];
        for (o, &po) in model.observation[agent][state].iter().enumerate() {
            if po == 0.0 {
                continue;
            }
            for (a, slot) in out.iter_mut().enumerate() {
                *slot += po * self.per_agent[agent][o][a];
            }
        }
        out
    }
}

/// Designates one agent that is forced to a "stop" action with probability `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyConfig {
    pub agent_index: usize,
    pub probability: f64,
    pub forced_action: usize,
    /// Per-step markers of where the anomaly fired, attached to a trajectory.
    #[serde(default)]
    pub event_log: Vec<bool>,
}

impl AnomalyConfig {
    pub fn new(agent_index: usize, probability: f64, forced_action: usize) -> Self {
        Self { agent_index, probability, forced_action, event_log: Vec::new() }
    }

    pub fn validate(&self, actions_per_agent: &[usize]) -> Result<(), EnvError> {
        let Some(&k) = actions_per_agent.get(self.agent_index) else {
            return Err(EnvError::InvalidAnomaly(format!("agent {} does not exist", self.agent_index)));
        };
        if self.forced_action >= k {
            return Err(EnvError::InvalidAnomaly(format!(
                "forced action {} is not valid for agent {} ({} actions)",
                self.forced_action, self.agent_index, k
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(EnvError::InvalidAnomaly(format!("probability {} outside [0,1]", self.probability)));
        }
        Ok(())
    }

    /// Mixture row `(1-p)·π + p·δ(forced)`.
    pub fn mix(&self, row: &[f64]) -> Vec<f64> {
        let p = self.probability;
        row.iter()
            .enumerate()
            .map(|(a, &q)| (1.0 - p) * q + if a == self.forced_action { p } else { 0.0 })
            .collect()
    }
}

/// Behavior policy `μ` with the designated agent mixed toward its forced action.
pub fn wrap_anomaly(policy: &TabularPolicy, cfg: &AnomalyConfig) -> Result<TabularPolicy, EnvError> {
    let counts: Vec<usize> = policy
        .per_agent
        .iter()
        .map(|t| t.first().map_or(0, Vec::len))
        .collect();
    cfg.validate(&counts)?;
    let mut out = policy.clone();
    if cfg.probability == 0.0 {
        return Ok(out);
    }
    for row in out.per_agent[cfg.agent_index].iter_mut() {
        *row = cfg.mix(row);
        let sum: f64 = row.iter().sum();
        for q in row.iter_mut() {
            *q /= sum;
        }
    }
    out.full_support = out.has_full_support();
    Ok(out)
}

/// One decision step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Decision stage within the episode.
    pub t: usize,
    pub state: usize,
    pub observations: Vec<usize>,
    pub joint_action: Vec<usize>,
    pub reward: f64,
    /// `log μ^i(a^i | o^i)` recorded at collection time.
    pub behavior_log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    /// True when the episode ran to the model horizon.
    pub terminal: bool,
    #[serde(default)]
    pub anomaly: Option<AnomalyConfig>,
    /// State reached after the last transition, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards().sum()
    }

    /// Anomaly event markers, if an anomaly log is attached.
    pub fn events(&self) -> Option<&[bool]> {
        self.anomaly.as_ref().map(|a| a.event_log.as_slice())
    }

    pub fn validate(&self, model: &DecPomdp) -> Result<(), EnvError> {
        for (k, step) in self.steps.iter().enumerate() {
            if step.joint_action.len() != model.num_agents
                || step.observations.len() != model.num_agents
                || step.behavior_log_probs.len() != model.num_agents
            {
                return Err(EnvError::CorruptTrajectory(format!("step {k}: per-agent fields have the wrong length")));
            }
            if let Some(i) = step.behavior_log_probs.iter().position(|l| !l.is_finite()) {
                return Err(EnvError::CorruptTrajectory(format!(
                    "step {k}: behavior log-prob of agent {i} is not finite"
                )));
            }
            if step.reward.abs() > model.reward_bound {
                return Err(EnvError::CorruptTrajectory(format!(
                    "step {k}: reward {} exceeds bound {}",
                    step.reward, model.reward_bound
                )));
            }
        }
        if let Some(a) = &self.anomaly {
            if a.event_log.len() != self.steps.len() {
                return Err(EnvError::CorruptTrajectory(format!(
                    "event log has {} entries for {} steps",
                    a.event_log.len(),
                    self.steps.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stateless(n: usize, k: usize) -> DecPomdp {
        let joint = k.pow(n as u32);
        DecPomdp {
            num_agents: n,
            num_states: 1,
            actions_per_agent: vec![k; n],
            num_observations: vec![1; n],
            transition: vec![vec![vec![1.0]; joint]],
            reward: vec![vec![0.0; joint]],
            observation: identity_observations(n, 1),
            initial_dist: vec![1.0],
            discount: 0.9,
            horizon: 1,
            reward_bound: 1.0,
            success_states: vec![],
        }
    }

    #[test]
    fn uniform_rows_pass_validation() {
        let mut m = stateless(2, 2);
        m.num_states = 2;
        m.transition = vec![vec![vec![0.5, 0.5]; 4]; 2];
        m.reward = vec![vec![0.0; 4]; 2];
        m.observation = identity_observations(2, 2);
        m.num_observations = vec![2, 2];
        m.initial_dist = vec![0.5, 0.5];
        assert!(validate_model(&m).is_valid());
    }

    #[test]
    fn short_transition_row_reports_index() {
        let mut m = stateless(2, 2);
        m.transition[0][3] = vec![0.9];
        let report = validate_model(&m);
        let check = report.check("transition_rows").unwrap();
        assert!(!check.passed);
        assert_eq!(check.index.as_deref(), Some(&[0, 3][..]));
    }

    #[test]
    fn reward_above_bound_fails() {
        let mut m = stateless(1, 2);
        m.reward[0][1] = 2.0;
        let report = validate_model(&m);
        assert!(!report.check("reward_bound").unwrap().passed);
        assert!(report.check("transition_rows").unwrap().passed);
    }

    #[test]
    fn joint_index_round_trips() {
        let mut m = stateless(3, 2);
        m.actions_per_agent = vec![2, 3, 4];
        for idx in 0..24 {
            let a = m.decode_joint(idx);
            assert_eq!(m.joint_index(&a), idx);
            for i in 0..3 {
                let o = m.others_index(i, &a);
                assert_eq!(m.compose(i, a[i], o), idx);
                let others = m.decode_others(i, o);
                let rest: Vec<usize> = a.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
                assert_eq!(others, rest);
            }
        }
    }

    #[test]
    fn stop_mass_after_wrapping_uniform_policy() {
        let m = stateless(2, 4);
        let pi = TabularPolicy::uniform(&m);
        let mu = wrap_anomaly(&pi, &AnomalyConfig::new(1, 0.05, 3)).unwrap();
        assert!((mu.per_agent[1][0][3] - 0.2875).abs() < 1e-15);
        assert_eq!(mu.per_agent[0], pi.per_agent[0]);
        mu.validate(&m).unwrap();
    }

    #[test]
    fn zero_probability_wrap_is_identity() {
        let m = stateless(2, 3);
        let pi = TabularPolicy::observation_independent(&m, &[vec![0.2, 0.3, 0.5], vec![0.6, 0.4, 0.0]]);
        let mu = wrap_anomaly(&pi, &AnomalyConfig::new(0, 0.0, 2)).unwrap();
        assert_eq!(mu, pi);
    }

    #[test]
    fn certain_anomaly_is_deterministic() {
        let m = stateless(2, 3);
        let pi = TabularPolicy::uniform(&m);
        let mu = wrap_anomaly(&pi, &AnomalyConfig::new(0, 1.0, 2)).unwrap();
        assert_eq!(mu.per_agent[0][0], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_anomaly_indices_are_rejected() {
        let m = stateless(2, 3);
        let pi = TabularPolicy::uniform(&m);
        assert!(wrap_anomaly(&pi, &AnomalyConfig::new(2, 0.1, 0)).is_err());
        assert!(wrap_anomaly(&pi, &AnomalyConfig::new(0, 0.1, 3)).is_err());
    }

    #[test]
    fn policy_validation_catches_bad_rows() {
        let m = stateless(1, 2);
        let bad = TabularPolicy { per_agent: vec![vec![vec![0.5, 0.6]]], full_support: false };
        assert!(bad.validate(&m).is_err());
        let flagged = TabularPolicy { per_agent: vec![vec![vec![1.0, 0.0]]], full_support: true };
        assert!(flagged.validate(&m).is_err());
    }
}
