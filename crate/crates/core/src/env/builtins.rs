use serde::{Deserialize, Serialize};

use super::{identity_observations, AnomalyConfig, DecPomdp, EnvError, TabularPolicy};

pub const BUILTIN_NAMES: [&str; 4] = ["matrix_team", "chain_gather", "single_chain", "anomaly_team"];

/// Optional overrides for the built-in models. Unset fields take per-model defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinParams {
    pub agents: Option<usize>,
    pub actions: Option<usize>,
    pub horizon: Option<usize>,
    pub discount: Option<f64>,
    /// Chain length (number of pushes needed to reach the goal).
    pub length: Option<usize>,
    /// Probability that a joint push fails to advance the chain.
    pub slip: Option<f64>,
    /// Reward penalty per agent that pushes alone.
    pub push_cost: Option<f64>,
    /// Anomaly probability for `anomaly_team`.
    pub probability: Option<f64>,
    /// Misbehaving agent for `anomaly_team`.
    pub anomaly_agent: Option<usize>,
    /// Base model for `anomaly_team`: `matrix_team` or `chain_gather`.
    pub base: Option<String>,
}

/// A built-in model together with its reference policy and, for
/// `anomaly_team`, the anomaly that perturbs behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Builtin {
    pub name: String,
    pub model: DecPomdp,
    pub reference: TabularPolicy,
    pub anomaly: Option<AnomalyConfig>,
}

fn positive(name: &str, v: usize) -> Result<usize, EnvError> {
    if v == 0 {
        return Err(EnvError::InvalidParameter(format!("{name} must be positive")));
    }
    Ok(v)
}

fn probability(name: &str, v: f64) -> Result<f64, EnvError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(EnvError::InvalidParameter(format!("{name} must lie in [0,1]")));
    }
    Ok(v)
}

/// Row `∝ (k - a)`: decreasing preference over actions, full support.
fn decreasing_row(k: usize) -> Vec<f64> {
    let total = (k * (k + 1) / 2) as f64;
    (0..k).map(|a| (k - a) as f64 / total).collect()
}

fn matrix_team(p: &BuiltinParams, default_agents: usize, default_actions: usize, default_horizon: usize, default_discount: f64) -> Result<(DecPomdp, TabularPolicy), EnvError> {
    let n = positive("agents", p.agents.unwrap_or(default_agents))?;
    let k = positive("actions", p.actions.unwrap_or(default_actions))?;
    let joint = k.checked_pow(n as u32).ok_or_else(|| EnvError::InvalidParameter("joint action space too large".into()))?;
    let contribution = |a: usize| if k == 1 { 1.0 } else { 1.0 - a as f64 / (k - 1) as f64 };
    let mut model = DecPomdp {
        num_agents: n,
        num_states: 1,
        actions_per_agent: vec![k; n],
        num_observations: vec![1; n],
        transition: vec![vec![vec![1.0]; joint]],
        reward: vec![vec![0.0; joint]],
        observation: identity_observations(n, 1),
        initial_dist: vec![1.0],
        discount: p.discount.unwrap_or(default_discount),
        horizon: p.horizon.unwrap_or(default_horizon),
        reward_bound: 1.5,
        success_states: vec![],
    };
    for a in 0..joint {
        let acts = model.decode_joint(a);
        let mean = acts.iter().map(|&x| contribution(x)).sum::<f64>() / n as f64;
        let bonus = if acts.iter().all(|&x| x == 0) { 0.5 } else { 0.0 };
        model.reward[0][a] = mean + bonus;
    }
    let reference = TabularPolicy::observation_independent(&model, &vec![decreasing_row(k); n]);
    Ok((model, reference))
}

fn chain(p: &BuiltinParams, n: usize, default_length: usize, default_horizon: usize) -> Result<(DecPomdp, TabularPolicy), EnvError> {
    let length = positive("length", p.length.unwrap_or(default_length))?;
    let slip = probability("slip", p.slip.unwrap_or(0.1))?;
    let cost = p.push_cost.unwrap_or(0.0);
    if !(cost.is_finite() && cost >= 0.0) {
        return Err(EnvError::InvalidParameter("push_cost must be finite and non-negative".into()));
    }
    let num_states = length + 1;
    let joint = 1usize << n;
    let mut transition = vec![vec![vec![0.0; num_states]; joint]; num_states];
    let mut reward = vec![vec![0.0; joint]; num_states];
    let progress = (1.0 - slip) / length as f64;
    for s in 0..num_states {
        for a in 0..joint {
            let pushers = (0..n).filter(|&i| (a >> i) & 1 == 1).count();
            if s == length {
                transition[s][a][s] = 1.0;
            } else if pushers == n {
                transition[s][a][s + 1] = 1.0 - slip;
                transition[s][a][s] += slip;
                reward[s][a] = progress;
            } else {
                transition[s][a][s] = 1.0;
                reward[s][a] = -cost * pushers as f64;
            }
        }
    }
    let model = DecPomdp {
        num_agents: n,
        num_states,
        actions_per_agent: vec![2; n],
        num_observations: vec![num_states; n],
        transition,
        reward,
        observation: identity_observations(n, num_states),
        initial_dist: (0..num_states).map(|s| if s == 0 { 1.0 } else { 0.0 }).collect(),
        discount: p.discount.unwrap_or(0.9),
        horizon: p.horizon.unwrap_or(default_horizon),
        reward_bound: progress.max(cost * n as f64),
        success_states: vec![length],
    };
    let reference = TabularPolicy::observation_independent(&model, &vec![vec![0.3, 0.7]; n]);
    Ok((model, reference))
}

/// Builds one of the named tiny models and validates it.
///
/// * `matrix_team`: stateless repeated team game; action 0 is best for every
///   agent and unanimous play earns a bonus.
/// * `chain_gather`: two agents advance a chain only by pushing together.
/// * `single_chain`: the one-agent chain.
/// * `anomaly_team`: `matrix_team` (3 agents, 4 actions) or `chain_gather`
///   with a designated stop action that one agent is forced to take with
///   probability `p`.
pub fn make_builtin(name: &str, params: &BuiltinParams) -> Result<Builtin, EnvError> {
    let (model, reference, anomaly) = match name {
        "matrix_team" => {
            let (m, r) = matrix_team(params, 2, 2, 2, 0.9)?;
            (m, r, None)
        }
        "chain_gather" => {
            let (m, r) = chain(params, params.agents.unwrap_or(2), 2, 4)?;
            (m, r, None)
        }
        "single_chain" => {
            if params.agents.is_some_and(|n| n != 1) {
                return Err(EnvError::InvalidParameter("single_chain has exactly one agent".into()));
            }
            let (m, r) = chain(params, 1, 2, 4)?;
            (m, r, None)
        }
        "anomaly_team" => {
            let base = params.base.as_deref().unwrap_or("matrix_team");
            let (m, r, stop) = match base {
                "matrix_team" => {
                    let (m, r) = matrix_team(params, 3, 4, 8, 0.99)?;
                    let stop = m.actions_per_agent[0] - 1;
                    (m, r, stop)
                }
                "chain_gather" => {
                    let (m, r) = chain(params, params.agents.unwrap_or(2), 2, 4)?;
                    (m, r, 0)
                }
                other => return Err(EnvError::InvalidParameter(format!("unknown anomaly base `{other}`"))),
            };
            let cfg = AnomalyConfig::new(
                params.anomaly_agent.unwrap_or(0),
                probability("probability", params.probability.unwrap_or(0.05))?,
                stop,
            );
            cfg.validate(&m.actions_per_agent)?;
            (m, r, Some(cfg))
        }
        other => return Err(EnvError::UnknownBuiltin(other.to_string())),
    };
    let model = model.validated()?;
    reference.validate(&model)?;
    Ok(Builtin { name: name.to_string(), model, reference, anomaly })
}
