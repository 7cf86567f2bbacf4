//! Exact dynamic programming on tiny models: joint `Q^π`, the counterfactual
//! per-agent value `EQ^i`, the on- and off-policy per-agent value-iteration
//! operators, fixed-point iteration and empirical contraction certificates.
//!
//! Tables are stage-indexed: entry `t` holds values at decision stage `t` of
//! an episode of length `H`, with all values after stage `H-1` equal to 0.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::{check_trace_params, compute_isr, truncate, CorrectionError, TraceScheme};
use crate::env::{enumerate_rooted, DecPomdp, EnvError, TabularPolicy};
use crate::estimators::{gpae, per_agent_td_errors, EstimatorError, TabularCritic};
use crate::seeded_rng;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("agent {0} is out of range")]
    AgentOutOfRange(usize),
    #[error("table shape does not match the model: {0}")]
    ShapeMismatch(String),
    #[error("behavior policy has zero mass on target-supported action {action} of agent {agent} in state {state}")]
    InfiniteRatio { state: usize, agent: usize, action: usize },
    #[error("off-policy operators require a fully observable model")]
    PartialObservability,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OracleExact,
    Learned,
    ArbitraryTestInput,
}

/// `Q_t(s, a)` indexed `[t][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointQTable {
    pub discount: f64,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl JointQTable {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `V_t(s) = Σ_a π(a|s) Q_t(s,a)`, indexed `[t][s]`.
    pub fn state_values(&self, model: &DecPomdp, policy: &TabularPolicy) -> Vec<Vec<f64>> {
        let joint = joint_distributions(model, policy);
        self.values
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .zip(&joint)
                    .map(|(q, p)| q.iter().zip(p).map(|(q, p)| q * p).sum())
                    .collect()
            })
            .collect()
    }
}

/// `EQ^i_t(s, a^{-i})` indexed `[t][s][a^{-i}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerAgentValueTable {
    pub agent: usize,
    pub values: Vec<Vec<Vec<f64>>>,
    pub provenance: Provenance,
}

impl PerAgentValueTable {
    pub fn zeros(model: &DecPomdp, agent: usize, provenance: Provenance) -> Self {
        let values = vec![vec![vec![0.0; model.num_others(agent)]; model.num_states]; model.horizon];
        Self { agent, values, provenance }
    }

    /// Entries uniform in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(model: &DecPomdp, agent: usize, scale: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(model, agent, Provenance::ArbitraryTestInput);
        t.map_in_place(|_| rng.gen_range(-scale..=scale));
        t
    }

    pub fn map_in_place(&mut self, mut f: impl FnMut(f64) -> f64) {
        for v in self.values.iter_mut().flatten().flatten() {
            *v = f(*v);
        }
    }

    /// Elementwise combination of two tables of the same shape.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (o, b) in out.values.iter_mut().flatten().flatten().zip(other.values.iter().flatten().flatten()) {
            *o = f(*o, *b);
        }
        out
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flatten()
            .zip(other.values.iter().flatten().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_shape(&self, model: &DecPomdp) -> Result<(), OracleError> {
        let others = model.num_others(self.agent);
        let ok = self.values.len() == model.horizon
            && self.values.iter().all(|stage| stage.len() == model.num_states && stage.iter().all(|r| r.len() == others));
        if ok {
            Ok(())
        } else {
            Err(OracleError::ShapeMismatch(format!("agent {} table", self.agent)))
        }
    }
}

fn joint_distributions(model: &DecPomdp, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    (0..model.num_states)
        .map(|s| {
            let per: Vec<Vec<f64>> = (0..model.num_agents).map(|i| policy.state_distribution(model, i, s)).collect();
            (0..model.num_joint_actions())
                .map(|a| model.decode_joint(a).iter().enumerate().map(|(i, &x)| per[i][x]).product())
                .collect()
        })
        .collect()
}

fn check_inputs(model: &DecPomdp, policy: &TabularPolicy) -> Result<(), OracleError> {
    model.clone().validated()?;
    policy.validate(model)?;
    Ok(())
}

/// Backward induction `Q_t(s,a) = R(s,a) + γ Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') Q_{t+1}(s',a')`.
pub fn exact_joint_q(model: &DecPomdp, policy: &TabularPolicy) -> Result<JointQTable, OracleError> {
    check_inputs(model, policy)?;
    let joint = joint_distributions(model, policy);
    let (ns, na) = (model.num_states, model.num_joint_actions());
    let mut values = vec![vec![vec![0.0; na]; ns]; model.horizon];
    let mut v_next = vec![0.0; ns];
    for t in (0..model.horizon).rev() {
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = model.transition[s][a].iter().zip(&v_next).map(|(p, v)| p * v).sum();
                values[t][s][a] = model.reward[s][a] + model.discount * future;
            }
        }
        v_next = (0..ns).map(|s| values[t][s].iter().zip(&joint[s]).map(|(q, p)| q * p).sum()).collect();
    }
    Ok(JointQTable { discount: model.discount, values })
}

/// `EQ^i_t(s, a^{-i}) = Σ_{a^i} π^i(a^i|s) Q_t(s, a^i, a^{-i})`.
pub fn counterfactual_value(model: &DecPomdp, q: &JointQTable, policy: &TabularPolicy, agent: usize) -> Result<PerAgentValueTable, OracleError> {
    if agent >= model.num_agents {
        return Err(OracleError::AgentOutOfRange(agent));
    }
    let values = q
        .values
        .iter()
        .map(|stage| {
            (0..model.num_states)
                .map(|s| {
                    let pi = policy.state_distribution(model, agent, s);
                    (0..model.num_others(agent))
                        .map(|m| pi.iter().enumerate().map(|(a, p)| p * stage[s][model.compose(agent, a, m)]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(PerAgentValueTable { agent, values, provenance: Provenance::OracleExact })
}

/// Which operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OperatorKind {
    /// Trajectories and the own-action expectation both follow `π`, traces `λ`.
    OnPolicy,
    /// Trajectories follow `μ`, the root action is reweighted by the
    /// untruncated `ρ^i_0`, and later steps use the given trace scheme.
    OffPolicy { scheme: TraceScheme, eta: f64 },
}

/// A per-agent value-iteration operator with its policy tables precomputed.
#[derive(Debug, Clone)]
pub struct Operator<'a> {
    model: &'a DecPomdp,
    target: &'a TabularPolicy,
    behavior: &'a TabularPolicy,
    pub agent: usize,
    pub lambda: f64,
    pub kind: OperatorKind,
    gamma: f64,
    /// `π^i(·|s)` for the agent, `[s][a^i]`.
    own_target: Vec<Vec<f64>>,
    /// Joint trajectory distribution, `[s][a]`.
    joint_behavior: Vec<Vec<f64>>,
    /// Trace coefficient at `(s, a)`, `[s][a]`.
    traces: Vec<Vec<f64>>,
    /// `a^{-i}` index of each joint action.
    others_of: Vec<usize>,
    /// Joint index of `(a^i, a^{-i})`, `[a^{-i}][a^i]`.
    compose: Vec<Vec<usize>>,
}

impl<'a> Operator<'a> {
    fn build(
        model: &'a DecPomdp,
        target: &'a TabularPolicy,
        behavior: &'a TabularPolicy,
        agent: usize,
        lambda: f64,
        kind: OperatorKind,
    ) -> Result<Self, OracleError> {
        check_inputs(model, target)?;
        behavior.validate(model)?;
        if agent >= model.num_agents {
            return Err(OracleError::AgentOutOfRange(agent));
        }
        let eta = match kind {
            OperatorKind::OnPolicy => 1.0,
            OperatorKind::OffPolicy { eta, .. } => eta,
        };
        check_trace_params(lambda, eta)?;
        let per_target: Vec<Vec<Vec<f64>>> = (0..model.num_agents)
            .map(|i| (0..model.num_states).map(|s| target.state_distribution(model, i, s)).collect())
            .collect();
        let per_behavior: Vec<Vec<Vec<f64>>> = (0..model.num_agents)
            .map(|i| (0..model.num_states).map(|s| behavior.state_distribution(model, i, s)).collect())
            .collect();
        let na = model.num_joint_actions();
        let decoded: Vec<Vec<usize>> = (0..na).map(|a| model.decode_joint(a)).collect();
        let mut traces = vec![vec![lambda; na]; model.num_states];
        if let OperatorKind::OffPolicy { scheme, eta } = kind {
            if !model.is_fully_observable() {
                return Err(OracleError::PartialObservability);
            }
            for s in 0..model.num_states {
                for i in 0..model.num_agents {
                    for a in 0..model.actions_per_agent[i] {
                        if per_target[i][s][a] > 0.0 && per_behavior[i][s][a] == 0.0 {
                            return Err(OracleError::InfiniteRatio { state: s, agent: i, action: a });
                        }
                    }
                }
                for (a, acts) in decoded.iter().enumerate() {
                    let ratio = |i: usize| {
                        let mu = per_behavior[i][s][acts[i]];
                        if mu == 0.0 {
                            0.0
                        } else {
                            per_target[i][s][acts[i]] / mu
                        }
                    };
                    let rho_i = ratio(agent);
                    let rho_minus: f64 = (0..model.num_agents).filter(|&j| j != agent).map(ratio).product();
                    traces[s][a] = scheme.coefficient(rho_i, rho_minus, lambda, eta);
                }
            }
        }
        let joint_behavior = joint_distributions(model, behavior);
        let others_of = decoded.iter().map(|acts| model.others_index(agent, acts)).collect();
        let compose = (0..model.num_others(agent))
            .map(|m| (0..model.actions_per_agent[agent]).map(|x| model.compose(agent, x, m)).collect())
            .collect();
        Ok(Self {
            model,
            target,
            behavior,
            agent,
            lambda,
            kind,
            gamma: model.discount,
            own_target: per_target[agent].clone(),
            joint_behavior,
            traces,
            others_of,
            compose,
        })
    }

    /// The on-policy operator for `agent` under `π` with trace `λ`.
    pub fn on_policy(model: &'a DecPomdp, target: &'a TabularPolicy, agent: usize, lambda: f64) -> Result<Self, OracleError> {
        Self::build(model, target, target, agent, lambda, OperatorKind::OnPolicy)
    }

    /// The off-policy operator for target `π`, behavior `μ` and a trace scheme.
    pub fn off_policy(
        model: &'a DecPomdp,
        target: &'a TabularPolicy,
        behavior: &'a TabularPolicy,
        agent: usize,
        scheme: TraceScheme,
        lambda: f64,
        eta: f64,
    ) -> Result<Self, OracleError> {
        Self::build(model, target, behavior, agent, lambda, OperatorKind::OffPolicy { scheme, eta })
    }

    /// Multiplies the discount used inside the operator. Only for seeding
    /// faults into certification tests.
    pub fn with_discount_scale(mut self, scale: f64) -> Self {
        self.gamma = self.model.discount * scale;
        self
    }

    /// `γ(1−λ)/(1−γλ)` for the on-policy operator, `γ` otherwise.
    pub fn contraction_bound(&self) -> f64 {
        let g = self.model.discount;
        match self.kind {
            OperatorKind::OnPolicy => g * (1.0 - self.lambda) / (1.0 - g * self.lambda),
            OperatorKind::OffPolicy { .. } => g,
        }
    }

    pub fn apply(&self, input: &PerAgentValueTable) -> Result<PerAgentValueTable, OracleError> {
        if input.agent != self.agent {
            return Err(OracleError::ShapeMismatch(format!("table for agent {} given to operator for agent {}", input.agent, self.agent)));
        }
        input.check_shape(self.model)?;
        Ok(match self.kind {
            OperatorKind::OnPolicy => self.apply_on(input),
            OperatorKind::OffPolicy { .. } => self.apply_off(input),
        })
    }

    /// Continuation value at stage `t+1` averaged over the next state.
    fn expected_next(&self, s: usize, a: usize, w: &[f64]) -> f64 {
        self.model.transition[s][a].iter().zip(w).map(|(p, v)| p * v).sum()
    }

    fn apply_on(&self, f: &PerAgentValueTable) -> PerAgentValueTable {
        let m = self.model;
        let (ns, na, lambda) = (m.num_states, m.num_joint_actions(), self.lambda);
        let mut out = PerAgentValueTable::zeros(m, self.agent, f.provenance);
        let mut g_next = vec![vec![0.0; na]; ns];
        for t in (0..m.horizon).rev() {
            let w: Vec<f64> = (0..ns)
                .map(|s2| {
                    if t + 1 == m.horizon {
                        return 0.0;
                    }
                    let f_next = &f.values[t + 1][s2];
                    (0..na)
                        .map(|a2| self.joint_behavior[s2][a2] * ((1.0 - lambda) * f_next[self.others_of[a2]] + lambda * g_next[s2][a2]))
                        .sum()
                })
                .collect();
            let mut g = vec![vec![0.0; na]; ns];
            for s in 0..ns {
                for a in 0..na {
                    g[s][a] = m.reward[s][a] + self.gamma * self.expected_next(s, a, &w);
                }
                for (mi, row) in self.compose.iter().enumerate() {
                    out.values[t][s][mi] = row.iter().zip(&self.own_target[s]).map(|(&a, p)| p * g[s][a]).sum();
                }
            }
            g_next = g;
        }
        out
    }

    fn apply_off(&self, f: &PerAgentValueTable) -> PerAgentValueTable {
        let m = self.model;
        let (ns, na) = (m.num_states, m.num_joint_actions());
        let mut out = PerAgentValueTable::zeros(m, self.agent, f.provenance);
        let mut d_next = vec![vec![0.0; na]; ns];
        for t in (0..m.horizon).rev() {
            let w: Vec<f64> = (0..ns)
                .map(|s2| {
                    if t + 1 == m.horizon {
                        return 0.0;
                    }
                    let f_next = &f.values[t + 1][s2];
                    (0..na)
                        .map(|a2| self.joint_behavior[s2][a2] * (f_next[self.others_of[a2]] + self.traces[s2][a2] * d_next[s2][a2]))
                        .sum()
                })
                .collect();
            let mut d = vec![vec![0.0; na]; ns];
            for s in 0..ns {
                for a in 0..na {
                    d[s][a] = m.reward[s][a] - f.values[t][s][self.others_of[a]] + self.gamma * self.expected_next(s, a, &w);
                }
                for (mi, row) in self.compose.iter().enumerate() {
                    let corr: f64 = row.iter().zip(&self.own_target[s]).map(|(&a, p)| p * d[s][a]).sum();
                    out.values[t][s][mi] = f.values[t][s][mi] + corr;
                }
            }
            d_next = d;
        }
        out
    }

    /// Literal evaluation by enumerating every continuation from each root
    /// `(t, s, a^i, a^{-i})` and summing trace-weighted TD errors. Exponential;
    /// kept as a cross-check of [`Operator::apply`].
    pub fn apply_enumerated(&self, f: &PerAgentValueTable, budget: f64) -> Result<PerAgentValueTable, OracleError> {
        f.check_shape(self.model)?;
        let m = self.model;
        let gamma = self.gamma;
        let (scheme, eta) = match self.kind {
            OperatorKind::OnPolicy => (TraceScheme::LambdaOnly, 1.0),
            OperatorKind::OffPolicy { scheme, eta } => (scheme, eta),
        };
        let value = |t: usize, s: usize, acts: &[usize]| f.values[t][s][m.others_index(self.agent, acts)];
        let mut out = f.clone();
        for t in 0..m.horizon {
            for s in 0..m.num_states {
                for (mi, row) in self.compose.iter().enumerate() {
                    let mut total = 0.0;
                    for (x, &a) in row.iter().enumerate() {
                        let p_own = self.own_target[s][x];
                        if p_own == 0.0 {
                            continue;
                        }
                        let root = m.decode_joint(a);
                        let mut expectation = 0.0;
                        for (traj, p) in enumerate_rooted(m, self.behavior, t, s, Some(&root), budget)? {
                            let isr = compute_isr(&traj, self.target)?;
                            let w = truncate(&isr, scheme, self.lambda, eta)?;
                            let steps = &traj.steps;
                            let mut sum = 0.0;
                            let mut weight = 1.0;
                            for (k, step) in steps.iter().enumerate() {
                                if k > 0 {
                                    weight *= gamma * w.coefficient(k, self.agent);
                                }
                                let next = steps.get(k + 1).map_or(0.0, |n| value(n.t, n.state, &n.joint_action));
                                let delta = step.reward + gamma * next - value(step.t, step.state, &step.joint_action);
                                sum += weight * delta;
                            }
                            expectation += p * sum;
                        }
                        total += p_own * expectation;
                    }
                    out.values[t][s][mi] = f.values[t][s][mi] + total;
                }
            }
        }
        Ok(out)
    }
}

/// On-policy operator applied once.
pub fn apply_operator_on(model: &DecPomdp, policy: &TabularPolicy, lambda: f64, input: &PerAgentValueTable) -> Result<PerAgentValueTable, OracleError> {
    Operator::on_policy(model, policy, input.agent, lambda)?.apply(input)
}

/// Off-policy operator applied once.
pub fn apply_operator_off(
    model: &DecPomdp,
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    scheme: TraceScheme,
    lambda: f64,
    eta: f64,
    input: &PerAgentValueTable,
) -> Result<PerAgentValueTable, OracleError> {
    Operator::off_policy(model, target, behavior, input.agent, scheme, lambda, eta)?.apply(input)
}

/// Below this delta, successive-delta ratios are dominated by rounding and
/// are not recorded.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub iterations: usize,
    /// `‖f_{k+1} − f_k‖∞` per iteration.
    pub deltas: Vec<f64>,
    /// `delta_{k+1} / delta_k` while `delta_k` is above [`RATIO_FLOOR`].
    pub ratios: Vec<f64>,
    pub converged: bool,
    /// Largest recorded ratio, if any.
    pub contraction_estimate: Option<f64>,
    pub table: PerAgentValueTable,
}

/// Iterates `f ← R f` until the sup-norm change drops below `tol`.
pub fn fixed_point(op: &Operator, init: &PerAgentValueTable, tol: f64, max_iter: usize) -> Result<OperatorReport, OracleError> {
    if !(tol > 0.0) {
        return Err(OracleError::InvalidParameter("tol must be positive".into()));
    }
    let mut f = init.clone();
    let mut deltas = Vec::new();
    let mut converged = false;
    while deltas.len() < max_iter {
        let next = op.apply(&f)?;
        let delta = next.sup_distance(&f);
        deltas.push(delta);
        f = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    let ratios: Vec<f64> = deltas.windows(2).filter(|w| w[0] > RATIO_FLOOR).map(|w| w[1] / w[0]).collect();
    let contraction_estimate = ratios.iter().copied().reduce(f64::max);
    Ok(OperatorReport { iterations: deltas.len(), deltas, ratios, converged, contraction_estimate, table: f })
}

/// How a random input pair is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Independent,
    /// `f2 = f1 + c` for a constant `c`.
    ConstantShift,
    /// `f2 = f1 + d` with `d` of one sign everywhere.
    SignAligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSample {
    pub kind: PairKind,
    pub input_distance: f64,
    pub output_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub samples: Vec<ContractionSample>,
    pub max_ratio: f64,
    pub bound: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Samples `‖Rf1 − Rf2‖∞ / ‖f1 − f2‖∞` over random pairs and checks it
/// against `bound + slack`. Pair kinds cycle so that shifts which stress
/// the discount are always included.
pub fn certify_contraction(op: &Operator, pairs: usize, seed: u64, bound: f64, slack: f64) -> Result<ContractionReport, OracleError> {
    let model = op.model;
    let scale = if model.reward_bound > 0.0 { model.reward_bound / (1.0 - model.discount) } else { 1.0 };
    let mut rng = seeded_rng(seed);
    let kinds = [PairKind::Independent, PairKind::ConstantShift, PairKind::SignAligned];
    let mut samples = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let kind = kinds[k % kinds.len()];
        let f1 = PerAgentValueTable::random(model, op.agent, scale, &mut rng);
        let f2 = match kind {
            PairKind::Independent => PerAgentValueTable::random(model, op.agent, scale, &mut rng),
            PairKind::ConstantShift => {
                let c = rng.gen_range(-scale..=scale);
                let mut f2 = f1.clone();
                f2.map_in_place(|v| v + c);
                f2
            }
            PairKind::SignAligned => {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut f2 = f1.clone();
                f2.map_in_place(|v| v + sign * rng.gen_range(0.5 * scale..=scale));
                f2
            }
        };
        let input_distance = f1.sup_distance(&f2);
        let output_distance = op.apply(&f1)?.sup_distance(&op.apply(&f2)?);
        let ratio = if input_distance > 0.0 { output_distance / input_distance } else { 0.0 };
        samples.push(ContractionSample { kind, input_distance, output_distance, ratio });
    }
    let max_ratio = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    Ok(ContractionReport { samples, max_ratio, bound, slack, passed: max_ratio <= bound + slack })
}

/// Exact expectation of the per-agent advantage at stage 0, per agent and
/// root `(s, a)`: `values[i][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootAdvantageTable {
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Expected trace-corrected advantage `E_μ[Â^i_0 | s_0, a_0]` by exhaustive
/// enumeration under `μ`, with ratios taken against `π` and the critic's
/// per-agent tables supplying the TD errors.
#[allow(clippy::too_many_arguments)]
pub fn expected_root_advantage(
    model: &DecPomdp,
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    scheme: TraceScheme,
    lambda: f64,
    eta: f64,
    critic: &TabularCritic,
    budget: f64,
) -> Result<RootAdvantageTable, OracleError> {
    check_inputs(model, target)?;
    behavior.validate(model)?;
    let n = model.num_agents;
    let mut values = vec![vec![vec![0.0; model.num_joint_actions()]; model.num_states]; n];
    for s in 0..model.num_states {
        for a in 0..model.num_joint_actions() {
            let root = model.decode_joint(a);
            let mut acc = vec![0.0; n];
            for (traj, p) in enumerate_rooted(model, behavior, 0, s, Some(&root), budget)? {
                let isr = compute_isr(&traj, target)?;
                let traces = truncate(&isr, scheme, lambda, eta)?;
                let deltas = per_agent_td_errors(&traj, critic, model.discount)?;
                let adv = gpae(&deltas, &traces, model.discount)?;
                for (i, slot) in acc.iter_mut().enumerate() {
                    *slot += p * adv.values[i][0];
                }
            }
            for i in 0..n {
                values[i][s][a] = acc[i];
            }
        }
    }
    Ok(RootAdvantageTable { values })
}

/// `Q^π_0(s,a) − EQ^i_0(s,a^{-i})`, the value the root advantage should match.
pub fn root_advantage_truth(model: &DecPomdp, q: &JointQTable, eq: &[PerAgentValueTable]) -> RootAdvantageTable {
    let values = eq
        .iter()
        .map(|table| {
            (0..model.num_states)
                .map(|s| {
                    (0..model.num_joint_actions())
                        .map(|a| {
                            let m = model.others_index(table.agent, &model.decode_joint(a));
                            q.values[0][s][a] - table.values[0][s][m]
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    RootAdvantageTable { values }
}

/// Upper bound on the root bias `B = B_1 + B_2` of a truncated estimator:
/// `Q^μ − Q^π + M/(1−γ)` plus `2Mγ/(1−γ)² + M/(1−γ)² − M/(1−γ)`.
pub fn root_bias_bound(model: &DecPomdp, q_mu: f64, q_pi: f64) -> f64 {
    let m = model.reward_bound;
    let g = model.discount;
    let b1 = q_mu - q_pi + m / (1.0 - g);
    let b2 = 2.0 * m * g / (1.0 - g).powi(2) + m / (1.0 - g).powi(2) - m / (1.0 - g);
    b1 + b2
}

/// The own-action policy implied by double truncation,
/// `π_*^i(a^i | s, a^{-i}) ∝ min(μ^i(a^i|s), π^i(a^i|s)·min(η, ρ^{-i}))`,
/// indexed `[s][a^{-i}][a^i]`. Diagnostic only.
pub fn dt_effective_policy(
    model: &DecPomdp,
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    agent: usize,
    eta: f64,
) -> Result<Vec<Vec<Vec<f64>>>, OracleError> {
    if agent >= model.num_agents {
        return Err(OracleError::AgentOutOfRange(agent));
    }
    let mut out = Vec::with_capacity(model.num_states);
    for s in 0..model.num_states {
        let pi: Vec<Vec<f64>> = (0..model.num_agents).map(|i| target.state_distribution(model, i, s)).collect();
        let mu: Vec<Vec<f64>> = (0..model.num_agents).map(|i| behavior.state_distribution(model, i, s)).collect();
        let mut rows = Vec::with_capacity(model.num_others(agent));
        for m in 0..model.num_others(agent) {
            let others = model.decode_others(agent, m);
            let rho_minus: f64 = (0..model.num_agents)
                .filter(|&j| j != agent)
                .zip(&others)
                .map(|(j, &x)| if mu[j][x] > 0.0 { pi[j][x] / mu[j][x] } else { 0.0 })
                .product();
            let raw: Vec<f64> = (0..model.actions_per_agent[agent])
                .map(|x| mu[agent][x].min(pi[agent][x] * eta.min(rho_minus)))
                .collect();
            let total: f64 = raw.iter().sum();
            rows.push(if total > 0.0 { raw.iter().map(|v| v / total).collect() } else { raw });
        }
        out.push(rows);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{identity_observations, make_builtin, BuiltinParams};

    fn one_state_one_action(gamma: f64, horizon: usize) -> DecPomdp {
        DecPomdp {
            num_agents: 1,
            num_states: 1,
            actions_per_agent: vec![1],
            num_observations: vec![1],
            transition: vec![vec![vec![1.0]]],
            reward: vec![vec![1.0]],
            observation: identity_observations(1, 1),
            initial_dist: vec![1.0],
            discount: gamma,
            horizon,
            reward_bound: 1.0,
            success_states: vec![],
        }
    }

    #[test]
    fn two_step_geometric_value() {
        let m = one_state_one_action(0.5, 2);
        let q = exact_joint_q(&m, &TabularPolicy::uniform(&m)).unwrap();
        assert_eq!(q.values[0][0][0], 1.5);
    }

    #[test]
    fn zero_rewards_give_zero_q() {
        let mut m = make_builtin("chain_gather", &BuiltinParams::default()).unwrap().model;
        m.reward.iter_mut().flatten().for_each(|r| *r = 0.0);
        let q = exact_joint_q(&m, &TabularPolicy::uniform(&m)).unwrap();
        assert_eq!(q.max_abs(), 0.0);
    }

    #[test]
    fn counterfactual_examples() {
        let b = make_builtin("matrix_team", &BuiltinParams { horizon: Some(1), ..Default::default() }).unwrap();
        let m = &b.model;
        let mut q = exact_joint_q(m, &b.reference).unwrap();
        // Agent 0 slice at a^{-0} = 1 is [Q(0,1), Q(1,1)].
        q.values[0][0][m.joint_index(&[0, 1])] = 2.0;
        q.values[0][0][m.joint_index(&[1, 1])] = 4.0;
        let uniform = TabularPolicy::uniform(m);
        assert_eq!(counterfactual_value(m, &q, &uniform, 0).unwrap().values[0][0][1], 3.0);
        let greedy = TabularPolicy::observation_independent(m, &[vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(counterfactual_value(m, &q, &greedy, 0).unwrap().values[0][0][1], 4.0);
        assert!(counterfactual_value(m, &q, &uniform, 2).is_err());
    }

    #[test]
    fn single_agent_counterfactual_is_state_value() {
        let b = make_builtin("single_chain", &BuiltinParams::default()).unwrap();
        let q = exact_joint_q(&b.model, &b.reference).unwrap();
        let eq = counterfactual_value(&b.model, &q, &b.reference, 0).unwrap();
        let v = q.state_values(&b.model, &b.reference);
        for t in 0..b.model.horizon {
            for s in 0..b.model.num_states {
                assert!((eq.values[t][s][0] - v[t][s]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_model_zero_input_gives_zero() {
        let mut m = make_builtin("chain_gather", &BuiltinParams::default()).unwrap().model;
        m.reward.iter_mut().flatten().for_each(|r| *r = 0.0);
        let pi = TabularPolicy::uniform(&m);
        let out = apply_operator_on(&m, &pi, 0.7, &PerAgentValueTable::zeros(&m, 1, Provenance::ArbitraryTestInput)).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn dp_matches_enumeration() {
        let b = make_builtin("chain_gather", &BuiltinParams { horizon: Some(3), ..Default::default() }).unwrap();
        let m = &b.model;
        let mu = TabularPolicy::observation_independent(m, &[vec![0.6, 0.4], vec![0.45, 0.55]]);
        let mut rng = seeded_rng(5);
        for agent in 0..2 {
            let f = PerAgentValueTable::random(m, agent, 2.0, &mut rng);
            let on = Operator::on_policy(m, &b.reference, agent, 0.8).unwrap();
            let d = on.apply(&f).unwrap().sup_distance(&on.apply_enumerated(&f, 1e6).unwrap());
            assert!(d < 1e-12, "on-policy {d}");
            for scheme in TraceScheme::ALL {
                let off = Operator::off_policy(m, &b.reference, &mu, agent, scheme, 0.8, 1.05).unwrap();
                let d = off.apply(&f).unwrap().sup_distance(&off.apply_enumerated(&f, 1e6).unwrap());
                assert!(d < 1e-12, "{scheme}: {d}");
            }
        }
    }

    #[test]
    fn fixed_point_from_itself_takes_one_iteration() {
        let b = make_builtin("chain_gather", &BuiltinParams::default()).unwrap();
        let q = exact_joint_q(&b.model, &b.reference).unwrap();
        let eq = counterfactual_value(&b.model, &q, &b.reference, 0).unwrap();
        let op = Operator::on_policy(&b.model, &b.reference, 0, 1.0).unwrap();
        let report = fixed_point(&op, &eq, 1e-10, 100).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
    }

    #[test]
    fn zero_behavior_mass_is_an_infinite_ratio() {
        let b = make_builtin("matrix_team", &BuiltinParams::default()).unwrap();
        let mu = TabularPolicy::observation_independent(&b.model, &[vec![1.0, 0.0], vec![0.5, 0.5]]);
        let err = Operator::off_policy(&b.model, &b.reference, &mu, 0, TraceScheme::Dt, 1.0, 1.05);
        assert!(matches!(err, Err(OracleError::InfiniteRatio { agent: 0, action: 1, .. })));
    }

    #[test]
    fn effective_policy_is_normalized_and_on_policy_identity() {
        let b = make_builtin("anomaly_team", &BuiltinParams { horizon: Some(2), ..Default::default() }).unwrap();
        let pi = &b.reference;
        let table = dt_effective_policy(&b.model, pi, pi, 0, 1.05).unwrap();
        for row in table.iter().flatten() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, p) in row.iter().enumerate() {
                assert!((p - pi.per_agent[0][0][x]).abs() < 1e-12);
            }
        }
    }
}
