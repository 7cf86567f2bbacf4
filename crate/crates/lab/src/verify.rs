//! Oracle certificates: contraction, fixed points, telescoping, off-policy
//! identities, operator reduction, single-agent reduction and trace algebra.

use gpae_core::correction::{TraceScheme, TraceWeights};
use gpae_core::env::{rollout, BuiltinParams, DecPomdp, TabularPolicy};
use gpae_core::estimators::{gae, gpae, per_agent_td_errors, SeriesCritic, TabularCritic};
use gpae_core::oracle::{
    certify_contraction, counterfactual_value, exact_joint_q, expected_root_advantage, fixed_point, root_advantage_truth,
    JointQTable, Operator, PerAgentValueTable, Provenance,
};
use gpae_core::seeded_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{LabError, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// On-policy operator ratios stay below `γ`.
    Contraction,
    /// For `λ < 1`, ratios also stay below `γ(1−λ)/(1−γλ)`.
    TightConstant,
    /// At `λ = 1`, iteration from zero reaches `EQ^i` geometrically.
    FixedPoint,
    /// Exact expectation of the on-policy root advantage is `Q − EQ^i`.
    Telescoping,
    /// Same identity under a different behavior policy with full-ratio traces.
    OffPolicyUnbiased,
    /// Off-policy operator ratios stay below `γ` for truncated traces.
    OffPolicyContraction,
    /// The off-policy operator with `μ = π`, `c = λ` equals the on-policy one.
    Reduction,
    /// With one agent, the per-agent estimator equals GAE.
    SingleAgentReduction,
    /// Bounds, limits and monotonicity of the double-truncation coefficient.
    DtAlgebra,
}

impl Claim {
    pub const ALL: [Claim; 9] = [
        Self::Contraction,
        Self::TightConstant,
        Self::FixedPoint,
        Self::Telescoping,
        Self::OffPolicyUnbiased,
        Self::OffPolicyContraction,
        Self::Reduction,
        Self::SingleAgentReduction,
        Self::DtAlgebra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Contraction => "contraction",
            Self::TightConstant => "tight_constant",
            Self::FixedPoint => "fixed_point",
            Self::Telescoping => "telescoping",
            Self::OffPolicyUnbiased => "off_policy_unbiased",
            Self::OffPolicyContraction => "off_policy_contraction",
            Self::Reduction => "reduction",
            Self::SingleAgentReduction => "single_agent_reduction",
            Self::DtAlgebra => "dt_algebra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub claims: Vec<Claim>,
    /// Models for the operator claims.
    pub models: Vec<ModelSpec>,
    /// Models for the exhaustive root-advantage claims.
    pub telescoping_models: Vec<ModelSpec>,
    /// Single-agent model for the reduction to GAE.
    pub single_agent_model: ModelSpec,
    pub pairs: usize,
    pub lambdas: Vec<f64>,
    pub off_policy_lambda: f64,
    pub eta: f64,
    pub reduction_inputs: usize,
    pub single_agent_trajectories: usize,
    pub dt_samples: usize,
    pub seed: u64,
    /// Multiplies the discount inside the on-policy operators under test.
    pub fault_discount_scale: Option<f64>,
    pub enumeration_budget: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            claims: Claim::ALL.to_vec(),
            models: ["matrix_team", "chain_gather", "single_chain", "anomaly_team"].map(ModelSpec::new).to_vec(),
            telescoping_models: vec![
                ModelSpec::new("chain_gather"),
                ModelSpec::with("matrix_team", BuiltinParams { horizon: Some(3), ..Default::default() }),
            ],
            single_agent_model: ModelSpec::with("single_chain", BuiltinParams { horizon: Some(12), ..Default::default() }),
            pairs: 21,
            lambdas: vec![0.5, 0.95, 1.0],
            off_policy_lambda: 0.95,
            eta: 1.05,
            reduction_inputs: 10,
            single_agent_trajectories: 100,
            dt_samples: 100_000,
            seed: 0,
            fault_discount_scale: None,
            enumeration_budget: 1e6,
        }
    }
}

/// One measured quantity against its limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(label: String, measured: f64, limit: f64) -> Self {
        Self { label, measured, limit, passed: measured <= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub claim: Claim,
    pub passed: bool,
    /// Largest `measured − limit` over all checks (≤ 0 when passing).
    pub worst_margin: f64,
    pub checks: Vec<Check>,
    /// Set when the claim could not be evaluated, e.g. an exceeded budget.
    pub error: Option<String>,
}

impl Certificate {
    fn from_checks(claim: Claim, checks: Vec<Check>) -> Self {
        let worst_margin = checks.iter().map(|c| c.measured - c.limit).fold(f64::NEG_INFINITY, f64::max);
        Self { claim, passed: !checks.is_empty() && checks.iter().all(|c| c.passed), worst_margin, checks, error: None }
    }

    fn failed(claim: Claim, error: String) -> Self {
        Self { claim, passed: false, worst_margin: f64::INFINITY, checks: Vec::new(), error: Some(error) }
    }

    /// Check with the largest margin, if any.
    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().max_by(|a, b| (a.measured - a.limit).total_cmp(&(b.measured - b.limit)))
    }
}

/// Scales every row of the listed agents by independent `U(0.5, 1.5)` factors
/// and renormalizes.
pub fn perturb_agents(model: &DecPomdp, pi: &TabularPolicy, seed: u64, agents: &[usize]) -> Result<TabularPolicy, LabError> {
    let mut rng = seeded_rng(seed);
    let mut mu = pi.clone();
    for (_, rows) in mu.per_agent.iter_mut().enumerate().filter(|(j, _)| agents.contains(j)) {
        for row in rows {
            for p in row.iter_mut() {
                *p *= rng.gen_range(0.5..1.5);
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    mu.full_support = mu.has_full_support();
    mu.validate(model)?;
    Ok(mu)
}

fn exact_tables(model: &DecPomdp, pi: &TabularPolicy) -> Result<(JointQTable, Vec<PerAgentValueTable>), LabError> {
    let q = exact_joint_q(model, pi)?;
    let eq = (0..model.num_agents).map(|i| counterfactual_value(model, &q, pi, i)).collect::<Result<_, _>>()?;
    Ok((q, eq))
}

fn on_policy_checks(cfg: &VerifyConfig, tight: bool) -> Result<Vec<Check>, LabError> {
    let mut checks = Vec::new();
    for (m_idx, spec) in cfg.models.iter().enumerate() {
        let b = spec.build()?;
        let gamma = b.model.discount;
        for &lambda in &cfg.lambdas {
            if tight && lambda >= 1.0 {
                continue;
            }
            for agent in 0..b.model.num_agents {
                let mut op = Operator::on_policy(&b.model, &b.reference, agent, lambda)?;
                let bound = op.contraction_bound();
                if let Some(scale) = cfg.fault_discount_scale {
                    op = op.with_discount_scale(scale);
                }
                let seed = cfg.seed + (m_idx * 1000 + agent) as u64;
                let report = certify_contraction(&op, cfg.pairs, seed, gamma, 1e-9)?;
                let label = format!("{} lambda={lambda} agent={agent} pairs={}", spec.name, cfg.pairs);
                checks.push(if tight {
                    Check::at_most(label, report.max_ratio, bound + 1e-6)
                } else {
                    Check::at_most(label, report.max_ratio, gamma + 1e-9)
                });
            }
        }
    }
    Ok(checks)
}

fn fixed_point_checks(cfg: &VerifyConfig) -> Result<Vec<Check>, LabError> {
    let mut checks = Vec::new();
    for spec in &cfg.models {
        let b = spec.build()?;
        let (_, eq) = exact_tables(&b.model, &b.reference)?;
        for (i, expected) in eq.iter().enumerate() {
            let op = Operator::on_policy(&b.model, &b.reference, i, 1.0)?;
            let zero = PerAgentValueTable::zeros(&b.model, i, Provenance::ArbitraryTestInput);
            let report = fixed_point(&op, &zero, 1e-13, 1000)?;
            let deviation = if report.converged { report.table.sup_distance(expected) } else { f64::INFINITY };
            checks.push(Check::at_most(format!("{} agent={i} deviation", spec.name), deviation, 1e-8));
            let rate = report.contraction_estimate.unwrap_or(0.0);
            checks.push(Check::at_most(format!("{} agent={i} rate", spec.name), rate, b.model.discount + 1e-6));
        }
    }
    Ok(checks)
}

fn root_checks(cfg: &VerifyConfig, off_policy: bool) -> Result<Vec<Check>, LabError> {
    let mut checks = Vec::new();
    for (m_idx, spec) in cfg.telescoping_models.iter().enumerate() {
        let b = spec.build()?;
        let m = &b.model;
        let (q, eq) = exact_tables(m, &b.reference)?;
        let mut critic = TabularCritic::new(m);
        critic.eq = eq.clone();
        let (behavior, scheme) = if off_policy {
            let everyone: Vec<usize> = (0..m.num_agents).collect();
            (perturb_agents(m, &b.reference, cfg.seed + 100 + m_idx as u64, &everyone)?, TraceScheme::Untruncated)
        } else {
            (b.reference.clone(), TraceScheme::LambdaOnly)
        };
        let got = expected_root_advantage(m, &b.reference, &behavior, scheme, 1.0, 1.0, &critic, cfg.enumeration_budget)?;
        let truth = root_advantage_truth(m, &q, &eq);
        for i in 0..m.num_agents {
            let err = got.values[i]
                .iter()
                .flatten()
                .zip(truth.values[i].iter().flatten())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            checks.push(Check::at_most(format!("{} agent={i} max |E[A_0] - (Q - EQ)|", spec.name), err, 1e-10));
        }
    }
    Ok(checks)
}

fn off_policy_contraction_checks(cfg: &VerifyConfig) -> Result<Vec<Check>, LabError> {
    let mut checks = Vec::new();
    for (m_idx, spec) in cfg.models.iter().enumerate() {
        let b = spec.build()?;
        let m = &b.model;
        let everyone: Vec<usize> = (0..m.num_agents).collect();
        let mu = perturb_agents(m, &b.reference, cfg.seed + 200 + m_idx as u64, &everyone)?;
        for scheme in [TraceScheme::St, TraceScheme::It, TraceScheme::Dt] {
            for agent in 0..m.num_agents {
                let op = Operator::off_policy(m, &b.reference, &mu, agent, scheme, cfg.off_policy_lambda, cfg.eta)?;
                let report = certify_contraction(&op, cfg.pairs, cfg.seed + agent as u64, m.discount, 1e-9)?;
                checks.push(Check::at_most(format!("{} {scheme} agent={agent}", spec.name), report.max_ratio, m.discount + 1e-9));
            }
        }
    }
    Ok(checks)
}

fn reduction_checks(cfg: &VerifyConfig) -> Result<Vec<Check>, LabError> {
    let mut checks = Vec::new();
    let mut rng = seeded_rng(cfg.seed + 300);
    for spec in &cfg.models {
        let b = spec.build()?;
        let m = &b.model;
        let scale = m.reward_bound / (1.0 - m.discount);
        for &lambda in &cfg.lambdas {
            for agent in 0..m.num_agents {
                let on = Operator::on_policy(m, &b.reference, agent, lambda)?;
                let off = Operator::off_policy(m, &b.reference, &b.reference, agent, TraceScheme::LambdaOnly, lambda, cfg.eta)?;
                let mut worst: f64 = 0.0;
                for _ in 0..cfg.reduction_inputs {
                    let f = PerAgentValueTable::random(m, agent, scale, &mut rng);
                    worst = worst.max(on.apply(&f)?.sup_distance(&off.apply(&f)?));
                }
                checks.push(Check::at_most(format!("{} lambda={lambda} agent={agent}", spec.name), worst, 1e-12));
            }
        }
    }
    Ok(checks)
}

fn single_agent_checks(cfg: &VerifyConfig) -> Result<Vec<Check>, LabError> {
    let b = cfg.single_agent_model.build()?;
    if b.model.num_agents != 1 {
        return Err(LabError::config("single_agent_model", "must have exactly one agent"));
    }
    let mut rng = seeded_rng(cfg.seed + 400);
    let gamma = b.model.discount;
    let mut worst: f64 = 0.0;
    for k in 0..cfg.single_agent_trajectories {
        let traj = rollout(&b.model, &b.reference, cfg.seed + k as u64, b.model.horizon)?;
        let values: Vec<f64> = (0..traj.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let critic = SeriesCritic { eq: Some(values.iter().map(|&v| vec![v]).collect()), v: Some(values), ..Default::default() };
        let view = critic.view(&traj);
        let lambda = rng.gen_range(0.05..=1.0);
        let d = per_agent_td_errors(&traj, &view, gamma)?;
        let g = gpae(&d, &TraceWeights::lambda_only(traj.len(), 1, lambda), gamma)?;
        let e = gae(&traj, &view, gamma, lambda)?;
        for (x, y) in g.values[0].iter().zip(&e.values[0]) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(vec![Check::at_most(
        format!("{} trajectories={} max |GPAE - GAE|", cfg.single_agent_model.name, cfg.single_agent_trajectories),
        worst,
        1e-12,
    )])
}

fn dt(rho_i: f64, rho_minus: f64, lambda: f64, eta: f64) -> f64 {
    TraceScheme::Dt.coefficient(rho_i, rho_minus, lambda, eta)
}

fn dt_algebra_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let mut rng = seeded_rng(cfg.seed + 500);
    let (mut bound, mut it_limit, mut st_limit) = (0usize, 0usize, 0usize);
    for _ in 0..cfg.dt_samples {
        let rho_i = rng.gen_range(0.0..5.0);
        let rho_minus = rng.gen_range(0.0..5.0);
        let lambda = rng.gen_range(f64::EPSILON..=1.0);
        let eta = rng.gen_range(1.0..3.0);
        let c = dt(rho_i, rho_minus, lambda, eta);
        bound += usize::from(!(0.0..=lambda).contains(&c));
        it_limit += usize::from(dt(rho_i, 1.0, lambda, eta) != TraceScheme::It.coefficient(rho_i, 1.0, lambda, eta));
        let eta_big = rho_minus + rng.gen_range(0.0..2.0);
        st_limit += usize::from(dt(rho_i, rho_minus, lambda, eta_big) != TraceScheme::St.coefficient(rho_i, rho_minus, lambda, eta_big));
    }
    let grid: Vec<f64> = (0..=40).map(|k| k as f64 * 0.1).collect();
    let etas: Vec<f64> = (0..=20).map(|k| 1.0 + k as f64 * 0.05).collect();
    let mut monotone = 0usize;
    for &a in &grid {
        for &b in &grid {
            for &e in &etas {
                let c = dt(a, b, 0.9, e);
                monotone += usize::from(dt(a + 0.1, b, 0.9, e) < c);
                monotone += usize::from(dt(a, b + 0.1, 0.9, e) < c);
                monotone += usize::from(dt(a, b, 0.9, e + 0.05) < c);
            }
        }
    }
    let n = cfg.dt_samples;
    vec![
        Check::at_most(format!("violations of 0 <= c <= lambda over {n} triples"), bound as f64, 0.0),
        Check::at_most(format!("IT limit mismatches over {n} triples"), it_limit as f64, 0.0),
        Check::at_most(format!("ST limit mismatches over {n} triples"), st_limit as f64, 0.0),
        Check::at_most("monotonicity violations on the grid".into(), monotone as f64, 0.0),
    ]
}

/// Evaluates one claim. Evaluation errors, such as an exceeded enumeration
/// budget, produce a failing certificate rather than an error.
pub fn certify(claim: Claim, cfg: &VerifyConfig) -> Certificate {
    let checks = match claim {
        Claim::Contraction => on_policy_checks(cfg, false),
        Claim::TightConstant => on_policy_checks(cfg, true),
        Claim::FixedPoint => fixed_point_checks(cfg),
        Claim::Telescoping => root_checks(cfg, false),
        Claim::OffPolicyUnbiased => root_checks(cfg, true),
        Claim::OffPolicyContraction => off_policy_contraction_checks(cfg),
        Claim::Reduction => reduction_checks(cfg),
        Claim::SingleAgentReduction => single_agent_checks(cfg),
        Claim::DtAlgebra => Ok(dt_algebra_checks(cfg)),
    };
    match checks {
        Ok(checks) => Certificate::from_checks(claim, checks),
        Err(e) => Certificate::failed(claim, e.to_string()),
    }
}

/// Evaluates every configured claim, in config order.
pub fn run(cfg: &VerifyConfig) -> Vec<Certificate> {
    cfg.claims.par_iter().map(|&c| certify(c, cfg)).collect()
}
