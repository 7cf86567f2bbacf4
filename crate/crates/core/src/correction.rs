//! Importance-sampling ratios, trace truncation schemes and the trace gap
//! diagnostic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Policy, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum CorrectionError {
    #[error("corrupt trajectory: step {step}, agent {agent}: behavior log-prob {value} is not finite")]
    CorruptTrajectory { step: usize, agent: usize, value: f64 },
    #[error("invalid trace parameter: {0}")]
    InvalidParameter(String),
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("gap metric needs at least one non-empty trajectory")]
    Empty,
    #[error("unknown trace scheme `{0}`")]
    UnknownScheme(String),
}

/// Per-step ratios `π/μ`: individual `ρ^i`, complement `ρ^{-i}` and joint `ρ`.
/// Indexed `[t][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsrSeries {
    pub individual: Vec<Vec<f64>>,
    pub complement: Vec<Vec<f64>>,
    pub joint: Vec<f64>,
}

impl IsrSeries {
    /// Builds the complement and joint ratios from individual ratios.
    pub fn from_individual(individual: Vec<Vec<f64>>) -> Self {
        let complement = individual
            .iter()
            .map(|row| {
                (0..row.len())
                    .map(|i| row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r).product())
                    .collect()
            })
            .collect();
        let joint = individual.iter().map(|row| row.iter().product()).collect();
        Self { individual, complement, joint }
    }

    pub fn ones(len: usize, agents: usize) -> Self {
        Self::from_individual(vec![vec![1.0; agents]; len])
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.individual.first().map_or(0, Vec::len)
    }
}

/// Ratios of `target` to the behavior log-probs stored in the trajectory.
pub fn compute_isr<P: Policy + ?Sized>(traj: &Trajectory, target: &P) -> Result<IsrSeries, CorrectionError> {
    let mut individual = Vec::with_capacity(traj.len());
    for (step, tr) in traj.steps.iter().enumerate() {
        let mut row = Vec::with_capacity(tr.joint_action.len());
        for (agent, (&a, &log_mu)) in tr.joint_action.iter().zip(&tr.behavior_log_probs).enumerate() {
            if !log_mu.is_finite() {
                return Err(CorrectionError::CorruptTrajectory { step, agent, value: log_mu });
            }
            let pi = target.probability(agent, tr.observations[agent], a);
            row.push((pi.ln() - log_mu).exp());
        }
        individual.push(row);
    }
    Ok(IsrSeries::from_individual(individual))
}

/// How trace coefficients `c^i_t` are derived from the ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceScheme {
    /// `c = ρ`, the full joint ratio.
    Untruncated,
    /// `c = λ`, no correction.
    LambdaOnly,
    /// Single truncation `c = λ·min(1, ρ)`.
    St,
    /// Individual truncation `c = λ·min(1, ρ^i)`.
    It,
    /// Double truncation `c = λ·min(1, ρ^i·min(η, ρ^{-i}))`.
    Dt,
}

impl TraceScheme {
    pub const ALL: [TraceScheme; 5] = [Self::Untruncated, Self::LambdaOnly, Self::St, Self::It, Self::Dt];

    pub fn coefficient(self, rho_i: f64, rho_minus: f64, lambda: f64, eta: f64) -> f64 {
        match self {
            Self::Untruncated => rho_i * rho_minus,
            Self::LambdaOnly => lambda,
            Self::St => lambda * (rho_i * rho_minus).min(1.0),
            Self::It => lambda * rho_i.min(1.0),
            Self::Dt => lambda * (rho_i * eta.min(rho_minus)).min(1.0),
        }
    }

    /// Whether the coefficient carries the `λ` factor.
    pub fn includes_lambda(self) -> bool {
        self != Self::Untruncated
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Untruncated => "untruncated",
            Self::LambdaOnly => "lambda_only",
            Self::St => "st",
            Self::It => "it",
            Self::Dt => "dt",
        }
    }
}

impl fmt::Display for TraceScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TraceScheme {
    type Err = CorrectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "untruncated" | "full" => Ok(Self::Untruncated),
            "lambda_only" | "lambda" | "none" => Ok(Self::LambdaOnly),
            "st" => Ok(Self::St),
            "it" => Ok(Self::It),
            "dt" => Ok(Self::Dt),
            _ => Err(CorrectionError::UnknownScheme(s.to_string())),
        }
    }
}

/// Checks `λ ∈ (0,1]` and `η > 0`.
pub fn check_trace_params(lambda: f64, eta: f64) -> Result<(), CorrectionError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(CorrectionError::InvalidParameter(format!("lambda {lambda} outside (0,1]")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(CorrectionError::InvalidParameter(format!("eta {eta} must be positive")));
    }
    Ok(())
}

/// Trace coefficients `c^i_t`, indexed `[t][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceWeights {
    pub scheme: TraceScheme,
    pub lambda: f64,
    pub eta: f64,
    pub coefficients: Vec<Vec<f64>>,
}

impl TraceWeights {
    pub fn lambda_only(len: usize, agents: usize, lambda: f64) -> Self {
        Self { scheme: TraceScheme::LambdaOnly, lambda, eta: 1.0, coefficients: vec![vec![lambda; agents]; len] }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn coefficient(&self, t: usize, agent: usize) -> f64 {
        self.coefficients[t][agent]
    }

    pub fn for_agent(&self, agent: usize) -> Vec<f64> {
        self.coefficients.iter().map(|row| row[agent]).collect()
    }

    /// `Π_{j=from+1}^{to} c^i_j`; 1 when `to <= from`.
    pub fn product(&self, agent: usize, from: usize, to: usize) -> f64 {
        (from + 1..=to).map(|j| self.coefficients[j][agent]).product()
    }

    /// `c^i_t / λ` for schemes that include `λ`, else `c^i_t`.
    pub fn normalized(&self, t: usize, agent: usize) -> f64 {
        let c = self.coefficients[t][agent];
        if self.scheme.includes_lambda() {
            c / self.lambda
        } else {
            c
        }
    }
}

/// Applies a truncation scheme to a ratio series.
pub fn truncate(isr: &IsrSeries, scheme: TraceScheme, lambda: f64, eta: f64) -> Result<TraceWeights, CorrectionError> {
    check_trace_params(lambda, eta)?;
    let coefficients = isr
        .individual
        .iter()
        .zip(&isr.complement)
        .map(|(ind, comp)| {
            ind.iter()
                .zip(comp)
                .map(|(&ri, &rm)| scheme.coefficient(ri, rm, lambda, eta))
                .collect()
        })
        .collect();
    Ok(TraceWeights { scheme, lambda, eta, coefficients })
}

/// Distances of one agent's normalized traces to its individual and to the
/// joint ratio series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentGap {
    pub d_indiv: f64,
    pub d_joint: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub scheme: TraceScheme,
    pub lambda: f64,
    pub eta: f64,
    /// Traces are compared after dividing out `λ`.
    pub lambda_divided: bool,
    /// Means over trajectories and agents.
    pub d_indiv: f64,
    pub d_joint: f64,
    pub gap: f64,
    /// Means over trajectories, per agent.
    pub per_agent: Vec<AgentGap>,
    /// `[trajectory][agent]`.
    pub per_trajectory: Vec<Vec<AgentGap>>,
}

fn trajectory_gaps(isr: &IsrSeries, w: &TraceWeights) -> Vec<AgentGap> {
    let len = isr.len() as f64;
    (0..isr.num_agents())
        .map(|i| {
            let mut d_indiv = 0.0;
            let mut d_joint = 0.0;
            for t in 0..isr.len() {
                let c = w.normalized(t, i);
                d_indiv += (isr.individual[t][i] - c).abs();
                d_joint += (isr.joint[t] - c).abs();
            }
            let (d_indiv, d_joint) = (d_indiv / len, d_joint / len);
            AgentGap { d_indiv, d_joint, gap: (d_joint - d_indiv).abs() }
        })
        .collect()
}

/// Average trace gap `Δc^i = |d(ρ, c^i) − d(ρ^i, c^i)|` over trajectories,
/// where `d(x, c) = mean_t |x_t − c_t/λ|`.
pub fn gap_metric(pairs: &[(IsrSeries, TraceWeights)]) -> Result<GapReport, CorrectionError> {
    let mut per_trajectory = Vec::new();
    let mut meta = None;
    for (isr, w) in pairs {
        if isr.len() != w.len() {
            return Err(CorrectionError::LengthMismatch(isr.len(), w.len()));
        }
        if isr.is_empty() {
            continue;
        }
        meta.get_or_insert((w.scheme, w.lambda, w.eta));
        per_trajectory.push(trajectory_gaps(isr, w));
    }
    let (scheme, lambda, eta) = meta.ok_or(CorrectionError::Empty)?;
    let agents = per_trajectory[0].len();
    let count = per_trajectory.len() as f64;
    let per_agent: Vec<AgentGap> = (0..agents)
        .map(|i| {
            let sum = |f: fn(&AgentGap) -> f64| per_trajectory.iter().map(|g| f(&g[i])).sum::<f64>() / count;
            AgentGap { d_indiv: sum(|g| g.d_indiv), d_joint: sum(|g| g.d_joint), gap: sum(|g| g.gap) }
        })
        .collect();
    let mean = |f: fn(&AgentGap) -> f64| per_agent.iter().map(f).sum::<f64>() / agents.max(1) as f64;
    Ok(GapReport {
        scheme,
        lambda,
        eta,
        lambda_divided: true,
        d_indiv: mean(|g| g.d_indiv),
        d_joint: mean(|g| g.d_joint),
        gap: mean(|g| g.gap),
        per_agent,
        per_trajectory,
    })
}
