//! Central finite-difference certification of analytic gradients.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{actor_loss, mse_loss, ActorLossConfig, ActorSample};
use super::nets::{CriticInput, CriticNet, PolicyNet, ScalarNet, ValueNet};
use super::ApproxError;
use crate::seeded_rng;

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    /// Parameter index (within the flat vector) of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub step: f64,
    pub points_checked: usize,
    /// Candidate points rejected for lying within `exclusion_margin` of a clip
    /// boundary or a ReLU kink, where the loss is not differentiable.
    pub points_excluded: usize,
    pub exclusion_margin: f64,
    pub blocks: Vec<BlockError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.points_checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central differences of `f` at `params`, per block.
pub fn finite_difference_blocks<F>(f: F, params: &[f64], analytic: &[f64], blocks: &[(String, Range<usize>)], step: f64) -> Vec<BlockError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    blocks
        .iter()
        .map(|(name, range)| {
            let mut worst = BlockError { name: name.clone(), max_rel_error: 0.0, worst_index: range.start, analytic: 0.0, numeric: 0.0 };
            for k in range.clone() {
                probe[k] = params[k] + step;
                let up = f(&probe);
                probe[k] = params[k] - step;
                let down = f(&probe);
                probe[k] = params[k];
                let numeric = (up - down) / (2.0 * step);
                let err = relative_error(analytic[k], numeric);
                if err > worst.max_rel_error || !err.is_finite() {
                    worst = BlockError { name: name.clone(), max_rel_error: err, worst_index: k, analytic: analytic[k], numeric };
                }
            }
            worst
        })
        .collect()
}

fn merge(into: &mut Vec<BlockError>, point: Vec<BlockError>) {
    if into.is_empty() {
        *into = point;
        return;
    }
    for (acc, b) in into.iter_mut().zip(point) {
        if b.max_rel_error > acc.max_rel_error || !b.max_rel_error.is_finite() {
            *acc = b;
        }
    }
}

fn finish(loss: &str, cfg: &GradCheckConfig, checked: usize, excluded: usize, blocks: Vec<BlockError>) -> GradCheckReport {
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        loss: loss.to_string(),
        step: cfg.step,
        points_checked: checked,
        points_excluded: excluded,
        exclusion_margin: cfg.margin,
        blocks,
        max_rel_error,
    }
}

/// Shapes and sampling settings for randomized gradient checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub points: usize,
    pub step: f64,
    pub margin: f64,
    pub samples_per_point: usize,
    pub hidden: usize,
    pub num_agents: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Scale of the uniform noise added to initialized parameters so that
    /// zero-initialized output layers do not mask upstream gradients.
    pub param_noise: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            points: 50,
            step: 1e-5,
            margin: 1e-3,
            samples_per_point: 4,
            hidden: 8,
            num_agents: 2,
            num_states: 3,
            num_actions: 3,
            param_noise: 0.5,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    fn validate(&self) -> Result<(), ApproxError> {
        if self.step <= 0.0 || self.margin < 0.0 || self.samples_per_point == 0 || self.num_agents == 0 || self.num_states == 0 || self.num_actions < 2 {
            return Err(ApproxError::InvalidArchitecture("grad-check configuration out of range".into()));
        }
        Ok(())
    }

    /// Give up after this many candidate points.
    fn max_attempts(&self) -> usize {
        self.points.saturating_mul(100).max(100)
    }
}

fn jitter<R: Rng + ?Sized>(params: &mut [f64], scale: f64, rng: &mut R) {
    for p in params.iter_mut() {
        *p += rng.gen_range(-scale..=scale);
    }
}

fn random_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn check_regression<N, F>(name: &str, cfg: &GradCheckConfig, mut draw: F) -> Result<GradCheckReport, ApproxError>
where
    N: ScalarNet,
    F: FnMut(&mut crate::SeededRng) -> Result<(N, Vec<N::Input>), ApproxError>,
{
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let (mut checked, mut excluded, mut blocks) = (0, 0, Vec::new());
    for _ in 0..cfg.max_attempts() {
        if checked == cfg.points {
            break;
        }
        let (net, inputs) = draw(&mut rng)?;
        let targets: Vec<f64> = (0..inputs.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut kink = f64::INFINITY;
        for x in &inputs {
            kink = kink.min(net.kink_distance(&net.eval(net.params(), x)?.1));
        }
        if kink < cfg.margin {
            excluded += 1;
            continue;
        }
        let mut grad = vec![0.0; net.params().len()];
        mse_loss(&net, net.params(), &inputs, &targets, Some(&mut grad))?;
        let f = |p: &[f64]| mse_loss(&net, p, &inputs, &targets, None).unwrap_or(f64::NAN);
        merge(&mut blocks, finite_difference_blocks(f, net.params(), &grad, &net.blocks(), cfg.step));
        checked += 1;
    }
    Ok(finish(name, cfg, checked, excluded, blocks))
}

/// Checks the critic regression loss on random critics and inputs.
pub fn grad_check_critic(cfg: &GradCheckConfig) -> Result<GradCheckReport, ApproxError> {
    let (n, s, k) = (cfg.num_agents, cfg.num_states, cfg.num_actions);
    check_regression::<CriticNet, _>("critic_mse", cfg, |rng| {
        let mut net = CriticNet::with_shape(n, s, vec![k; n], cfg.hidden, rng)?;
        jitter(&mut net.params, cfg.param_noise, rng);
        let inputs: Result<Vec<CriticInput>, ApproxError> = (0..cfg.samples_per_point)
            .map(|_| {
                let agent = rng.gen_range(0..n);
                let joint: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                let own = random_simplex(k, rng);
                net.input(agent, rng.gen_range(0..s), &joint, &own)
            })
            .collect();
        Ok((net, inputs?))
    })
}

/// Checks the state-value regression loss on random value networks.
pub fn grad_check_value(cfg: &GradCheckConfig) -> Result<GradCheckReport, ApproxError> {
    let s = cfg.num_states;
    check_regression::<ValueNet, _>("value_mse", cfg, |rng| {
        let mut net = ValueNet::new(s, cfg.hidden, rng)?;
        jitter(&mut net.params, cfg.param_noise, rng);
        let inputs: Result<Vec<Vec<f64>>, ApproxError> = (0..cfg.samples_per_point).map(|_| net.input(rng.gen_range(0..s))).collect();
        Ok((net, inputs?))
    })
}

/// Checks the clipped actor loss with entropy bonus on random policies and
/// samples whose ratios straddle the clip band.
pub fn grad_check_actor(cfg: &GradCheckConfig, loss_cfg: &ActorLossConfig) -> Result<GradCheckReport, ApproxError> {
    cfg.validate()?;
    let (n, s, k) = (cfg.num_agents, cfg.num_states, cfg.num_actions);
    let mut rng = seeded_rng(cfg.seed);
    let (mut checked, mut excluded, mut blocks) = (0, 0, Vec::new());
    for _ in 0..cfg.max_attempts() {
        if checked == cfg.points {
            break;
        }
        let mut net = PolicyNet::with_shape(n, vec![s; n], vec![k; n], cfg.hidden, &mut rng)?;
        jitter(&mut net.params, cfg.param_noise, &mut rng);
        let mut samples = Vec::with_capacity(cfg.samples_per_point);
        let mut kink = f64::INFINITY;
        for _ in 0..cfg.samples_per_point {
            let (agent, observation, action) = (rng.gen_range(0..n), rng.gen_range(0..s), rng.gen_range(0..k));
            let out = net.forward(agent, observation)?;
            kink = kink.min(out.tape.min_kink_distance(false).unwrap_or(f64::INFINITY));
            let log_prob = out.log_probs[action];
            samples.push(ActorSample {
                agent,
                observation,
                action,
                advantage: rng.sample(StandardNormal),
                log_prob_old: log_prob + rng.gen_range(-0.4..0.4),
                log_prob_curr: log_prob + rng.gen_range(-0.2..0.2),
            });
        }
        let stats = actor_loss(&net, &net.params, &samples, loss_cfg, None)?;
        if kink < cfg.margin || stats.boundary_distance < cfg.margin {
            excluded += 1;
            continue;
        }
        let mut grad = vec![0.0; net.params.len()];
        actor_loss(&net, &net.params, &samples, loss_cfg, Some(&mut grad))?;
        let f = |p: &[f64]| actor_loss(&net, p, &samples, loss_cfg, None).map_or(f64::NAN, |st| st.loss);
        merge(&mut blocks, finite_difference_blocks(f, &net.params, &grad, &net.blocks(), cfg.step));
        checked += 1;
    }
    Ok(finish("actor_clipped", cfg, checked, excluded, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::mlp::Mlp;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5 / 1.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn linear_network_is_exact() {
        let mlp = Mlp::new(vec![3, 1], 0, false);
        let mut rng = seeded_rng(4);
        let params: Vec<f64> = (0..mlp.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = [0.3, -0.7, 1.1];
        let f = |p: &[f64]| mlp.forward(p, &x).unwrap().output[0];
        let tape = mlp.forward(&params, &x).unwrap();
        let mut grad = vec![0.0; params.len()];
        mlp.backward(&params, &tape, &[1.0], &mut grad, false);
        let report = finite_difference_blocks(f, &params, &grad, &mlp.blocks("linear"), 1e-5);
        assert!(report.iter().all(|b| b.max_rel_error < 1e-8), "{report:?}");
    }

    #[test]
    fn default_networks_pass() {
        let cfg = GradCheckConfig { points: 10, ..Default::default() };
        for report in [
            grad_check_critic(&cfg).unwrap(),
            grad_check_value(&cfg).unwrap(),
            grad_check_actor(&cfg, &ActorLossConfig::default()).unwrap(),
        ] {
            assert_eq!(report.points_checked, 10);
            assert!(report.passed(1e-4), "{report:?}");
        }
    }

    #[test]
    fn boundary_points_are_excluded() {
        let cfg = GradCheckConfig { points: 5, margin: 0.3, ..Default::default() };
        let report = grad_check_actor(&cfg, &ActorLossConfig::default()).unwrap();
        assert!(report.points_excluded > 0);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mlp = Mlp::new(vec![2, 1], 0, false);
        let params = vec![0.5, 0.5, 0.0];
        let f = |p: &[f64]| mlp.forward(p, &[1.0, 2.0]).unwrap().output[0];
        let wrong = vec![1.0, 2.0, 0.0];
        let report = finite_difference_blocks(f, &params, &wrong, &mlp.blocks("linear"), 1e-5);
        assert!(report.iter().any(|b| b.max_rel_error > 0.1));
    }
}
