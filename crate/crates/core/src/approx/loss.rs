//! Critic regression loss and the off-policy clipped actor loss.

use serde::{Deserialize, Serialize};

use super::nets::{PolicyNet, ScalarNet};
use super::ApproxError;

/// Mean squared error `(1/N) Σ (f(x_k) − y_k)²`. Targets are constants.
/// When `grad` is given, `∂loss/∂params` is added to it.
pub fn mse_loss<N: ScalarNet>(
    net: &N,
    params: &[f64],
    inputs: &[N::Input],
    targets: &[f64],
    mut grad: Option<&mut [f64]>,
) -> Result<f64, ApproxError> {
    if inputs.len() != targets.len() {
        return Err(ApproxError::DimensionMismatch { what: "regression targets", expected: inputs.len(), got: targets.len() });
    }
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let (pred, tape) = net.eval(params, x)?;
        let err = pred - y;
        loss += err * err / n;
        if let Some(g) = grad.as_deref_mut() {
            net.accumulate(params, &tape, 2.0 * err / n, g);
        }
    }
    if !loss.is_finite() {
        return Err(ApproxError::NonFinite { what: "critic loss" });
    }
    Ok(loss)
}

/// One actor sample: agent `agent` took `action` after observing `observation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSample {
    pub agent: usize,
    pub observation: usize,
    pub action: usize,
    pub advantage: f64,
    /// `log π_old(a|o)`, the collection-time probability.
    pub log_prob_old: f64,
    /// `log π_curr(a|o)`, the snapshot at the start of the update phase.
    pub log_prob_curr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorLossConfig {
    pub clip_eps: f64,
    pub entropy_coef: f64,
}

impl Default for ActorLossConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, entropy_coef: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorLossStats {
    /// Negated mean objective (surrogate plus entropy bonus).
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    /// Fraction of samples whose clipped branch was selected.
    pub clip_fraction: f64,
    /// Smallest distance of any ratio from its clip boundary.
    pub boundary_distance: f64,
}

/// Per-sample surrogate `min(ρÂ, clip(ρ, ρ_old(1−ε), ρ_old(1+ε))Â)` with
/// `ρ = π_θ/π_old` and `ρ_old = π_curr/π_old`, returning
/// `(objective, ∂objective/∂log π_θ(a), clipped branch selected, boundary distance)`.
///
/// Where the two branches tie, including exactly at a clip boundary, the
/// unclipped branch's gradient is used.
pub fn clipped_surrogate(log_prob: f64, sample: &ActorSample, clip_eps: f64) -> (f64, f64, bool, f64) {
    let rho = (log_prob - sample.log_prob_old).exp();
    let rho_old = (sample.log_prob_curr - sample.log_prob_old).exp();
    let (lo, hi) = (rho_old * (1.0 - clip_eps), rho_old * (1.0 + clip_eps));
    let a = sample.advantage;
    let unclipped = rho * a;
    let clipped = rho.clamp(lo, hi) * a;
    let boundary = (rho - lo).abs().min((rho - hi).abs());
    if unclipped <= clipped {
        (unclipped, unclipped, false, boundary)
    } else {
        (clipped, 0.0, true, boundary)
    }
}

/// Mean actor loss over `samples`. When `grad` is given, `∂loss/∂params` is
/// added to it.
pub fn actor_loss(
    net: &PolicyNet,
    params: &[f64],
    samples: &[ActorSample],
    cfg: &ActorLossConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<ActorLossStats, ApproxError> {
    if samples.is_empty() {
        return Ok(ActorLossStats { boundary_distance: f64::INFINITY, ..Default::default() });
    }
    let n = samples.len() as f64;
    let mut stats = ActorLossStats { boundary_distance: f64::INFINITY, ..Default::default() };
    for s in samples {
        let out = net.forward_with(params, s.agent, s.observation)?;
        let log_prob = *out.log_probs.get(s.action).ok_or(ApproxError::DimensionMismatch {
            what: "action",
            expected: out.probs.len(),
            got: s.action,
        })?;
        let (objective, d_logp, clipped, boundary) = clipped_surrogate(log_prob, s, cfg.clip_eps);
        if !objective.is_finite() {
            return Err(ApproxError::NonFinite { what: "importance ratio" });
        }
        let entropy: f64 = -out.probs.iter().zip(&out.log_probs).map(|(p, l)| p * l).sum::<f64>();
        stats.surrogate += objective / n;
        stats.entropy += entropy / n;
        stats.clip_fraction += f64::from(u8::from(clipped)) / n;
        stats.boundary_distance = stats.boundary_distance.min(boundary);
        if let Some(g) = grad.as_deref_mut() {
            // d log p_a / d logit_k = 1[k=a] − p_k;  dH / d logit_k = −p_k (log p_k + H).
            let grad_logits: Vec<f64> = out
                .probs
                .iter()
                .zip(&out.log_probs)
                .enumerate()
                .map(|(k, (p, l))| {
                    let surrogate = d_logp * (f64::from(u8::from(k == s.action)) - p);
                    let bonus = cfg.entropy_coef * (-p * (l + entropy));
                    -(surrogate + bonus) / n
                })
                .collect();
            net.accumulate(params, &out, &grad_logits, g);
        }
    }
    stats.loss = -(stats.surrogate + cfg.entropy_coef * stats.entropy);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::nets::CriticNet;
    use crate::seeded_rng;

    fn sample(advantage: f64, log_prob_old: f64, log_prob_curr: f64) -> ActorSample {
        ActorSample { agent: 0, observation: 0, action: 0, advantage, log_prob_old, log_prob_curr }
    }

    #[test]
    fn on_policy_unit_sample_objective_is_one() {
        let s = sample(1.0, 0.5f64.ln(), 0.5f64.ln());
        let (obj, d, clipped, _) = clipped_surrogate(0.5f64.ln(), &s, 0.2);
        assert!((obj - 1.0).abs() < 1e-15);
        assert!((d - 1.0).abs() < 1e-15);
        assert!(!clipped);
    }

    #[test]
    fn far_above_band_positive_advantage_has_zero_gradient() {
        let s = sample(1.0, 0.1f64.ln(), 0.1f64.ln());
        let (obj, d, clipped, _) = clipped_surrogate(0.5f64.ln(), &s, 0.2);
        assert!((obj - 1.2).abs() < 1e-12);
        assert_eq!(d, 0.0);
        assert!(clipped);
    }

    #[test]
    fn band_is_centered_on_the_snapshot_ratio() {
        // ρ_old = 2, so the band is [1.6, 2.4]; ρ = 2.2 sits inside it.
        let s = sample(1.0, 0.25f64.ln(), 0.5f64.ln());
        let (obj, _, clipped, _) = clipped_surrogate(0.55f64.ln(), &s, 0.2);
        assert!((obj - 2.2).abs() < 1e-12);
        assert!(!clipped);
        // ρ = 1 lies below the band: with Â < 0 the clipped branch −1.6 wins.
        let neg = sample(-1.0, 0.25f64.ln(), 0.5f64.ln());
        let (obj, d, clipped, _) = clipped_surrogate(0.25f64.ln(), &neg, 0.2);
        assert!((obj + 1.6).abs() < 1e-12);
        assert_eq!(d, 0.0);
        assert!(clipped);
    }

    #[test]
    fn exact_boundary_takes_unclipped_branch() {
        let s = sample(1.0, 0.0, 0.0);
        let (obj, d, clipped, boundary) = clipped_surrogate(1.2f64.ln(), &s, 0.2);
        assert!((obj - 1.2).abs() < 1e-12);
        assert!(!clipped);
        assert!(d > 0.0);
        assert!(boundary < 1e-12);
    }

    #[test]
    fn matched_prediction_gives_zero_loss_and_gradient() {
        let net = CriticNet::with_shape(2, 2, vec![2, 2], 8, &mut seeded_rng(0)).unwrap();
        let x = net.input(0, 1, &[0, 1], &[0.5, 0.5]).unwrap();
        let mut grad = vec![0.0; net.params.len()];
        let loss = mse_loss(&net, &net.params, &[x], &[0.0], Some(&mut grad)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn unit_target_zero_prediction_gives_unit_loss() {
        let net = CriticNet::with_shape(2, 2, vec![2, 2], 8, &mut seeded_rng(0)).unwrap();
        let x = net.input(1, 0, &[1, 1], &[0.1, 0.9]).unwrap();
        assert_eq!(mse_loss(&net, &net.params, &[x], &[1.0], None).unwrap(), 1.0);
    }

    #[test]
    fn uniform_policy_loss_matches_hand_computation() {
        let net = PolicyNet::with_shape(1, vec![1], vec![2], 4, &mut seeded_rng(0)).unwrap();
        let half = 0.5f64.ln();
        let samples = vec![sample(2.0, half, half)];
        let stats = actor_loss(&net, &net.params, &samples, &ActorLossConfig::default(), None).unwrap();
        let entropy = 2f64.ln();
        assert!((stats.surrogate - 2.0).abs() < 1e-12);
        assert!((stats.entropy - entropy).abs() < 1e-12);
        assert!((stats.loss + 2.0 + 0.01 * entropy).abs() < 1e-12);
    }
}
