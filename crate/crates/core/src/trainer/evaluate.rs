use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::env::{rollout_with_rng, DecPomdp, Policy};

/// Deterministic wrapper that always picks the most probable action
/// (lowest index on ties).
pub struct Greedy<'a, P: Policy + ?Sized>(pub &'a P);

impl<P: Policy + ?Sized> Policy for Greedy<'_, P> {
    fn distribution(&self, agent: usize, observation: usize) -> Vec<f64> {
        let row = self.0.distribution(agent, observation);
        let best = row.iter().enumerate().fold(0, |best, (a, p)| if *p > row[best] { a } else { best });
        let mut out = vec![0.0; row.len()];
        out[best] = 1.0;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: usize,
    /// Mean undiscounted episodic return.
    pub mean_return: f64,
    /// Fraction of episodes ending in a success state, when the model defines any.
    pub success_rate: Option<f64>,
}

/// Runs `episodes` full episodes. Zero episodes yields `None`.
pub fn evaluate<P, R>(policy: &P, model: &DecPomdp, episodes: usize, rng: &mut R, greedy: bool) -> Result<Option<EvalResult>, TrainError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    if episodes == 0 {
        return Ok(None);
    }
    let (mut total, mut successes) = (0.0, 0usize);
    for _ in 0..episodes {
        let traj = if greedy {
            rollout_with_rng(model, &Greedy(policy), rng, model.horizon)?
        } else {
            rollout_with_rng(model, policy, rng, model.horizon)?
        };
        total += traj.undiscounted_return();
        let reached = traj.steps.iter().map(|s| s.state).chain(traj.final_state).any(|s| model.is_success(s));
        successes += usize::from(reached);
    }
    let n = episodes as f64;
    Ok(Some(EvalResult {
        episodes,
        mean_return: total / n,
        success_rate: (!model.success_states.is_empty()).then(|| successes as f64 / n),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{enumerate_trajectories, make_builtin, BuiltinParams, TabularPolicy, DEFAULT_ENUMERATION_BUDGET};
    use crate::seeded_rng;

    #[test]
    fn zero_episodes_is_empty() {
        let b = make_builtin("matrix_team", &BuiltinParams::default()).unwrap();
        assert_eq!(evaluate(&b.reference, &b.model, 0, &mut seeded_rng(0), false).unwrap(), None);
    }

    #[test]
    fn uniform_play_matches_enumerated_expectation() {
        let b = make_builtin("matrix_team", &BuiltinParams::default()).unwrap();
        let uniform = TabularPolicy::uniform(&b.model);
        let all = enumerate_trajectories(&b.model, &uniform, b.model.horizon, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let exact: f64 = all.iter().map(|(t, p)| p * t.undiscounted_return()).sum();
        let second: f64 = all.iter().map(|(t, p)| p * t.undiscounted_return().powi(2)).sum();
        let n = 20_000;
        let got = evaluate(&uniform, &b.model, n, &mut seeded_rng(4), false).unwrap().unwrap();
        let se = ((second - exact * exact) / n as f64).sqrt();
        assert!((got.mean_return - exact).abs() < 4.0 * se, "{} vs {exact} ± {se}", got.mean_return);
        assert_eq!(got.success_rate, None);
    }

    #[test]
    fn value_iteration_optimum_on_noiseless_chain_always_succeeds() {
        let b = make_builtin("chain_gather", &BuiltinParams { slip: Some(0.0), ..Default::default() }).unwrap();
        let m = &b.model;
        // Finite-horizon value iteration over joint actions from the terminal stage back.
        let mut v = vec![0.0; m.num_states];
        let mut best = vec![0; m.num_states];
        for _ in 0..m.horizon {
            let next: Vec<f64> = (0..m.num_states)
                .map(|s| {
                    let (a, q) = (0..m.num_joint_actions())
                        .map(|a| (a, m.reward[s][a] + m.discount * (0..m.num_states).map(|s2| m.transition[s][a][s2] * v[s2]).sum::<f64>()))
                        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 + 1e-12 { x } else { acc });
                    best[s] = a;
                    q
                })
                .collect();
            v = next;
        }
        let joint = m.decode_joint(best[0]);
        let rows: Vec<Vec<f64>> = joint
            .iter()
            .zip(&m.actions_per_agent)
            .map(|(&a, &k)| (0..k).map(|x| f64::from(u8::from(x == a))).collect())
            .collect();
        let optimal = TabularPolicy::observation_independent(m, &rows);
        let got = evaluate(&optimal, m, 50, &mut seeded_rng(1), false).unwrap().unwrap();
        assert_eq!(got.success_rate, Some(1.0));
    }

    #[test]
    fn greedy_picks_the_mode() {
        let b = make_builtin("chain_gather", &BuiltinParams::default()).unwrap();
        let g = Greedy(&b.reference);
        assert_eq!(g.distribution(0, 0), vec![0.0, 1.0]);
    }
}
