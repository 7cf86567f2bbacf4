//! Randomized properties for the oracle, estimators, approximators and the
//! trainer's replay window.

use gpae_core::approx::PolicyNet;
use gpae_core::correction::{compute_isr, truncate, TraceScheme};
use gpae_core::env::{make_builtin, rollout_with_rng, Builtin, BuiltinParams, DecPomdp, TabularPolicy, Trajectory};
use gpae_core::estimators::{gae, gpae, per_agent_td_errors, SeriesCritic};
use gpae_core::oracle::{certify_contraction, counterfactual_value, exact_joint_q, Operator, PerAgentValueTable};
use gpae_core::seeded_rng;
use gpae_core::trainer::{train, ReplayWindow, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

const MODELS: [&str; 4] = ["matrix_team", "chain_gather", "single_chain", "anomaly_team"];
const TRUNCATED: [TraceScheme; 3] = [TraceScheme::St, TraceScheme::It, TraceScheme::Dt];

fn builtin(idx: usize) -> Builtin {
    make_builtin(MODELS[idx], &BuiltinParams::default()).unwrap()
}

/// Multiplies every probability by a random factor in `[0.5, 1.5)` and renormalizes.
fn jittered(model: &DecPomdp, pi: &TabularPolicy, seed: u64) -> TabularPolicy {
    let mut rng = seeded_rng(seed);
    let mut mu = pi.clone();
    for row in mu.per_agent.iter_mut().flatten() {
        row.iter_mut().for_each(|p| *p *= rng.gen_range(0.5..1.5));
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    mu.validate(model).unwrap();
    mu
}

/// A trajectory under `policy` and a critic series with random `EQ` and `V`
/// values, where `V` equals agent 0's `EQ`.
fn sampled(b: &Builtin, policy: &TabularPolicy, seed: u64) -> (Trajectory, SeriesCritic) {
    let mut rng = seeded_rng(seed);
    let traj = rollout_with_rng(&b.model, policy, &mut rng, b.model.horizon).unwrap();
    let eq: Vec<Vec<f64>> = traj.steps.iter().map(|_| (0..b.model.num_agents).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let v = eq.iter().map(|row| row[0]).collect();
    (traj, SeriesCritic { eq: Some(eq), v: Some(v), ..Default::default() })
}

fn gpae_with(b: &Builtin, traj: &Trajectory, critic: &SeriesCritic, scheme: TraceScheme, lambda: f64, eta: f64) -> Vec<Vec<f64>> {
    let deltas = per_agent_td_errors(traj, &critic.view(traj), b.model.discount).unwrap();
    let isr = compute_isr(traj, &b.reference).unwrap();
    let traces = truncate(&isr, scheme, lambda, eta).unwrap();
    let adv = gpae(&deltas, &traces, b.model.discount).unwrap();
    (0..adv.len()).map(|t| (0..adv.num_agents()).map(|i| adv.at(t, i)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn on_policy_operator_contracts_at_its_tight_constant(idx in 0usize..4, agent in 0usize..3, lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let b = builtin(idx);
        let agent = agent % b.model.num_agents;
        let op = Operator::on_policy(&b.model, &b.reference, agent, lambda).unwrap();
        let report = certify_contraction(&op, 3, seed, op.contraction_bound(), 1e-6).unwrap();
        prop_assert!(report.passed, "{report:?}");
        prop_assert!(report.max_ratio <= b.model.discount + 1e-9);
    }

    #[test]
    fn off_policy_operator_contracts_for_truncated_traces(
        idx in 0usize..4,
        agent in 0usize..3,
        scheme in 0usize..4,
        lambda in 0.0f64..=1.0,
        eta in 1.0f64..1.5,
        seed in any::<u64>(),
    ) {
        let b = builtin(idx);
        let agent = agent % b.model.num_agents;
        let scheme = [TraceScheme::LambdaOnly, TraceScheme::St, TraceScheme::It, TraceScheme::Dt][scheme];
        let mu = jittered(&b.model, &b.reference, seed);
        let op = Operator::off_policy(&b.model, &b.reference, &mu, agent, scheme, lambda, eta).unwrap();
        let report = certify_contraction(&op, 3, seed, b.model.discount, 1e-9).unwrap();
        prop_assert!(report.passed, "{report:?}");
    }

    #[test]
    fn off_policy_operator_with_matching_behavior_is_the_on_policy_operator(
        idx in 0usize..4,
        agent in 0usize..3,
        lambda in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let b = builtin(idx);
        let agent = agent % b.model.num_agents;
        let f = PerAgentValueTable::random(&b.model, agent, 10.0, &mut seeded_rng(seed));
        let on = Operator::on_policy(&b.model, &b.reference, agent, lambda).unwrap().apply(&f).unwrap();
        let off = Operator::off_policy(&b.model, &b.reference, &b.reference, agent, TraceScheme::LambdaOnly, lambda, 1.05)
            .unwrap()
            .apply(&f)
            .unwrap();
        prop_assert!(on.sup_distance(&off) <= 1e-12);
    }

    #[test]
    fn counterfactual_values_respect_the_reward_bound(idx in 0usize..4, seed in any::<u64>()) {
        let b = builtin(idx);
        let pi = jittered(&b.model, &b.reference, seed);
        let q = exact_joint_q(&b.model, &pi).unwrap();
        let bound = b.model.reward_bound / (1.0 - b.model.discount) + 1e-9;
        for agent in 0..b.model.num_agents {
            let eq = counterfactual_value(&b.model, &q, &pi, agent).unwrap();
            prop_assert!(eq.max_abs() <= bound, "{} > {bound}", eq.max_abs());
        }
    }

    #[test]
    fn single_agent_gpae_equals_gae(lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let b = builtin(2);
        prop_assert_eq!(b.model.num_agents, 1);
        let (traj, critic) = sampled(&b, &b.reference, seed);
        let ours = gpae_with(&b, &traj, &critic, TraceScheme::LambdaOnly, lambda, 1.05);
        let reference = gae(&traj, &critic.view(&traj), b.model.discount, lambda).unwrap();
        for (t, row) in ours.iter().enumerate() {
            prop_assert!((row[0] - reference.at(t, 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn on_policy_data_makes_every_truncation_scheme_lambda_only(
        idx in 0usize..4,
        scheme in 0usize..3,
        lambda in 0.0f64..=1.0,
        eta in 1.0f64..1.5,
        seed in any::<u64>(),
    ) {
        let b = builtin(idx);
        let (traj, critic) = sampled(&b, &b.reference, seed);
        let truncated = gpae_with(&b, &traj, &critic, TRUNCATED[scheme], lambda, eta);
        let plain = gpae_with(&b, &traj, &critic, TraceScheme::LambdaOnly, lambda, eta);
        for (x, y) in truncated.iter().flatten().zip(plain.iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn gae_advantages_are_identical_across_agents(idx in 0usize..4, lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let b = builtin(idx);
        let (traj, critic) = sampled(&b, &b.reference, seed);
        let adv = gae(&traj, &critic.view(&traj), b.model.discount, lambda).unwrap();
        for t in 0..adv.len() {
            for i in 1..adv.num_agents() {
                prop_assert_eq!(adv.at(t, i).to_bits(), adv.at(t, 0).to_bits());
            }
        }
    }

    #[test]
    fn policy_outputs_are_distributions_with_finite_log_probs(idx in 0usize..4, hidden in 2usize..12, scale in 0.0f64..20.0, seed in any::<u64>()) {
        let b = builtin(idx);
        let mut rng = seeded_rng(seed);
        let net = PolicyNet::new(&b.model, hidden, &mut rng).unwrap();
        let params: Vec<f64> = net.params.iter().map(|p| p + scale * rng.gen_range(-1.0..1.0)).collect();
        for agent in 0..b.model.num_agents {
            for obs in 0..b.model.num_observations[agent] {
                let out = net.forward_with(&params, agent, obs).unwrap();
                prop_assert!((out.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(out.log_probs.iter().all(|l| l.is_finite() && *l <= 0.0), "{:?}", out.log_probs);
                for (p, l) in out.probs.iter().zip(&out.log_probs) {
                    prop_assert!(*l < -700.0 || *p > 0.0);
                }
                if scale <= 3.0 {
                    prop_assert!(out.probs.iter().all(|p| *p > 0.0), "{:?}", out.probs);
                }
            }
        }
    }

    #[test]
    fn replay_window_keeps_the_newest_batches(capacity in 1usize..6, pushes in 0usize..20) {
        let mut window = ReplayWindow::new(capacity).unwrap();
        for version in 0..pushes {
            let evicted = window.push(version, Vec::new()).unwrap();
            prop_assert!(window.len() <= capacity);
            prop_assert_eq!(evicted, (version >= capacity).then(|| version - capacity));
        }
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(window.versions(), expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_is_reproducible_from_the_seed(seed in any::<u64>(), reuse in 1usize..4) {
        let cfg = TrainConfig {
            total_timesteps: 96,
            rollout_steps: 16,
            num_envs: 2,
            hidden: 4,
            reuse,
            eval_every: 1,
            eval_episodes: 2,
            seed,
            ..Default::default()
        };
        let a = train(&cfg, |_| Ok(())).unwrap();
        let b = train(&cfg, |_| Ok(())).unwrap();
        prop_assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());
        prop_assert_eq!(a.checkpoint, b.checkpoint);
    }
}
