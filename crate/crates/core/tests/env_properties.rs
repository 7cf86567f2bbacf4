use gpae_core::env::{
    enumerate_trajectories, make_builtin, rollout, wrap_anomaly, AnomalyConfig, BuiltinParams, TabularPolicy,
    BUILTIN_NAMES, DEFAULT_ENUMERATION_BUDGET, ROW_TOLERANCE,
};
use proptest::prelude::*;

fn tiny_params(name: &str) -> BuiltinParams {
    match name {
        "anomaly_team" => BuiltinParams { horizon: Some(2), ..Default::default() },
        _ => BuiltinParams::default(),
    }
}

#[test]
fn builtin_rows_are_normalized() {
    for name in BUILTIN_NAMES {
        let b = make_builtin(name, &BuiltinParams::default()).unwrap();
        let m = &b.model;
        let rows = m
            .transition
            .iter()
            .flatten()
            .chain(m.observation.iter().flatten())
            .chain(std::iter::once(&m.initial_dist))
            .chain(b.reference.per_agent.iter().flatten());
        for row in rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE, "{name}");
        }
        if let Some(cfg) = &b.anomaly {
            let mu = wrap_anomaly(&b.reference, cfg).unwrap();
            for row in mu.per_agent.iter().flatten() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE);
            }
        }
    }
}

#[test]
fn enumeration_mass_is_one() {
    for name in BUILTIN_NAMES {
        let b = make_builtin(name, &tiny_params(name)).unwrap();
        for policy in [b.reference.clone(), TabularPolicy::uniform(&b.model)] {
            let all = enumerate_trajectories(&b.model, &policy, b.model.horizon, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let mass: f64 = all.iter().map(|(_, p)| p).sum();
            assert!((mass - 1.0).abs() <= 1e-10, "{name}: {mass}");
        }
    }
}

#[test]
fn enumeration_lists_each_trajectory_once() {
    let b = make_builtin("chain_gather", &BuiltinParams::default()).unwrap();
    let all = enumerate_trajectories(&b.model, &b.reference, b.model.horizon, DEFAULT_ENUMERATION_BUDGET).unwrap();
    let mut keys: Vec<Vec<(usize, Vec<usize>)>> = all
        .iter()
        .map(|(t, _)| t.steps.iter().map(|s| (s.state, s.joint_action.clone())).collect())
        .collect();
    let before = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), before);
    assert!(all.iter().all(|(_, p)| *p > 0.0));
}

#[test]
fn monte_carlo_return_matches_enumeration() {
    for name in ["matrix_team", "chain_gather", "single_chain"] {
        let b = make_builtin(name, &BuiltinParams::default()).unwrap();
        let m = &b.model;
        let all = enumerate_trajectories(m, &b.reference, m.horizon, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let exact: f64 = all.iter().map(|(t, p)| p * t.discounted_return(m.discount)).sum();
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|s| rollout(m, &b.reference, s, m.horizon).unwrap().discounted_return(m.discount))
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "{name}: {mean} ± {se} vs {exact}");
    }
}

proptest! {
    #[test]
    fn zero_probability_anomaly_is_identity(rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 4), 3), agent in 0usize..3, forced in 0usize..4) {
        let per_agent = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                vec![r.iter().map(|p| p / s).collect::<Vec<f64>>()]
            })
            .collect();
        let pi = TabularPolicy { per_agent, full_support: true };
        let mu = wrap_anomaly(&pi, &AnomalyConfig::new(agent, 0.0, forced)).unwrap();
        prop_assert_eq!(mu, pi);
    }

    #[test]
    fn anomaly_mixture_stays_normalized(p in 0.0..=1.0f64, forced in 0usize..4) {
        let b = make_builtin("anomaly_team", &BuiltinParams::default()).unwrap();
        let mu = wrap_anomaly(&b.reference, &AnomalyConfig::new(1, p, forced)).unwrap();
        mu.validate(&b.model).unwrap();
        let expected = (1.0 - p) * b.reference.per_agent[1][0][forced] + p;
        prop_assert!((mu.per_agent[1][0][forced] - expected).abs() < 1e-12);
    }
}
