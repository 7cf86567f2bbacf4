use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{AnomalyConfig, DecPomdp, EnvError, Policy, Trajectory, Transition};
use crate::seeded_rng;

/// Default cap on the number of trajectories an enumeration may visit.
pub const DEFAULT_ENUMERATION_BUDGET: f64 = 1e6;

/// Draws an index from an unnormalized row, refusing rows with no mass.
pub fn sample_categorical<R: Rng + ?Sized>(row: &[f64], rng: &mut R, context: &str) -> Result<usize, EnvError> {
    let mass: f64 = row.iter().sum();
    let corrupt = || EnvError::ModelCorruption { context: context.to_string(), mass };
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(corrupt());
    }
    let dist = WeightedIndex::new(row).map_err(|_| corrupt())?;
    Ok(dist.sample(rng))
}

fn check_horizon(model: &DecPomdp, horizon: usize) -> Result<(), EnvError> {
    if horizon > model.horizon {
        return Err(EnvError::HorizonTooLong { requested: horizon, limit: model.horizon });
    }
    Ok(())
}

fn observe<R: Rng + ?Sized>(model: &DecPomdp, state: usize, rng: &mut R) -> Result<Vec<usize>, EnvError> {
    (0..model.num_agents)
        .map(|i| sample_categorical(&model.observation[i][state], rng, &format!("observation[{i}][{state}]")))
        .collect()
}

struct Choice {
    action: usize,
    log_prob: f64,
    forced: bool,
}

fn run_episode<R, F>(model: &DecPomdp, horizon: usize, rng: &mut R, mut choose: F) -> Result<(Vec<Transition>, Vec<bool>, usize), EnvError>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize, &mut R) -> Result<Choice, EnvError>,
{
    check_horizon(model, horizon)?;
    let mut state = sample_categorical(&model.initial_dist, rng, "initial_dist")?;
    let mut steps = Vec::with_capacity(horizon);
    let mut events = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let observations = observe(model, state, rng)?;
        let mut joint_action = Vec::with_capacity(model.num_agents);
        let mut behavior_log_probs = Vec::with_capacity(model.num_agents);
        let mut fired = false;
        for (i, &o) in observations.iter().enumerate() {
            let c = choose(i, o, rng)?;
            joint_action.push(c.action);
            behavior_log_probs.push(c.log_prob);
            fired |= c.forced;
        }
        let a = model.joint_index(&joint_action);
        let reward = model.reward[state][a];
        let next = sample_categorical(&model.transition[state][a], rng, &format!("transition[{state}][{a}]"))?;
        steps.push(Transition { t, state, observations, joint_action, reward, behavior_log_probs });
        events.push(fired);
        state = next;
    }
    Ok((steps, events, state))
}

/// Samples one episode under `behavior`, recording behavior log-probs.
pub fn rollout_with_rng<P, R>(model: &DecPomdp, behavior: &P, rng: &mut R, horizon: usize) -> Result<Trajectory, EnvError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let (steps, _, last) = run_episode(model, horizon, rng, |i, o, rng| {
        let row = behavior.distribution(i, o);
        let action = sample_categorical(&row, rng, &format!("policy[{i}][{o}]"))?;
        Ok(Choice { action, log_prob: row[action].ln(), forced: false })
    })?;
    Ok(Trajectory { terminal: horizon == model.horizon, steps, anomaly: None, final_state: Some(last) })
}

/// Seeded convenience wrapper around [`rollout_with_rng`].
pub fn rollout<P: Policy + ?Sized>(model: &DecPomdp, behavior: &P, seed: u64, horizon: usize) -> Result<Trajectory, EnvError> {
    rollout_with_rng(model, behavior, &mut seeded_rng(seed), horizon)
}

/// Samples under the anomalous behavior built from `target`.
///
/// The designated agent is forced to its stop action with probability `p`,
/// otherwise it samples from `target`. The recorded log-prob is that of the
/// mixture, and each forced draw is marked in the attached event log.
pub fn rollout_anomalous<P, R>(
    model: &DecPomdp,
    target: &P,
    cfg: &AnomalyConfig,
    rng: &mut R,
    horizon: usize,
) -> Result<Trajectory, EnvError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate(&model.actions_per_agent)?;
    let (steps, events, last) = run_episode(model, horizon, rng, |i, o, rng| {
        let row = target.distribution(i, o);
        if i != cfg.agent_index {
            let action = sample_categorical(&row, rng, &format!("policy[{i}][{o}]"))?;
            return Ok(Choice { action, log_prob: row[action].ln(), forced: false });
        }
        let forced = rng.gen::<f64>() < cfg.probability;
        let action = if forced {
            cfg.forced_action
        } else {
            sample_categorical(&row, rng, &format!("policy[{i}][{o}]"))?
        };
        let mixed = cfg.mix(&row);
        Ok(Choice { action, log_prob: mixed[action].ln(), forced })
    })?;
    let mut anomaly = cfg.clone();
    anomaly.event_log = events;
    Ok(Trajectory { terminal: horizon == model.horizon, steps, anomaly: Some(anomaly), final_state: Some(last) })
}

/// Upper bound on the number of trajectories an enumeration can produce.
pub fn enumeration_size(model: &DecPomdp, horizon: usize) -> f64 {
    let obs: f64 = if model.is_fully_observable() {
        1.0
    } else {
        model.num_observations.iter().map(|&k| k as f64).product()
    };
    (model.num_states as f64 * model.num_joint_actions() as f64 * obs).powi(horizon as i32)
}

struct Enumerator<'a, P: ?Sized> {
    model: &'a DecPomdp,
    policy: &'a P,
    end: usize,
    out: Vec<(Trajectory, f64)>,
    steps: Vec<Transition>,
}

impl<P: Policy + ?Sized> Enumerator<'_, P> {
    fn observation_tuples(&self, state: usize) -> Vec<(Vec<usize>, f64)> {
        let mut tuples = vec![(Vec::new(), 1.0)];
        for i in 0..self.model.num_agents {
            let row = &self.model.observation[i][state];
            let mut next = Vec::new();
            for (obs, p) in &tuples {
                for (o, &q) in row.iter().enumerate() {
                    if q > 0.0 {
                        let mut v = obs.clone();
                        v.push(o);
                        next.push((v, p * q));
                    }
                }
            }
            tuples = next;
        }
        tuples
    }

    fn visit(&mut self, t: usize, state: usize, prob: f64, first: Option<&[usize]>) {
        if t == self.end {
            self.out.push((
                Trajectory { steps: self.steps.clone(), terminal: self.end == self.model.horizon, anomaly: None, final_state: None },
                prob,
            ));
            return;
        }
        let model = self.model;
        for (observations, p_obs) in self.observation_tuples(state) {
            let rows: Vec<Vec<f64>> = observations
                .iter()
                .enumerate()
                .map(|(i, &o)| self.policy.distribution(i, o))
                .collect();
            for a in 0..model.num_joint_actions() {
                let joint = model.decode_joint(a);
                let p_act = match first {
                    Some(forced) if forced != joint.as_slice() => continue,
                    Some(_) => 1.0,
                    None => joint.iter().enumerate().map(|(i, &x)| rows[i][x]).product(),
                };
                if p_act == 0.0 {
                    continue;
                }
                let behavior_log_probs = joint.iter().enumerate().map(|(i, &x)| rows[i][x].ln()).collect();
                self.steps.push(Transition {
                    t,
                    state,
                    observations: observations.clone(),
                    joint_action: joint,
                    reward: model.reward[state][a],
                    behavior_log_probs,
                });
                let p = prob * p_obs * p_act;
                if t + 1 == self.end {
                    self.visit(t + 1, state, p, None);
                } else {
                    for (next, &q) in model.transition[state][a].iter().enumerate() {
                        if q > 0.0 {
                            self.visit(t + 1, next, p * q, None);
                        }
                    }
                }
                self.steps.pop();
            }
        }
    }
}

/// Every positive-probability trajectory of length `horizon` under `policy`,
/// with its probability.
pub fn enumerate_trajectories<P: Policy + ?Sized>(
    model: &DecPomdp,
    policy: &P,
    horizon: usize,
    budget: f64,
) -> Result<Vec<(Trajectory, f64)>, EnvError> {
    check_horizon(model, horizon)?;
    let required = enumeration_size(model, horizon);
    if required > budget {
        return Err(EnvError::BudgetExceeded { required, budget });
    }
    let mut e = Enumerator { model, policy, end: horizon, out: Vec::new(), steps: Vec::new() };
    for (s, &p) in model.initial_dist.iter().enumerate() {
        if p > 0.0 {
            e.visit(0, s, p, None);
        }
    }
    Ok(e.out)
}

/// Continuations from stage `stage` in `state`, to the model horizon, with
/// the first joint action optionally fixed. Probabilities are conditional on
/// the root (state, and the fixed action when given).
pub fn enumerate_rooted<P: Policy + ?Sized>(
    model: &DecPomdp,
    policy: &P,
    stage: usize,
    state: usize,
    first_action: Option<&[usize]>,
    budget: f64,
) -> Result<Vec<(Trajectory, f64)>, EnvError> {
    let remaining = model.horizon.saturating_sub(stage);
    let required = enumeration_size(model, remaining);
    if required > budget {
        return Err(EnvError::BudgetExceeded { required, budget });
    }
    let mut e = Enumerator { model, policy, end: model.horizon, out: Vec::new(), steps: Vec::new() };
    if remaining > 0 {
        e.visit(stage, state, 1.0, first_action);
    }
    Ok(e.out)
}
