//! Exhaustive checks of how the team reward couples agents' actions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    apply_global_action, assign_pool_offers, legal_rules, reward_at, GlobalAction, LocalAction, Offers,
    PoolCoordinator, RewardConfig, Rule,
};
use crate::routing::{GlobalState, NodeId, RoutingProblem};

const TIE: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub joint_actions: usize,
    /// Joint actions whose reward differs from the per-agent decomposition.
    pub decomposition_violations: usize,
    /// `(agent, a^-i)` pairs whose best responses differ from those under
    /// the first `a^-i`.
    pub argmax_violations: usize,
}

/// Local actions of `agent` on a pool-empty state that keep the successor
/// feasible: every own customer moved after every legal node. NoOp only
/// for an agent without customers.
fn feasible_local_actions(state: &GlobalState, agent: usize) -> Result<Vec<LocalAction>> {
    let route = state.route(agent)?;
    let mut out = Vec::new();
    for &region in route.customers() {
        for rule in legal_rules(state, agent, region, None)? {
            if rule != Rule::Pool {
                out.push(LocalAction::new(region, rule));
            }
        }
    }
    if out.is_empty() {
        out.push(LocalAction::NoOp);
    }
    Ok(out)
}

fn all_legal_local_actions(state: &GlobalState, agent: usize, offer: Option<NodeId>) -> Result<Vec<LocalAction>> {
    let regions: Vec<_> = if state.pool.is_empty() {
        state.route(agent)?.customers().to_vec()
    } else {
        offer.into_iter().collect()
    };
    let mut out = Vec::new();
    for region in regions {
        for rule in legal_rules(state, agent, region, offer)? {
            out.push(LocalAction::new(region, rule));
        }
    }
    if out.is_empty() {
        out.push(LocalAction::NoOp);
    }
    Ok(out)
}

/// Cartesian product of per-agent choices, first agent slowest.
fn product<T: Clone>(sets: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for set in sets {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                set.iter().map(move |x| {
                    let mut p = prefix.clone();
                    p.push(x.clone());
                    p
                })
            })
            .collect();
    }
    out
}

fn best_set(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&i| values[i] >= best - TIE).collect()
}

/// Counts, per agent, the other-agent contexts whose best responses
/// differ from those of the first context. `value[joint index]` is laid
/// out as in [`product`].
fn argmax_violations(sizes: &[usize], value: &[f64]) -> usize {
    let n = sizes.len();
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * sizes[i + 1];
    }
    let mut violations = 0;
    for agent in 0..n {
        let mut reference: Option<Vec<usize>> = None;
        for base in 0..value.len() {
            if (base / strides[agent]) % sizes[agent] != 0 {
                continue;
            }
            let row: Vec<f64> = (0..sizes[agent]).map(|a| value[base + a * strides[agent]]).collect();
            let set = best_set(&row);
            match &reference {
                None => reference = Some(set),
                Some(r) if *r != set => violations += 1,
                Some(_) => {}
            }
        }
    }
    violations
}

/// Exhaustive one-step check on a feasible, pool-empty state: over all
/// joint actions with feasible successors, the reward equals
/// `c(s_0) - (1/n) sum_i c_i(a_i)` and each agent's best local action does
/// not depend on the others' actions.
pub fn check_one_step_factorization(problem: &RoutingProblem, state: &GlobalState) -> Result<FactorizationReport> {
    if !state.is_feasible() {
        return Err(Error::Contract("factorization check needs a feasible state".into()));
    }
    let n = problem.num_agents();
    let config = RewardConfig::for_agents(n);
    let c0 = problem.team_average_cost(state)?;
    let sets = (0..n)
        .map(|i| feasible_local_actions(state, i))
        .collect::<Result<Vec<_>>>()?;
    // Cost of each agent's own route after each of its local actions.
    let mut local_cost = Vec::with_capacity(n);
    for (agent, set) in sets.iter().enumerate() {
        let mut costs = Vec::with_capacity(set.len());
        for a in set {
            let mut joint = GlobalAction::noop(n);
            joint.0[agent] = *a;
            let next = apply_global_action(state, &joint)?;
            costs.push(problem.route_cost(&next.routes[agent])?);
        }
        local_cost.push(costs);
    }
    let index_sets: Vec<Vec<usize>> = sets.iter().map(|s| (0..s.len()).collect()).collect();
    let joints = product(&index_sets);
    let mut report = FactorizationReport::default();
    let mut rewards = Vec::with_capacity(joints.len());
    for idx in &joints {
        let action = GlobalAction(idx.iter().enumerate().map(|(i, &a)| sets[i][a]).collect());
        let next = apply_global_action(state, &action)?;
        let c1 = problem.team_average_cost(&next)?;
        let (r, _) = reward_at(&[true, true], &[c0, c1], 1, &config);
        let decomposed = c0 - idx.iter().enumerate().map(|(i, &a)| local_cost[i][a]).sum::<f64>() / n as f64;
        if (r - decomposed).abs() > 1e-12 {
            report.decomposition_violations += 1;
        }
        rewards.push(r);
        report.joint_actions += 1;
    }
    let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
    report.argmax_violations = argmax_violations(&sizes, &rewards);
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub joint_actions: usize,
    /// `(agent, a^-i)` contexts compared.
    pub contexts: usize,
    /// Contexts whose best responses under the two-step value differ from
    /// the first context's.
    pub violations: usize,
}

/// Expected reward of the second step under a uniform policy: uniform
/// region, then uniform legal rule, independently per agent. Offers are
/// averaged over `offer_samples` seeded draws.
fn expected_second_reward(
    problem: &RoutingProblem,
    states: [&GlobalState; 2],
    coord: &PoolCoordinator,
    config: &RewardConfig,
    offer_samples: u64,
) -> Result<f64> {
    let [s0, s1] = states;
    let n = problem.num_agents();
    let c0 = problem.team_average_cost(s0)?;
    let c1 = if s1.is_feasible() { problem.team_average_cost(s1)? } else { f64::NAN };
    let offer_draws: Vec<Offers> = if s1.pool.is_empty() {
        vec![vec![None; n]]
    } else {
        (0..offer_samples)
            .map(|k| assign_pool_offers(&s1.pool, n, coord, &mut ChaCha8Rng::seed_from_u64(k)))
            .collect()
    };
    let mut total = 0.0;
    for offers in &offer_draws {
        // Per agent: (action, probability) under the uniform policy.
        let mut dists = Vec::with_capacity(n);
        for agent in 0..n {
            let offer = offers[agent];
            let regions: Vec<_> = if s1.pool.is_empty() {
                s1.route(agent)?.customers().to_vec()
            } else {
                offer.into_iter().collect()
            };
            let mut dist = Vec::new();
            for &region in &regions {
                let rules = legal_rules(s1, agent, region, offer)?;
                let p = 1.0 / (regions.len() * rules.len()) as f64;
                dist.extend(rules.into_iter().map(|rule| (LocalAction::new(region, rule), p)));
            }
            if dist.is_empty() {
                dist.push((LocalAction::NoOp, 1.0));
            }
            dists.push(dist);
        }
        let mut expected = 0.0;
        for joint in product(&dists) {
            let prob: f64 = joint.iter().map(|(_, p)| p).product();
            let action = GlobalAction(joint.iter().map(|(a, _)| *a).collect());
            let s2 = apply_global_action(s1, &action)?;
            let c2 = if s2.is_feasible() { problem.team_average_cost(&s2)? } else { f64::NAN };
            let feasible = [true, s1.is_feasible(), s2.is_feasible()];
            expected += prob * reward_at(&feasible, &[c0, c1, c2], 2, config).0;
        }
        total += expected;
    }
    Ok(total / offer_draws.len() as f64)
}

/// Two-step action values `r_1 + gamma E[r_2]` under a uniform follow-up
/// policy, enumerated over every legal joint first action (drops included).
/// Reports how often an agent's best first action changes with the other
/// agents' first actions. Pool interactions in the second step can couple
/// the agents, so violations are reported rather than ruled out.
pub fn critic_independence_diagnostic(
    problem: &RoutingProblem,
    s0: &GlobalState,
    gamma: f64,
    offer_samples: u64,
) -> Result<IndependenceReport> {
    if !s0.is_feasible() {
        return Err(Error::Contract("diagnostic needs a feasible initial state".into()));
    }
    let n = problem.num_agents();
    let config = RewardConfig::for_agents(n);
    let offers0: Offers = vec![None; n];
    let sets = (0..n)
        .map(|i| all_legal_local_actions(s0, i, None))
        .collect::<Result<Vec<_>>>()?;
    let index_sets: Vec<Vec<usize>> = sets.iter().map(|s| (0..s.len()).collect()).collect();
    let c0 = problem.team_average_cost(s0)?;
    let mut values = Vec::new();
    for idx in product(&index_sets) {
        let action = GlobalAction(idx.iter().enumerate().map(|(i, &a)| sets[i][a]).collect());
        let s1 = apply_global_action(s0, &action)?;
        let c1 = if s1.is_feasible() { problem.team_average_cost(&s1)? } else { f64::NAN };
        let r1 = reward_at(&[true, s1.is_feasible()], &[c0, c1], 1, &config).0;
        let mut coord = PoolCoordinator::new();
        coord.observe(s0, &offers0, &action, &s1);
        let r2 = expected_second_reward(problem, [s0, &s1], &coord, &config, offer_samples.max(1))?;
        values.push(r1 + gamma * r2);
    }
    let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
    let contexts: usize = (0..n).map(|i| values.len() / sizes[i]).sum();
    Ok(IndependenceReport {
        joint_actions: values.len(),
        contexts,
        violations: argmax_violations(&sizes, &values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_instance, GenConfig};

    #[test]
    fn argmax_layout() {
        // Two agents with two actions each; agent 0's best response flips.
        let values = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(argmax_violations(&[2, 2], &values), 2);
        let additive = [3.0, 1.0, 2.0, 0.0];
        assert_eq!(argmax_violations(&[2, 2], &additive), 0);
    }

    #[test]
    fn one_step_factorization_holds() {
        let cfg = GenConfig::new(4, 2, 10, 12);
        for id in 0..10 {
            let inst = generate_instance(&cfg, id).unwrap();
            let report = check_one_step_factorization(&inst.problem, &inst.initial).unwrap();
            assert!(report.joint_actions > 0);
            assert_eq!(report.decomposition_violations, 0);
            assert_eq!(report.argmax_violations, 0);
        }
    }

    #[test]
    fn diagnostic_runs() {
        let inst = generate_instance(&GenConfig::new(3, 2, 1, 5), 0).unwrap();
        let report = critic_independence_diagnostic(&inst.problem, &inst.initial, 0.5, 4).unwrap();
        assert!(report.joint_actions > 0);
        assert!(report.violations <= report.contexts);
    }
}
