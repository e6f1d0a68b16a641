//! Episode rollout and the trace it produces.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::offers::{assign_pool_offers, Offers, PoolCoordinator};
use super::reward::{reward_at, RewardConfig};
use super::{apply_global_action, check_action, legal_rules, sample_region, uniform_rule, GlobalAction, LocalAction};
use crate::error::{Error, Result};
use crate::routing::{GlobalState, RoutingProblem};

/// Supplies the joint action for a step, given the current state and this
/// step's pool offers.
pub trait ActionProvider {
    fn provide(
        &mut self,
        problem: &RoutingProblem,
        state: &GlobalState,
        offers: &Offers,
        rng: &mut dyn RngCore,
    ) -> Result<GlobalAction>;
}

impl<F> ActionProvider for F
where
    F: FnMut(&RoutingProblem, &GlobalState, &Offers, &mut dyn RngCore) -> Result<GlobalAction>,
{
    fn provide(
        &mut self,
        problem: &RoutingProblem,
        state: &GlobalState,
        offers: &Offers,
        rng: &mut dyn RngCore,
    ) -> Result<GlobalAction> {
        self(problem, state, offers, rng)
    }
}

/// Every agent does nothing.
pub fn noop_provider(_: &RoutingProblem, state: &GlobalState, _: &Offers, _: &mut dyn RngCore) -> Result<GlobalAction> {
    Ok(GlobalAction::noop(state.num_agents()))
}

/// A uniformly random legal joint action: sampled region, uniform rule.
pub fn random_legal_action(
    _: &RoutingProblem,
    state: &GlobalState,
    offers: &Offers,
    rng: &mut dyn RngCore,
) -> Result<GlobalAction> {
    let mut locals = Vec::with_capacity(state.num_agents());
    for agent in 0..state.num_agents() {
        let offer = offers.get(agent).copied().flatten();
        match sample_region(state, agent, offer, rng) {
            None => locals.push(LocalAction::NoOp),
            Some(region) => {
                let rules = legal_rules(state, agent, region, offer)?;
                locals.push(LocalAction::new(region, uniform_rule(&rules, rng)));
            }
        }
    }
    Ok(GlobalAction(locals))
}

/// `(s_0, a_0, r_1, s_1, ..., s_T)` plus bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub states: Vec<GlobalState>,
    pub actions: Vec<GlobalAction>,
    /// Offers made before each action.
    pub offers: Vec<Offers>,
    /// `rewards[t]` is `r_{t+1}`.
    pub rewards: Vec<f64>,
    pub feasible: Vec<bool>,
    /// Team cost per state; NaN for infeasible states.
    pub costs: Vec<f64>,
    /// `prev_feasible[t]` is `prev_f(t+1)`.
    pub prev_feasible: Vec<usize>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Recomputes every reward from the state sequence alone.
    pub fn recompute_rewards(&self, problem: &RoutingProblem, config: &RewardConfig) -> Result<Vec<f64>> {
        let feasible: Vec<bool> = self.states.iter().map(GlobalState::is_feasible).collect();
        let costs = self
            .states
            .iter()
            .map(|s| if s.is_feasible() { problem.team_average_cost(s) } else { Ok(f64::NAN) })
            .collect::<Result<Vec<_>>>()?;
        Ok((1..self.states.len())
            .map(|t| reward_at(&feasible, &costs, t, config).0)
            .collect())
    }
}

/// Rolls out `steps` transitions from `s0`.
///
/// Offers are drawn before every filled-pool step and the provider's
/// actions are checked against them; an illegal action aborts the episode
/// with the step and agent named.
pub fn rollout_episode<P, R>(
    problem: &RoutingProblem,
    s0: &GlobalState,
    provider: &mut P,
    steps: usize,
    config: &RewardConfig,
    rng: &mut R,
) -> Result<EpisodeTrace>
where
    P: ActionProvider + ?Sized,
    R: Rng,
{
    if !s0.is_feasible() {
        return Err(Error::Contract("initial state must be feasible".into()));
    }
    let n = problem.num_agents();
    let mut coord = PoolCoordinator::new();
    let mut trace = EpisodeTrace {
        states: vec![s0.clone()],
        actions: Vec::with_capacity(steps),
        offers: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        feasible: vec![true],
        costs: vec![problem.team_average_cost(s0)?],
        prev_feasible: Vec::with_capacity(steps),
    };
    let mut state = s0.clone();
    for step in 0..steps {
        let offers = if state.pool.is_empty() {
            vec![None; n]
        } else {
            assign_pool_offers(&state.pool, n, &coord, rng)
        };
        let action = provider.provide(problem, &state, &offers, rng)?;
        if action.0.len() != n {
            return Err(Error::Contract(format!(
                "step {step}: provider returned {} local actions for {n} agents",
                action.0.len()
            )));
        }
        for (agent, local) in action.0.iter().enumerate() {
            check_action(&state, agent, local, offers[agent]).map_err(|e| match e {
                Error::IllegalAction { agent, reason } => Error::IllegalAction {
                    agent,
                    reason: format!("step {step}: {reason}"),
                },
                other => other,
            })?;
        }
        let next = apply_global_action(&state, &action)?;
        coord.observe(&state, &offers, &action, &next);
        let feasible = next.is_feasible();
        trace.costs.push(if feasible { problem.team_average_cost(&next)? } else { f64::NAN });
        trace.feasible.push(feasible);
        let (r, prev) = reward_at(&trace.feasible, &trace.costs, step + 1, config);
        trace.rewards.push(r);
        trace.prev_feasible.push(prev);
        trace.actions.push(action);
        trace.offers.push(offers);
        trace.states.push(next.clone());
        state = next;
    }
    Ok(trace)
}

/// The last feasible state of the episode (`s_0` if no other is feasible).
pub fn final_solution(trace: &EpisodeTrace) -> &GlobalState {
    trace
        .states
        .iter()
        .zip(&trace.feasible)
        .rev()
        .find(|(_, &f)| f)
        .map(|(s, _)| s)
        .unwrap_or(&trace.states[0])
}
