//! Team reward.
//!
//! A feasible state earns the drop in team average cost relative to the
//! most recent earlier feasible state. An infeasible state earns
//! [`PENALTY`] once the last `m` states (itself included) are all
//! infeasible, and nothing otherwise. The penalty repeats for as long as the
//! run of infeasible states continues.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{GlobalState, RoutingProblem};

pub const PENALTY: f64 = -10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Consecutive infeasible states that trigger the penalty.
    pub m: usize,
    pub penalty: f64,
}

impl RewardConfig {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(RewardConfig { m, penalty: PENALTY })
    }

    /// `m = n + 1`: every agent may decline an offer once.
    pub fn for_agents(n: usize) -> Self {
        RewardConfig {
            m: n + 1,
            penalty: PENALTY,
        }
    }
}

/// Reward of step `t` from per-state feasibility flags and team costs.
///
/// `costs[j]` is only read where `feasible[j]` holds. Returns the reward and
/// the index of the previous feasible state.
pub fn reward_at(feasible: &[bool], costs: &[f64], t: usize, config: &RewardConfig) -> (f64, usize) {
    debug_assert!(t >= 1 && t < feasible.len() && feasible[0]);
    let prev = (0..t).rev().find(|&j| feasible[j]).unwrap_or(0);
    if feasible[t] {
        return (costs[prev] - costs[t], prev);
    }
    let m = config.m;
    let streak = t + 1 >= m && (t + 1 - m..=t).all(|j| !feasible[j]);
    (if streak { config.penalty } else { 0.0 }, prev)
}

/// Reward `r_t` of the last state in `states` (`s_0 .. s_t`).
pub fn compute_reward(problem: &RoutingProblem, states: &[GlobalState], config: &RewardConfig) -> Result<f64> {
    if states.len() < 2 {
        return Err(Error::Contract("a reward needs at least s_0 and s_1".into()));
    }
    if !states[0].is_feasible() {
        return Err(Error::Contract("s_0 must be feasible".into()));
    }
    let feasible: Vec<bool> = states.iter().map(GlobalState::is_feasible).collect();
    let costs = states
        .iter()
        .map(|s| if s.is_feasible() { problem.team_average_cost(s) } else { Ok(f64::NAN) })
        .collect::<Result<Vec<_>>>()?;
    Ok(reward_at(&feasible, &costs, states.len() - 1, config).0)
}
