//! The team Markov game played on a [`GlobalState`].
//!
//! Every step each agent picks a *region* node and a *rule*; the region is
//! moved to sit right after the rule. The rule may also be the pool sentinel,
//! which means "hand the region to the pool" for an own customer and
//! "decline the offer" for a pool node.
//!
//! While the pool is empty an agent may only touch its own customers. Once
//! the pool is filled, the only legal region is the pool node the
//! coordinator offered to that agent; agents without an offer sit still.

mod episode;
mod offers;
mod reward;

pub use episode::{
    final_solution, noop_provider, random_legal_action, rollout_episode, ActionProvider, EpisodeTrace,
};
pub use offers::{assign_pool_offers, Offers, PoolCoordinator};
pub use reward::{compute_reward, reward_at, RewardConfig, PENALTY};

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{GlobalState, NodeId, Route};

/// Where the region node is placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    /// Insert right after this node of the agent's route (the depot means the
    /// front of the tour).
    After(NodeId),
    /// The pool sentinel `p`.
    Pool,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::After(n) => write!(f, "{n}"),
            Rule::Pool => write!(f, "p"),
        }
    }
}

/// One agent's move. The acting agent is the action's index inside a
/// [`GlobalAction`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalAction {
    NoOp,
    Move { region: NodeId, rule: Rule },
}

impl LocalAction {
    pub fn new(region: NodeId, rule: Rule) -> Self {
        LocalAction::Move { region, rule }
    }

    pub fn region(&self) -> Option<NodeId> {
        match self {
            LocalAction::NoOp => None,
            LocalAction::Move { region, .. } => Some(*region),
        }
    }

    pub fn rule(&self) -> Option<Rule> {
        match self {
            LocalAction::NoOp => None,
            LocalAction::Move { rule, .. } => Some(*rule),
        }
    }
}

/// The joint action: entry `i` belongs to agent `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalAction(pub Vec<LocalAction>);

impl GlobalAction {
    pub fn noop(n: usize) -> Self {
        GlobalAction(vec![LocalAction::NoOp; n])
    }

    pub fn locals(&self) -> &[LocalAction] {
        &self.0
    }
}

/// What a local action does to the agent's route and the pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    NoOp,
    /// Own customer placed after its current predecessor.
    Keep,
    Reorder,
    Drop,
    Integrate,
    Decline,
}

/// Change a local action makes to the pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PoolDelta {
    pub added: Option<NodeId>,
    pub removed: Option<NodeId>,
}

/// Rule candidates for `agent` moving `region`, in a fixed order: start
/// depot, interior customers in route order, then the pool sentinel.
///
/// `offer` is the pool node the coordinator assigned to this agent; it must
/// be `None` while the pool is empty and equal `region` while it is filled.
pub fn legal_rules(state: &GlobalState, agent: usize, region: NodeId, offer: Option<NodeId>) -> Result<Vec<Rule>> {
    let route = state.route(agent)?;
    check_region(state, agent, region, offer)?;
    let mut rules = Vec::with_capacity(route.len());
    rules.push(Rule::After(route.depot()));
    rules.extend(route.customers().iter().filter(|&&c| c != region).map(|&c| Rule::After(c)));
    rules.push(Rule::Pool);
    Ok(rules)
}

fn check_region(state: &GlobalState, agent: usize, region: NodeId, offer: Option<NodeId>) -> Result<()> {
    let route = state.route(agent)?;
    if state.pool.is_empty() {
        if offer.is_some() {
            return Err(Error::illegal(agent, "offer given while the pool is empty"));
        }
        if !route.contains_customer(region) {
            return Err(Error::illegal(
                agent,
                format!("region {region} is not a customer of this agent's route"),
            ));
        }
    } else if offer != Some(region) {
        return Err(Error::illegal(
            agent,
            format!("region {region} is not the pool node offered to this agent"),
        ));
    }
    Ok(())
}

/// Draws the region for `agent`: a uniform own customer while the pool is
/// empty, the offered node while it is filled. `None` means the agent has no
/// legal region this step.
pub fn sample_region<R: Rng + ?Sized>(
    state: &GlobalState,
    agent: usize,
    offer: Option<NodeId>,
    rng: &mut R,
) -> Option<NodeId> {
    if !state.pool.is_empty() {
        return offer;
    }
    let customers = state.routes.get(agent)?.customers();
    if customers.is_empty() {
        return None;
    }
    Some(customers[rng.random_range(0..customers.len())])
}

/// Checks `action` against the game rules for this step.
pub fn check_action(state: &GlobalState, agent: usize, action: &LocalAction, offer: Option<NodeId>) -> Result<()> {
    match *action {
        LocalAction::NoOp => Ok(()),
        LocalAction::Move { region, rule } => {
            if rule == Rule::After(region) {
                return Err(Error::illegal(agent, format!("rule equals region {region}")));
            }
            let rules = legal_rules(state, agent, region, offer)?;
            if !rules.contains(&rule) {
                return Err(Error::illegal(agent, format!("rule {rule} is not a legal candidate")));
            }
            Ok(())
        }
    }
}

/// Classifies an action against the state it is applied to.
pub fn action_kind(state: &GlobalState, agent: usize, action: &LocalAction) -> ActionKind {
    let LocalAction::Move { region, rule } = *action else {
        return ActionKind::NoOp;
    };
    let Some(route) = state.routes.get(agent) else {
        return ActionKind::NoOp;
    };
    let from_pool = state.pool.contains(&region);
    match (from_pool, rule) {
        (true, Rule::Pool) => ActionKind::Decline,
        (true, Rule::After(_)) => ActionKind::Integrate,
        (false, Rule::Pool) => ActionKind::Drop,
        (false, Rule::After(u)) => match route.position(region) {
            Some(pos) if route.sequence()[pos - 1] == u => ActionKind::Keep,
            _ => ActionKind::Reorder,
        },
    }
}

/// Applies one agent's action, returning its new route and the pool change.
pub fn apply_local_action(state: &GlobalState, agent: usize, action: &LocalAction) -> Result<(Route, PoolDelta)> {
    let route = state.route(agent)?;
    let LocalAction::Move { region, rule } = *action else {
        return Ok((route.clone(), PoolDelta::default()));
    };
    if rule == Rule::After(region) {
        return Err(Error::illegal(agent, format!("rule equals region {region}")));
    }
    let from_pool = state.pool.contains(&region);
    if !from_pool && !route.contains_customer(region) {
        return Err(Error::illegal(
            agent,
            format!("region {region} is neither in the pool nor in the agent's route"),
        ));
    }
    let mut new_route = route.clone();
    let mut delta = PoolDelta::default();
    if from_pool {
        if rule == Rule::Pool {
            return Ok((new_route, delta));
        }
        delta.removed = Some(region);
    } else {
        let pos = route.position(region).expect("region is an own customer");
        new_route.sequence_mut().remove(pos);
        if rule == Rule::Pool {
            delta.added = Some(region);
            return Ok((new_route, delta));
        }
    }
    let Rule::After(anchor) = rule else { unreachable!() };
    let at = new_route
        .position(anchor)
        .ok_or_else(|| Error::illegal(agent, format!("rule node {anchor} is not in the agent's route")))?;
    new_route.sequence_mut().insert(at + 1, region);
    Ok((new_route, delta))
}

/// Applies every local action to the previous state.
pub fn apply_global_action(state: &GlobalState, action: &GlobalAction) -> Result<GlobalState> {
    if action.0.len() != state.num_agents() {
        return Err(Error::Contract(format!(
            "global action has {} entries for {} agents",
            action.0.len(),
            state.num_agents()
        )));
    }
    let mut claims: Vec<(NodeId, usize)> = Vec::new();
    for (agent, local) in action.0.iter().enumerate() {
        if let Some(region) = local.region() {
            if state.pool.contains(&region) {
                if let Some(&(_, first)) = claims.iter().find(|(n, _)| *n == region) {
                    return Err(Error::PoolConflict {
                        node: region,
                        first,
                        second: agent,
                    });
                }
                claims.push((region, agent));
            }
        }
    }
    let mut routes = Vec::with_capacity(state.num_agents());
    let mut pool = state.pool.clone();
    for (agent, local) in action.0.iter().enumerate() {
        let (route, delta) = apply_local_action(state, agent, local)?;
        routes.push(route);
        if let Some(n) = delta.removed {
            pool.remove(&n);
        }
        if let Some(n) = delta.added {
            pool.insert(n);
        }
    }
    Ok(GlobalState::new(routes, pool))
}

/// Uniform rule choice among legal candidates, used by random providers.
pub(crate) fn uniform_rule(rules: &[Rule], rng: &mut dyn RngCore) -> Rule {
    rules[rng.random_range(0..rules.len())]
}
