//! Conflict-free assignment of pool nodes to agents.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GlobalAction, LocalAction, Rule};
use crate::routing::{GlobalState, NodeId, Pool};

/// Offer per agent for one step; `None` means the agent sits still.
pub type Offers = Vec<Option<NodeId>>;

/// Memory the pool keeps between steps.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCoordinator {
    /// Agent that dropped each node currently in the pool.
    pub dropper: BTreeMap<NodeId, usize>,
    /// Sole agent asked to integrate in the previous step, if that step
    /// belongs to the current filled-pool phase.
    pub last_integrator: Option<usize>,
}

impl PoolCoordinator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates the memory after `action` moved `before` to `after`.
    pub fn observe(&mut self, before: &GlobalState, offers: &Offers, action: &GlobalAction, after: &GlobalState) {
        if !before.pool.is_empty() {
            let offered: Vec<usize> = offers
                .iter()
                .enumerate()
                .filter_map(|(a, o)| o.map(|_| a))
                .collect();
            self.last_integrator = match offered.as_slice() {
                [only] => Some(*only),
                _ => None,
            };
        }
        for (agent, local) in action.0.iter().enumerate() {
            if let LocalAction::Move { region, rule: Rule::Pool } = local {
                if !before.pool.contains(region) {
                    self.dropper.insert(*region, agent);
                }
            }
        }
        self.dropper.retain(|node, _| after.pool.contains(node));
        if after.pool.is_empty() {
            self.last_integrator = None;
        }
    }
}

/// Offers pool nodes to agents, at most one node per agent and one agent
/// per node.
///
/// Two soft preferences apply: a node is not offered to the agent that
/// dropped it, and the last sole integrator is not asked again. When no
/// offer can be made under both, the repeat-integrator preference is lifted
/// first, then the dropper exclusion.
pub fn assign_pool_offers<R: Rng + ?Sized>(pool: &Pool, n: usize, coord: &PoolCoordinator, rng: &mut R) -> Offers {
    let mut nodes: Vec<NodeId> = pool.iter().copied().collect();
    nodes.shuffle(rng);
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);

    let levels: [(bool, bool); 3] = [(true, true), (false, true), (false, false)];
    for (avoid_repeat, avoid_dropper) in levels {
        let eligible = |node: NodeId, agent: usize| {
            if avoid_repeat && coord.last_integrator == Some(agent) {
                return false;
            }
            if avoid_dropper && coord.dropper.get(&node) == Some(&agent) {
                return false;
            }
            true
        };
        let offers = max_matching(&nodes, &agents, n, eligible);
        if offers.iter().any(Option::is_some) {
            return offers;
        }
    }
    vec![None; n]
}

// Kuhn's augmenting-path matching; node and agent orders carry the randomness.
fn max_matching(nodes: &[NodeId], agents: &[usize], n: usize, eligible: impl Fn(NodeId, usize) -> bool) -> Offers {
    fn augment(
        node: usize,
        nodes: &[NodeId],
        agents: &[usize],
        eligible: &dyn Fn(NodeId, usize) -> bool,
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for &agent in agents {
            if seen[agent] || !eligible(nodes[node], agent) {
                continue;
            }
            seen[agent] = true;
            let free = match owner[agent] {
                None => true,
                Some(other) => augment(other, nodes, agents, eligible, owner, seen),
            };
            if free {
                owner[agent] = Some(node);
                return true;
            }
        }
        false
    }

    let mut owner: Vec<Option<usize>> = vec![None; n];
    for node in 0..nodes.len() {
        if owner.iter().all(Option::is_some) {
            break;
        }
        let mut seen = vec![false; n];
        augment(node, nodes, agents, &eligible, &mut owner, &mut seen);
    }
    owner.into_iter().map(|o| o.map(|i| nodes[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(ids: &[u32]) -> Pool {
        ids.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn avoids_the_dropper() {
        let mut coord = PoolCoordinator::new();
        coord.dropper.insert(NodeId(7), 0);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offers = assign_pool_offers(&pool(&[7]), 2, &coord, &mut rng);
            assert_eq!(offers, vec![None, Some(NodeId(7))]);
        }
    }

    #[test]
    fn two_nodes_two_agents_each_get_one() {
        let coord = PoolCoordinator::new();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offers = assign_pool_offers(&pool(&[3, 4]), 2, &coord, &mut rng);
            assert!(offers.iter().all(Option::is_some));
            assert_ne!(offers[0], offers[1]);
        }
    }

    #[test]
    fn single_agent_gets_its_own_drop_back() {
        let mut coord = PoolCoordinator::new();
        coord.dropper.insert(NodeId(2), 0);
        coord.last_integrator = Some(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(assign_pool_offers(&pool(&[2]), 1, &coord, &mut rng), vec![Some(NodeId(2))]);
    }

    #[test]
    fn repeat_integrator_is_skipped_when_possible() {
        let mut coord = PoolCoordinator::new();
        coord.dropper.insert(NodeId(5), 0);
        coord.last_integrator = Some(1);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offers = assign_pool_offers(&pool(&[5]), 3, &coord, &mut rng);
            assert_eq!(offers, vec![None, None, Some(NodeId(5))]);
        }
    }

    #[test]
    fn repeat_preference_is_relaxed_before_dropper_exclusion() {
        let mut coord = PoolCoordinator::new();
        coord.dropper.insert(NodeId(5), 0);
        coord.last_integrator = Some(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(assign_pool_offers(&pool(&[5]), 2, &coord, &mut rng), vec![None, Some(NodeId(5))]);
    }

    #[test]
    fn integrator_memory_ends_with_the_filled_phase() {
        use crate::routing::Route;
        let state = |customers: &[u32], pool_ids: &[u32]| {
            let route = Route::new(0, NodeId(9), customers.iter().map(|&c| NodeId(c)));
            GlobalState::new(vec![route, Route::new(1, NodeId(8), [])], pool(pool_ids))
        };
        let mut coord = PoolCoordinator::new();
        coord.dropper.insert(NodeId(5), 1);
        let offers = vec![Some(NodeId(5)), None];
        let integrate = GlobalAction(vec![LocalAction::new(NodeId(5), Rule::After(NodeId(9))), LocalAction::NoOp]);
        coord.observe(&state(&[], &[5]), &offers, &integrate, &state(&[5], &[]));
        assert_eq!(coord.last_integrator, None);
        assert!(coord.dropper.is_empty());

        let decline = GlobalAction(vec![LocalAction::new(NodeId(5), Rule::Pool), LocalAction::NoOp]);
        coord.dropper.insert(NodeId(5), 1);
        coord.observe(&state(&[], &[5]), &offers, &decline, &state(&[], &[5]));
        assert_eq!(coord.last_integrator, Some(0));
    }

    #[test]
    fn surplus_nodes_wait() {
        let coord = PoolCoordinator::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let offers = assign_pool_offers(&pool(&[1, 2, 3, 4]), 2, &coord, &mut rng);
        assert_eq!(offers.iter().flatten().count(), 2);
    }

    // Exhaustive check over every coordinator memory for tiny pools: the
    // result is injective and honours the preferences whenever any
    // alternative exists.
    #[test]
    fn exhaustive_preference_check() {
        for n in 1..=3usize {
            for pool_size in 1..=3u32 {
                let p: Pool = (0..pool_size).map(NodeId).collect();
                let dropper_choices = (n + 1).pow(pool_size);
                for code in 0..dropper_choices {
                    for last in std::iter::once(None).chain((0..n).map(Some)) {
                        let mut coord = PoolCoordinator::new();
                        let mut c = code;
                        for node in 0..pool_size {
                            let d = c % (n + 1);
                            c /= n + 1;
                            if d < n {
                                coord.dropper.insert(NodeId(node), d);
                            }
                        }
                        coord.last_integrator = last;
                        let mut rng = ChaCha8Rng::seed_from_u64(code as u64);
                        let offers = assign_pool_offers(&p, n, &coord, &mut rng);
                        let given: Vec<NodeId> = offers.iter().flatten().copied().collect();
                        let mut dedup = given.clone();
                        dedup.sort();
                        dedup.dedup();
                        assert_eq!(dedup.len(), given.len());
                        assert!(!given.is_empty());
                        let strict_possible = p.iter().any(|node| {
                            (0..n).any(|a| coord.dropper.get(node) != Some(&a) && last != Some(a))
                        });
                        if strict_possible {
                            for (a, o) in offers.iter().enumerate() {
                                if let Some(node) = o {
                                    assert_ne!(coord.dropper.get(node), Some(&a));
                                    assert_ne!(last, Some(a));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
