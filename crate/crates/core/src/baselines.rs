//! Reference solvers: exact TSP and multi-vehicle oracles for small
//! instances, plus a nearest-neighbour and 2-opt heuristic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{GlobalState, NodeId, Pool, Route, RoutingProblem};

/// Largest node count (depot included) accepted by [`held_karp`].
pub const HELD_KARP_MAX_NODES: usize = 16;
/// Largest `n^k` accepted by [`exact_mvrp`].
pub const PARTITION_LIMIT: f64 = 1e7;

const IMPROVEMENT_EPS: f64 = 1e-12;

/// Customer to agent map.
pub type Assignment = BTreeMap<NodeId, usize>;

/// Assignment read off the routes of a state; pool members are left out.
pub fn assignment_of(state: &GlobalState) -> Assignment {
    state.assignment().into_iter().collect()
}

fn customers_by_agent(problem: &RoutingProblem, assignment: &Assignment) -> Result<Vec<Vec<NodeId>>> {
    let mut per_agent = vec![Vec::new(); problem.num_agents()];
    for (&node, &agent) in assignment {
        if !problem.is_customer(node) {
            return Err(Error::UnknownNode(node));
        }
        per_agent.get_mut(agent).ok_or(Error::UnknownAgent(agent))?.push(node);
    }
    Ok(per_agent)
}

/// Optimal closed tour from node 0 over a square cost matrix.
///
/// Returns the visiting order of nodes `1..len` and the tour cost.
pub fn held_karp(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if n > HELD_KARP_MAX_NODES {
        return Err(Error::Size {
            solver: "held_karp",
            detail: format!("{n} nodes exceed the limit of {HELD_KARP_MAX_NODES}"),
        });
    }
    if cost.iter().any(|row| row.len() != n) {
        return Err(Error::Contract("cost matrix is not square".into()));
    }
    if n <= 1 {
        return Ok((Vec::new(), 0.0));
    }
    let k = n - 1;
    let full = (1usize << k) - 1;
    let mut dp = vec![f64::INFINITY; (1 << k) * k];
    let mut parent = vec![usize::MAX; (1 << k) * k];
    for j in 0..k {
        dp[(1 << j) * k + j] = cost[0][j + 1];
    }
    for mask in 1..=full {
        for last in 0..k {
            let here = dp[mask * k + last];
            if mask & (1 << last) == 0 || !here.is_finite() {
                continue;
            }
            for next in 0..k {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let to = mask | (1 << next);
                let cand = here + cost[last + 1][next + 1];
                if cand < dp[to * k + next] {
                    dp[to * k + next] = cand;
                    parent[to * k + next] = last;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut last = 0;
    for j in 0..k {
        let c = dp[full * k + j] + cost[j + 1][0];
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut order = Vec::with_capacity(k);
    let mut mask = full;
    loop {
        order.push(last + 1);
        let p = parent[mask * k + last];
        mask &= !(1 << last);
        if p == usize::MAX {
            break;
        }
        last = p;
    }
    order.reverse();
    Ok((order, best))
}

fn cost_matrix(problem: &RoutingProblem, agent: usize, nodes: &[NodeId]) -> Result<Vec<Vec<f64>>> {
    nodes
        .iter()
        .map(|&a| nodes.iter().map(|&b| problem.edge_cost(agent, a, b)).collect())
        .collect()
}

/// Optimal route of `agent` over `customers`.
pub fn optimal_route(problem: &RoutingProblem, agent: usize, customers: &[NodeId]) -> Result<(Route, f64)> {
    let depot = problem.depot(agent);
    let mut nodes = vec![depot];
    nodes.extend_from_slice(customers);
    let (order, cost) = held_karp(&cost_matrix(problem, agent, &nodes)?)?;
    Ok((Route::new(agent, depot, order.into_iter().map(|i| nodes[i])), cost))
}

/// Result of the exact multi-vehicle oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactSolution {
    pub assignment: Assignment,
    pub state: GlobalState,
    pub team_cost: f64,
}

/// Minimum team average cost over every assignment of customers to agents,
/// each agent driving its optimal tour. Empty agents cost zero.
pub fn exact_mvrp(problem: &RoutingProblem) -> Result<ExactSolution> {
    let n = problem.num_agents();
    let k = problem.num_customers();
    let partitions = (n as f64).powi(k as i32);
    if partitions > PARTITION_LIMIT || k + 1 > HELD_KARP_MAX_NODES {
        return Err(Error::Size {
            solver: "exact_mvrp",
            detail: format!("{n} agents and {k} customers give {partitions} assignments"),
        });
    }
    let customers: Vec<NodeId> = problem.customer_ids().collect();
    let subsets = 1usize << k;
    // Optimal closed-tour cost of every customer subset, per agent.
    let mut tour = Vec::with_capacity(n);
    for agent in 0..n {
        tour.push(subset_tour_costs(problem, agent, &customers)?);
    }
    // best[i][mask]: cheapest way for agents 0..=i to cover exactly `mask`.
    let mut best = vec![tour[0].clone()];
    let mut choice = vec![(0..subsets).collect::<Vec<_>>()];
    for agent in 1..n {
        let prev = &best[agent - 1];
        let mut cur = vec![f64::INFINITY; subsets];
        let mut pick = vec![0usize; subsets];
        for mask in 0..subsets {
            // Submasks in descending order, empty set last.
            let mut sub = mask;
            loop {
                let c = prev[mask & !sub] + tour[agent][sub];
                if c < cur[mask] {
                    cur[mask] = c;
                    pick[mask] = sub;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
        best.push(cur);
        choice.push(pick);
    }
    let mut mask = subsets - 1;
    let mut sets = vec![0usize; n];
    for agent in (0..n).rev() {
        let sub = choice[agent][mask];
        sets[agent] = sub;
        mask &= !sub;
    }
    let mut assignment = Assignment::new();
    let mut routes = Vec::with_capacity(n);
    for (agent, &set) in sets.iter().enumerate() {
        let members: Vec<NodeId> = (0..k).filter(|&c| set & (1 << c) != 0).map(|c| customers[c]).collect();
        for &c in &members {
            assignment.insert(c, agent);
        }
        routes.push(optimal_route(problem, agent, &members)?.0);
    }
    let state = GlobalState::new(routes, Pool::new());
    let team_cost = problem.team_average_cost(&state)?;
    Ok(ExactSolution {
        assignment,
        state,
        team_cost,
    })
}

fn subset_tour_costs(problem: &RoutingProblem, agent: usize, customers: &[NodeId]) -> Result<Vec<f64>> {
    let k = customers.len();
    let depot = problem.depot(agent);
    let mut nodes = customers.to_vec();
    nodes.push(depot);
    let c = cost_matrix(problem, agent, &nodes)?;
    let subsets = 1usize << k;
    // path[mask * k + last]: cheapest depot -> ... -> last path visiting mask.
    let mut path = vec![f64::INFINITY; subsets * k];
    for j in 0..k {
        path[(1 << j) * k + j] = c[k][j];
    }
    let mut out = vec![0.0; subsets];
    for mask in 1..subsets {
        let mut closed = f64::INFINITY;
        for last in 0..k {
            let here = path[mask * k + last];
            if mask & (1 << last) == 0 || !here.is_finite() {
                continue;
            }
            closed = closed.min(here + c[last][k]);
            for next in 0..k {
                if mask & (1 << next) == 0 {
                    let slot = &mut path[(mask | (1 << next)) * k + next];
                    *slot = slot.min(here + c[last][next]);
                }
            }
        }
        out[mask] = closed;
    }
    Ok(out)
}

/// Nearest-neighbour tour of `agent` from its depot. Ties go to the lowest
/// node id.
pub fn nearest_neighbour_route(problem: &RoutingProblem, agent: usize, customers: &[NodeId]) -> Result<Route> {
    let depot = problem.depot(agent);
    let mut left: Vec<NodeId> = customers.to_vec();
    left.sort();
    let mut order = Vec::with_capacity(left.len());
    let mut here = depot;
    while !left.is_empty() {
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (i, &c) in left.iter().enumerate() {
            let d = problem.edge_cost(agent, here, c)?;
            if d < best_cost {
                best_cost = d;
                best = i;
            }
        }
        here = left.remove(best);
        order.push(here);
    }
    Ok(Route::new(agent, depot, order))
}

/// First-improvement 2-opt in index order until no move improves the cost.
pub fn two_opt(problem: &RoutingProblem, route: &Route) -> Result<Route> {
    let agent = route.agent();
    let mut seq = route.sequence().to_vec();
    let cost = |a: NodeId, b: NodeId| problem.edge_cost(agent, a, b);
    'scan: loop {
        for i in 1..seq.len().saturating_sub(2) {
            for j in i + 1..seq.len() - 1 {
                let delta = cost(seq[i - 1], seq[j])? + cost(seq[i], seq[j + 1])?
                    - cost(seq[i - 1], seq[i])?
                    - cost(seq[j], seq[j + 1])?;
                if delta < -IMPROVEMENT_EPS {
                    seq[i..=j].reverse();
                    continue 'scan;
                }
            }
        }
        break;
    }
    Ok(Route::from_sequence(agent, seq))
}

/// Nearest-neighbour construction followed by 2-opt, per agent.
pub fn nn_2opt(problem: &RoutingProblem, assignment: &Assignment) -> Result<GlobalState> {
    let routes = customers_by_agent(problem, assignment)?
        .iter()
        .enumerate()
        .map(|(agent, cs)| two_opt(problem, &nearest_neighbour_route(problem, agent, cs)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalState::new(routes, Pool::new()))
}

/// Non-collaborative reference: every agent solves its own TSP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerAgentTsp {
    pub average_cost: f64,
    pub agent_costs: Vec<f64>,
    /// True when some agent had too many customers for the exact solver and
    /// fell back to the heuristic.
    pub heuristic: bool,
}

pub fn per_agent_tsp(problem: &RoutingProblem, assignment: &Assignment) -> Result<PerAgentTsp> {
    let mut heuristic = false;
    let mut agent_costs = Vec::with_capacity(problem.num_agents());
    for (agent, cs) in customers_by_agent(problem, assignment)?.iter().enumerate() {
        let cost = if cs.len() < HELD_KARP_MAX_NODES {
            optimal_route(problem, agent, cs)?.1
        } else {
            heuristic = true;
            problem.route_cost(&two_opt(problem, &nearest_neighbour_route(problem, agent, cs)?)?)?
        };
        agent_costs.push(cost);
    }
    Ok(PerAgentTsp {
        average_cost: agent_costs.iter().sum::<f64>() / problem.num_agents() as f64,
        agent_costs,
        heuristic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_tour(cost: &[Vec<f64>]) -> f64 {
        (1..cost.len())
            .permutations(cost.len() - 1)
            .map(|p| {
                let mut total = cost[0][p[0]] + cost[*p.last().unwrap()][0];
                for w in p.windows(2) {
                    total += cost[w[0]][w[1]];
                }
                total
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn random_problem(rng: &mut ChaCha8Rng, k: usize, n: usize) -> RoutingProblem {
        let mut pt = || [rng.random::<f64>(), rng.random::<f64>()];
        let customers = (0..k).map(|_| pt()).collect();
        let depots = (0..n).map(|_| pt()).collect();
        let velocities = (0..n).map(|_| rng.random_range(0.95..=1.0)).collect();
        RoutingProblem::new(customers, depots, velocities).unwrap()
    }

    #[test]
    fn square_perimeter() {
        let pts: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let cost: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| (a[0] - b[0]).hypot(a[1] - b[1])).collect())
            .collect();
        let (order, c) = held_karp(&cost).unwrap();
        assert!((c - 4.0).abs() < 1e-12);
        assert_eq!(order.len(), 3);
    }

    #[test]
    fn held_karp_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 7, 1);
            let nodes: Vec<NodeId> = std::iter::once(p.depot(0)).chain(p.customer_ids()).collect();
            let m = cost_matrix(&p, 0, &nodes).unwrap();
            let (order, c) = held_karp(&m).unwrap();
            assert!((c - brute_force_tour(&m)).abs() < 1e-12);
            let route = Route::new(0, p.depot(0), order.iter().map(|&i| nodes[i]));
            assert!((p.route_cost(&route).unwrap() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn held_karp_size_limit() {
        let m = vec![vec![0.0; 17]; 17];
        assert!(matches!(held_karp(&m), Err(Error::Size { .. })));
    }

    #[test]
    fn two_customer_tour() {
        let p = RoutingProblem::new(vec![[0.5, 0.0], [0.5, 0.5]], vec![[0.0, 0.0]], vec![1.0]).unwrap();
        let (_, c) = optimal_route(&p, 0, &[NodeId(0), NodeId(1)]).unwrap();
        let expected = 0.5 + 0.5 + 0.5f64.hypot(0.5);
        assert!((c - expected).abs() < 1e-12);
    }

    #[test]
    fn single_agent_oracle_is_held_karp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 6, 1);
        let all: Vec<NodeId> = p.customer_ids().collect();
        let (_, hk) = optimal_route(&p, 0, &all).unwrap();
        let exact = exact_mvrp(&p).unwrap();
        assert!((exact.team_cost - hk).abs() < 1e-12);
    }

    #[test]
    fn customer_at_depot_goes_to_that_agent() {
        let p = RoutingProblem::new(
            vec![[0.9, 0.9], [0.05, 0.0], [0.0, 0.05]],
            vec![[0.0, 0.0], [0.9, 0.9]],
            vec![1.0, 1.0],
        )
        .unwrap();
        let exact = exact_mvrp(&p).unwrap();
        assert_eq!(exact.assignment[&NodeId(0)], 1);
    }

    #[test]
    fn exact_matches_assignment_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let p = random_problem(&mut rng, 6, 2);
            let ids: Vec<NodeId> = p.customer_ids().collect();
            let mut best = f64::INFINITY;
            for bits in 0..64u32 {
                let mut sets = [Vec::new(), Vec::new()];
                for (c, &id) in ids.iter().enumerate() {
                    sets[((bits >> c) & 1) as usize].push(id);
                }
                let total: f64 = (0..2).map(|a| optimal_route(&p, a, &sets[a]).unwrap().1).sum();
                best = best.min(total / 2.0);
            }
            let exact = exact_mvrp(&p).unwrap();
            assert!((exact.team_cost - best).abs() < 1e-12);
            assert!(p.validate_state(&exact.state).is_empty());
        }
    }

    #[test]
    fn exact_size_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 15, 3);
        assert!(matches!(exact_mvrp(&p), Err(Error::Size { .. })));
    }

    #[test]
    fn collinear_nearest_neighbour() {
        let p = RoutingProblem::new(vec![[0.5, 0.0], [0.1, 0.0], [0.2, 0.0]], vec![[0.0, 0.0]], vec![1.0]).unwrap();
        let r = nearest_neighbour_route(&p, 0, &[NodeId(0), NodeId(1), NodeId(2)]).unwrap();
        assert_eq!(r.customers(), &[NodeId(1), NodeId(2), NodeId(0)]);
        assert_eq!(two_opt(&p, &r).unwrap(), r);
    }

    #[test]
    fn two_opt_uncrosses() {
        // Depot at the origin, square corners visited in a crossing order.
        let p = RoutingProblem::new(
            vec![[0.2, 0.2], [0.8, 0.8], [0.8, 0.2], [0.2, 0.8]],
            vec![[0.0, 0.0]],
            vec![1.0],
        )
        .unwrap();
        let crossing = Route::new(0, NodeId(4), [NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
        let fixed = two_opt(&p, &crossing).unwrap();
        let before = p.route_cost(&crossing).unwrap();
        let after = p.route_cost(&fixed).unwrap();
        assert!(after < before - 1e-9);
        let (_, opt) = optimal_route(&p, 0, &[NodeId(0), NodeId(1), NodeId(2), NodeId(3)]).unwrap();
        assert!((after - opt).abs() < 1e-12);
    }

    #[test]
    fn held_karp_never_worse_than_heuristic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let p = random_problem(&mut rng, 8, 1);
            let all: Vec<NodeId> = p.customer_ids().collect();
            let heur = p
                .route_cost(&two_opt(&p, &nearest_neighbour_route(&p, 0, &all).unwrap()).unwrap())
                .unwrap();
            assert!(optimal_route(&p, 0, &all).unwrap().1 <= heur + 1e-12);
        }
    }

    #[test]
    fn per_agent_examples() {
        let p = RoutingProblem::new(
            vec![[0.3, 0.5], [0.7, 0.5]],
            vec![[0.1, 0.5], [0.9, 0.5]],
            vec![1.0, 1.0],
        )
        .unwrap();
        let mirror: Assignment = [(NodeId(0), 0), (NodeId(1), 1)].into_iter().collect();
        let r = per_agent_tsp(&p, &mirror).unwrap();
        assert!((r.agent_costs[0] - r.agent_costs[1]).abs() < 1e-12);
        assert!(!r.heuristic);
        let lopsided: Assignment = [(NodeId(0), 0), (NodeId(1), 0)].into_iter().collect();
        let r = per_agent_tsp(&p, &lopsided).unwrap();
        assert_eq!(r.agent_costs[1], 0.0);
        assert!((r.average_cost - r.agent_costs[0] / 2.0).abs() < 1e-15);
    }
}
