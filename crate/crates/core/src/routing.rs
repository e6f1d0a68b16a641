//! Domain model for the multi-vehicle routing problem.
//!
//! Customers carry ids `0..k`, and the depot of agent `i` carries id `k + i`,
//! so depot ids are always disjoint from customer ids. Every agent travels
//! with its own velocity, which scales the Euclidean distance into a private
//! per-agent travel cost.
//!
//! States are plain values. A [`Route`] stores node ids only; coordinates
//! live in the [`RoutingProblem`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for cost comparisons.
pub const COST_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Customer,
    Depot(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_customer(&self) -> bool {
        matches!(self.kind, NodeKind::Customer)
    }
}

/// A routing instance: customers, one depot per agent and per-agent velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct RoutingProblem {
    nodes: Vec<Node>,
    customers: usize,
    velocities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    customers: Vec<[f64; 2]>,
    depots: Vec<[f64; 2]>,
    velocities: Vec<f64>,
}

impl TryFrom<RawProblem> for RoutingProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        RoutingProblem::new(raw.customers, raw.depots, raw.velocities)
    }
}

impl From<RoutingProblem> for RawProblem {
    fn from(p: RoutingProblem) -> Self {
        RawProblem {
            customers: p.customer_nodes().iter().map(|n| [n.x, n.y]).collect(),
            depots: p.depot_nodes().iter().map(|n| [n.x, n.y]).collect(),
            velocities: p.velocities,
        }
    }
}

impl RoutingProblem {
    /// Builds a problem from customer coordinates, depot coordinates (one per
    /// agent) and agent velocities.
    pub fn new(customers: Vec<[f64; 2]>, depots: Vec<[f64; 2]>, velocities: Vec<f64>) -> Result<Self> {
        if depots.is_empty() {
            return Err(Error::Invariant("a problem needs at least one agent".into()));
        }
        if customers.is_empty() {
            return Err(Error::Invariant("a problem needs at least one customer".into()));
        }
        if depots.len() != velocities.len() {
            return Err(Error::Invariant(format!(
                "{} depots but {} velocities",
                depots.len(),
                velocities.len()
            )));
        }
        if let Some(v) = velocities.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Invariant(format!("velocity {v} is not strictly positive")));
        }
        let k = customers.len();
        let mut nodes = Vec::with_capacity(k + depots.len());
        let coords = customers
            .iter()
            .map(|c| (*c, NodeKind::Customer))
            .chain(depots.iter().enumerate().map(|(a, c)| (*c, NodeKind::Depot(a))));
        for (i, ([x, y], kind)) in coords.enumerate() {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::Invariant(format!(
                    "node {i} at ({x}, {y}) lies outside the unit square"
                )));
            }
            nodes.push(Node {
                id: NodeId(i as u32),
                x,
                y,
                kind,
            });
        }
        Ok(RoutingProblem {
            nodes,
            customers: k,
            velocities,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.velocities.len()
    }

    pub fn num_customers(&self) -> usize {
        self.customers
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn customer_nodes(&self) -> &[Node] {
        &self.nodes[..self.customers]
    }

    pub fn depot_nodes(&self) -> &[Node] {
        &self.nodes[self.customers..]
    }

    pub fn customer_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.customers as u32).map(NodeId)
    }

    pub fn depot(&self, agent: usize) -> NodeId {
        debug_assert!(agent < self.num_agents());
        NodeId((self.customers + agent) as u32)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.index()).ok_or(Error::UnknownNode(id))
    }

    pub fn is_customer(&self, id: NodeId) -> bool {
        id.index() < self.customers
    }

    pub fn coords(&self, id: NodeId) -> Result<[f64; 2]> {
        self.node(id).map(|n| [n.x, n.y])
    }

    /// Inverse-velocity-scaled Euclidean distance between `v` and `z` for `agent`.
    pub fn edge_cost(&self, agent: usize, v: NodeId, z: NodeId) -> Result<f64> {
        let eta = *self.velocities.get(agent).ok_or(Error::UnknownAgent(agent))?;
        let a = self.node(v)?;
        let b = self.node(z)?;
        Ok((a.x - b.x).hypot(a.y - b.y) / eta)
    }

    /// Sum of edge costs along `route` for its agent.
    pub fn route_cost(&self, route: &Route) -> Result<f64> {
        self.check_route(route)?;
        Ok(route
            .sequence()
            .windows(2)
            .map(|w| self.edge_cost(route.agent(), w[0], w[1]).expect("checked route"))
            .sum())
    }

    /// Mean route cost over agents. Pool members contribute nothing.
    pub fn team_average_cost(&self, state: &GlobalState) -> Result<f64> {
        if state.routes.len() != self.num_agents() {
            return Err(Error::Invariant(format!(
                "state has {} routes for {} agents",
                state.routes.len(),
                self.num_agents()
            )));
        }
        let mut total = 0.0;
        for route in &state.routes {
            total += self.route_cost(route)?;
        }
        Ok(total / self.num_agents() as f64)
    }

    /// Per-agent route costs in agent order.
    pub fn route_costs(&self, state: &GlobalState) -> Result<Vec<f64>> {
        state.routes.iter().map(|r| self.route_cost(r)).collect()
    }

    fn check_route(&self, route: &Route) -> Result<()> {
        let agent = route.agent();
        if agent >= self.num_agents() {
            return Err(Error::UnknownAgent(agent));
        }
        let depot = self.depot(agent);
        let seq = route.sequence();
        if seq.len() < 2 || seq[0] != depot || seq[seq.len() - 1] != depot {
            return Err(Error::Invariant(format!(
                "route of agent {agent} must start and end at depot {depot}"
            )));
        }
        let mut seen = BTreeSet::new();
        for &c in route.customers() {
            if !self.is_customer(c) {
                return Err(Error::Invariant(format!(
                    "route of agent {agent} visits non-customer node {c}"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::Invariant(format!(
                    "route of agent {agent} visits customer {c} twice"
                )));
            }
        }
        Ok(())
    }

    /// Reports every violated state invariant. An empty result means the
    /// state is structurally valid (it may still be infeasible).
    pub fn validate_state(&self, state: &GlobalState) -> Vec<Violation> {
        let mut out = Vec::new();
        if state.routes.len() != self.num_agents() {
            out.push(Violation::RouteCount {
                expected: self.num_agents(),
                found: state.routes.len(),
            });
        }
        let mut owner: HashMap<NodeId, Location> = HashMap::new();
        for (slot, route) in state.routes.iter().enumerate() {
            if route.agent() != slot {
                out.push(Violation::MisplacedRoute { slot, agent: route.agent() });
                continue;
            }
            if slot >= self.num_agents() {
                continue;
            }
            let depot = self.depot(slot);
            let seq = route.sequence();
            if seq.len() < 2 || seq[0] != depot || seq[seq.len() - 1] != depot {
                out.push(Violation::DepotEndpoints { agent: slot });
                continue;
            }
            for &c in route.customers() {
                if !self.is_customer(c) {
                    out.push(Violation::NotACustomer { node: c });
                } else if owner.insert(c, Location::Route).is_some() {
                    out.push(Violation::DuplicateNode { node: c });
                }
            }
        }
        for &c in &state.pool {
            if !self.is_customer(c) {
                out.push(Violation::NotACustomer { node: c });
            } else if owner.insert(c, Location::Pool).is_some() {
                out.push(Violation::DuplicateNode { node: c });
            }
        }
        for c in self.customer_ids() {
            if !owner.contains_key(&c) {
                out.push(Violation::UnassignedNode { node: c });
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Location {
    Route,
    Pool,
}

/// One violated [`GlobalState`] invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RouteCount { expected: usize, found: usize },
    MisplacedRoute { slot: usize, agent: usize },
    DepotEndpoints { agent: usize },
    NotACustomer { node: NodeId },
    DuplicateNode { node: NodeId },
    UnassignedNode { node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RouteCount { expected, found } => {
                write!(f, "expected {expected} routes, found {found}")
            }
            Violation::MisplacedRoute { slot, agent } => {
                write!(f, "route slot {slot} holds the route of agent {agent}")
            }
            Violation::DepotEndpoints { agent } => {
                write!(f, "route of agent {agent} does not start and end at its depot")
            }
            Violation::NotACustomer { node } => write!(f, "non-customer node {node} in route interior or pool"),
            Violation::DuplicateNode { node } => write!(f, "duplicate node {node}"),
            Violation::UnassignedNode { node } => write!(f, "unassigned node {node}"),
        }
    }
}

/// The local state of one agent: its depot, the visited customers in order,
/// and its depot again.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    agent: usize,
    sequence: Vec<NodeId>,
}

impl Route {
    pub fn new(agent: usize, depot: NodeId, customers: impl IntoIterator<Item = NodeId>) -> Self {
        let mut sequence = vec![depot];
        sequence.extend(customers);
        sequence.push(depot);
        Route { agent, sequence }
    }

    /// Wraps a raw sequence without checking it; use
    /// [`RoutingProblem::validate_state`] to verify.
    pub fn from_sequence(agent: usize, sequence: Vec<NodeId>) -> Self {
        Route { agent, sequence }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn depot(&self) -> NodeId {
        self.sequence[0]
    }

    pub fn sequence(&self) -> &[NodeId] {
        &self.sequence
    }

    /// Interior entries (the visited customers).
    pub fn customers(&self) -> &[NodeId] {
        let n = self.sequence.len();
        if n < 2 {
            return &[];
        }
        &self.sequence[1..n - 1]
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.customers().is_empty()
    }

    /// Position of a customer in the sequence, or 0 for the depot.
    pub fn position(&self, node: NodeId) -> Option<usize> {
        if node == self.depot() {
            return Some(0);
        }
        self.customers().iter().position(|&c| c == node).map(|p| p + 1)
    }

    pub fn contains_customer(&self, node: NodeId) -> bool {
        self.customers().contains(&node)
    }

    pub(crate) fn sequence_mut(&mut self) -> &mut Vec<NodeId> {
        &mut self.sequence
    }
}

/// Shared pool of currently unvisited customers.
pub type Pool = BTreeSet<NodeId>;

/// All agent routes plus the pool.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalState {
    pub routes: Vec<Route>,
    pub pool: Pool,
}

impl GlobalState {
    pub fn new(routes: Vec<Route>, pool: Pool) -> Self {
        GlobalState { routes, pool }
    }

    /// Feasible iff the pool is empty.
    pub fn is_feasible(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.routes.len()
    }

    pub fn route(&self, agent: usize) -> Result<&Route> {
        self.routes.get(agent).ok_or(Error::UnknownAgent(agent))
    }

    /// The customer-to-agent map of the routes (pool members are absent).
    pub fn assignment(&self) -> HashMap<NodeId, usize> {
        self.routes
            .iter()
            .flat_map(|r| r.customers().iter().map(move |&c| (c, r.agent())))
            .collect()
    }
}
