//! Raw node features fed to the encoders.

use crate::error::{Error, Result};
use crate::game::Rule;
use crate::routing::{NodeId, Route, RoutingProblem};

/// `(x, y, pred_x, pred_y, cost(pred -> node))` of a route entry.
pub type NodeFeatures = [f64; 5];

/// Features of the route entry at `position`. The leading depot is its own
/// predecessor, with cost zero.
pub fn node_input_features(problem: &RoutingProblem, route: &Route, position: usize) -> Result<NodeFeatures> {
    let seq = route.sequence();
    let node = *seq
        .get(position)
        .ok_or_else(|| Error::Contract(format!("position {position} outside route of length {}", seq.len())))?;
    let pred = if position == 0 { node } else { seq[position - 1] };
    features_with_predecessor(problem, route.agent(), node, pred)
}

pub(crate) fn features_with_predecessor(
    problem: &RoutingProblem,
    agent: usize,
    node: NodeId,
    pred: NodeId,
) -> Result<NodeFeatures> {
    let [x, y] = problem.coords(node)?;
    let [px, py] = problem.coords(pred)?;
    let cost = if node == pred { 0.0 } else { problem.edge_cost(agent, pred, node)? };
    Ok([x, y, px, py, cost])
}

/// Features of every entry of `route`, trailing depot included.
pub fn route_features(problem: &RoutingProblem, route: &Route) -> Result<Vec<NodeFeatures>> {
    (0..route.len()).map(|p| node_input_features(problem, route, p)).collect()
}

/// Post-move features of the three nodes whose predecessor a move can
/// change. A slot is `None` when the node does not exist for this move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FictitiousFeatures {
    /// The region node after insertion.
    pub region: Option<NodeFeatures>,
    /// The node that followed the region before the move.
    pub region_successor: Option<NodeFeatures>,
    /// The node that follows the region after the move.
    pub rule_successor: Option<NodeFeatures>,
}

impl FictitiousFeatures {
    pub fn slots(&self) -> [Option<NodeFeatures>; 3] {
        [self.region, self.region_successor, self.rule_successor]
    }
}

/// Previews the move `(region, rule)` on the agent's own route.
///
/// `region` is either a customer of `route` or a pool node. Moving to the
/// pool sentinel leaves the region and rule-successor slots empty.
pub fn fictitious_features(
    problem: &RoutingProblem,
    route: &Route,
    region: NodeId,
    rule: Rule,
) -> Result<FictitiousFeatures> {
    let agent = route.agent();
    if rule == Rule::After(region) {
        return Err(Error::illegal(agent, format!("rule equals region {region}")));
    }
    let seq = route.sequence();
    let own_pos = route.position(region).filter(|&p| p > 0);
    let mut post: Vec<NodeId> = seq.to_vec();
    let old_successor = own_pos.map(|p| seq[p + 1]);
    if let Some(p) = own_pos {
        post.remove(p);
    }
    let at = match rule {
        Rule::Pool => None,
        Rule::After(anchor) => {
            let idx = post
                .iter()
                .position(|&n| n == anchor)
                .filter(|&i| i + 1 < post.len())
                .ok_or_else(|| Error::illegal(agent, format!("rule node {anchor} is not in the route")))?;
            post.insert(idx + 1, region);
            Some(idx + 1)
        }
    };
    let features_at = |i: usize| features_with_predecessor(problem, agent, post[i], post[i - 1]);
    let position_of = |node: NodeId, skip_first: bool| {
        post.iter()
            .enumerate()
            .skip(usize::from(skip_first))
            .find(|(_, &n)| n == node)
            .map(|(i, _)| i)
    };

    let region_slot = at.map(features_at).transpose()?;
    let region_successor = match old_successor {
        None => None,
        Some(s) => {
            // The trailing depot is the last occurrence of the depot id.
            let idx = if s == route.depot() { Some(post.len() - 1) } else { position_of(s, true) };
            idx.map(features_at).transpose()?
        }
    };
    let rule_successor = at.map(|i| features_at(i + 1)).transpose()?;
    Ok(FictitiousFeatures {
        region: region_slot,
        region_successor,
        rule_successor,
    })
}
