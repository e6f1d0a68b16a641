//! The learned components: local state encoder, pool encoder, rule policy
//! and global action scorer.
//!
//! All four share one [`ParamSet`]. A forward pass starts by binding the
//! parameters to a [`Tape`] with [`Model::bind`]; the returned [`Bound`]
//! exposes every model as a method.
//!
//! The rule policy only ever sees the acting agent's own route, its own
//! velocity (through the cost feature) and the pool encoding. The scorer
//! sees every agent and is used only while training.

mod features;

pub use features::{fictitious_features, node_input_features, route_features, FictitiousFeatures, NodeFeatures};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::game::{LocalAction, Rule};
use crate::routing::{GlobalState, NodeId, Pool, Route, RoutingProblem};

const NODE_FEATURES: usize = 5;
const POOL_FEATURES: usize = 2;
const FICTITIOUS_SLOTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Recurrent width per direction; node embeddings are twice as wide.
    pub hidden: usize,
    pub attention: usize,
    pub scorer_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            attention: 64,
            scorer_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn embedding(&self) -> usize {
        2 * self.hidden
    }

    pub fn scorer_input(&self) -> usize {
        4 * self.embedding() + self.attention
    }
}

#[derive(Clone, Copy, Debug)]
struct Lstm {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Indices {
    in_w: usize,
    in_b: usize,
    forward: Lstm,
    backward: Lstm,
    pool_in_w: usize,
    pool_in_b: usize,
    pool_q: usize,
    pool_k: usize,
    pool_v: usize,
    pool_o: usize,
    pool_o_b: usize,
    sentinel: usize,
    rule_q: usize,
    rule_k: usize,
    rule_b: usize,
    rule_v: usize,
    fict_w: [usize; FICTITIOUS_SLOTS],
    fict_b: [usize; FICTITIOUS_SLOTS],
    scorer: [(usize, usize); 3],
}

/// Parameters of all four models.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    ix: Indices,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Model {
    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`, forget-gate bias 1.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let h = config.hidden;
        let e = config.embedding();
        let a = config.attention;
        let s = config.scorer_hidden;
        let mut p = ParamSet::new();
        let in_w = p.push_uniform("local.in.w", NODE_FEATURES, h, NODE_FEATURES, rng);
        let in_b = p.push_uniform("local.in.b", 1, h, NODE_FEATURES, rng);
        let mut lstm = |p: &mut ParamSet, dir: &str| {
            let wx = p.push_uniform(format!("local.{dir}.wx"), h, 4 * h, h, rng);
            let wh = p.push_uniform(format!("local.{dir}.wh"), h, 4 * h, h, rng);
            let mut bias = Array::zeros(1, 4 * h);
            for v in &mut bias.data_mut()[h..2 * h] {
                *v = 1.0;
            }
            let b = p.push(format!("local.{dir}.b"), bias);
            Lstm { wx, wh, b }
        };
        let forward = lstm(&mut p, "fwd");
        let backward = lstm(&mut p, "bwd");
        let pool_in_w = p.push_uniform("pool.in.w", POOL_FEATURES, e, POOL_FEATURES, rng);
        let pool_in_b = p.push_uniform("pool.in.b", 1, e, POOL_FEATURES, rng);
        let pool_q = p.push_uniform("pool.q", e, a, e, rng);
        let pool_k = p.push_uniform("pool.k", e, a, e, rng);
        let pool_v = p.push_uniform("pool.v", e, a, e, rng);
        let pool_o = p.push_uniform("pool.o.w", a, e, a, rng);
        let pool_o_b = p.push_uniform("pool.o.b", 1, e, a, rng);
        let sentinel = p.push_uniform("pool.sentinel", 1, e, e, rng);
        let rule_q = p.push_uniform("rule.q", e, a, e, rng);
        let rule_k = p.push_uniform("rule.k", e, a, e, rng);
        let rule_b = p.push_uniform("rule.b", 1, a, a, rng);
        let rule_v = p.push_uniform("rule.v", a, 1, a, rng);
        let mut fict_w = [0; FICTITIOUS_SLOTS];
        let mut fict_b = [0; FICTITIOUS_SLOTS];
        for slot in 0..FICTITIOUS_SLOTS {
            fict_w[slot] = p.push_uniform(format!("rule.fict{slot}.w"), NODE_FEATURES, a, NODE_FEATURES, rng);
            fict_b[slot] = p.push_uniform(format!("rule.fict{slot}.b"), 1, a, NODE_FEATURES, rng);
        }
        let input = config.scorer_input();
        let scorer = [
            (
                p.push_uniform("scorer.l1.w", input, s, input, rng),
                p.push_uniform("scorer.l1.b", 1, s, input, rng),
            ),
            (
                p.push_uniform("scorer.l2.w", s, s, s, rng),
                p.push_uniform("scorer.l2.b", 1, s, s, rng),
            ),
            (
                p.push_uniform("scorer.l3.w", s, 1, s, rng),
                p.push_uniform("scorer.l3.b", 1, 1, s, rng),
            ),
        ];
        Model {
            config,
            params: p,
            ix: Indices {
                in_w,
                in_b,
                forward,
                backward,
                pool_in_w,
                pool_in_b,
                pool_q,
                pool_k,
                pool_v,
                pool_o,
                pool_o_b,
                sentinel,
                rule_q,
                rule_k,
                rule_b,
                rule_v,
                fict_w,
                fict_b,
                scorer,
            },
        }
    }

    /// Rebuilds a model from stored arrays, checking names and shapes
    /// against a freshly laid out model of the same configuration.
    pub fn from_params(config: ModelConfig, names: &[String], arrays: Vec<Array>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(config, &mut rng);
        if names != model.params.names() || arrays.len() != model.params.len() {
            return Err(Error::Version {
                expected: format!("{} parameter arrays {:?}", model.params.len(), model.params.names()),
                found: format!("{} parameter arrays {:?}", arrays.len(), names),
            });
        }
        for (slot, a) in model.params.arrays_mut().iter_mut().zip(arrays) {
            if slot.shape() != a.shape() {
                return Err(Error::Shape {
                    op: "load",
                    left: slot.shape().to_vec(),
                    right: a.shape().to_vec(),
                });
            }
            *slot = a;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind<'m, 't>(&'m self, tape: &'t Tape) -> Bound<'m, 't> {
        Bound {
            model: self,
            tape,
            vars: self.params.bind(tape),
        }
    }

    /// Binds caller-supplied variables in place of the stored parameters,
    /// e.g. perturbed copies for finite-difference checks.
    pub fn bind_vars<'m, 't>(&'m self, tape: &'t Tape, vars: Vec<Var<'t>>) -> Result<Bound<'m, 't>> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter variables, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        for (v, a) in vars.iter().zip(self.params.arrays()) {
            if v.shape() != a.shape() {
                return Err(Error::Shape {
                    op: "bind_vars",
                    left: a.shape().to_vec(),
                    right: v.shape(),
                });
            }
        }
        Ok(Bound { model: self, tape, vars })
    }
}

/// Node embeddings of one agent's route.
#[derive(Clone, Copy, Debug)]
pub struct RouteEncoding<'t> {
    /// One `2H` row per route entry.
    pub nodes: Var<'t>,
    pub mean: Var<'t>,
}

/// Pool embeddings plus the sentinel.
#[derive(Clone, Debug)]
pub struct PoolEncoding<'t> {
    /// Pool members in ascending id order.
    pub members: Vec<NodeId>,
    pub nodes: Option<Var<'t>>,
    pub sentinel: Var<'t>,
    /// Mean over member embeddings and the sentinel.
    pub summary: Var<'t>,
}

impl<'t> PoolEncoding<'t> {
    pub fn embedding_of(&self, node: NodeId) -> Result<Var<'t>> {
        let i = self.members.binary_search(&node).map_err(|_| Error::UnknownNode(node))?;
        self.nodes.expect("nonempty pool").row(i)
    }
}

#[derive(Clone, Debug)]
pub struct StateEncoding<'t> {
    pub routes: Vec<RouteEncoding<'t>>,
    pub pool: PoolEncoding<'t>,
}

/// Rule distribution of one agent for one region.
#[derive(Clone, Debug)]
pub struct RulePolicy<'t> {
    pub region: NodeId,
    pub candidates: Vec<Rule>,
    pub region_embedding: Var<'t>,
    /// `C x 2H`, one row per candidate.
    pub rule_embeddings: Var<'t>,
    /// `C x A`, summed fictitious projections per candidate.
    pub fictitious: Var<'t>,
    /// `1 x C` unnormalised scores.
    pub logits: Var<'t>,
}

impl<'t> RulePolicy<'t> {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.value().softmax_rows().into_data()
    }

    pub fn log_probabilities(&self) -> Var<'t> {
        self.logits.log_softmax_rows()
    }

    pub fn index_of(&self, rule: Rule) -> Option<usize> {
        self.candidates.iter().position(|&r| r == rule)
    }

    /// Highest-probability candidate; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(self.logits.value().data())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One agent's entry in a joint action presented to the scorer.
#[derive(Clone, Copy, Debug)]
pub enum ScoredChoice<'p, 't> {
    NoOp,
    Rule { policy: &'p RulePolicy<'t>, index: usize },
}

/// Parameters bound to a tape.
pub struct Bound<'m, 't> {
    model: &'m Model,
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'m, 't> Bound<'m, 't> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    fn p(&self, i: usize) -> Var<'t> {
        self.vars[i]
    }

    fn features(&self, rows: &[NodeFeatures]) -> Var<'t> {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        self.tape.constant(Array::new(rows.len(), NODE_FEATURES, data).expect("shape"))
    }

    /// Bidirectional recurrent encoding of one route.
    pub fn encode_route(&self, problem: &RoutingProblem, route: &Route) -> Result<RouteEncoding<'t>> {
        let feats = route_features(problem, route)?;
        self.encode_features(&feats)
    }

    pub fn encode_features(&self, feats: &[NodeFeatures]) -> Result<RouteEncoding<'t>> {
        let ix = &self.model.ix;
        let x = self.features(feats).matmul(self.p(ix.in_w))?.add(self.p(ix.in_b))?.tanh();
        let fwd = self.lstm(x, ix.forward, false)?;
        let bwd = self.lstm(x, ix.backward, true)?;
        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| self.tape.concat_cols(&[*f, *b]))
            .collect::<Result<Vec<_>>>()?;
        let nodes = self.tape.concat_rows(&rows)?;
        Ok(RouteEncoding {
            nodes,
            mean: nodes.mean_rows(),
        })
    }

    fn lstm(&self, x: Var<'t>, cell: Lstm, reverse: bool) -> Result<Vec<Var<'t>>> {
        let h_width = self.model.config.hidden;
        let len = x.rows();
        let gates_x = x.matmul(self.p(cell.wx))?.add(self.p(cell.b))?;
        let wh = self.p(cell.wh);
        let mut h = self.tape.constant(Array::zeros(1, h_width));
        let mut c = self.tape.constant(Array::zeros(1, h_width));
        let mut out = vec![h; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let g = gates_x.row(t)?.add(h.matmul(wh)?)?;
            let i = g.slice_cols(0, h_width)?.sigmoid();
            let f = g.slice_cols(h_width, h_width)?.sigmoid();
            let o = g.slice_cols(2 * h_width, h_width)?.sigmoid();
            let cand = g.slice_cols(3 * h_width, h_width)?.tanh();
            c = f.mul(c)?.add(i.mul(cand)?)?;
            h = o.mul(c.tanh())?;
            out[t] = h;
        }
        Ok(out)
    }

    /// Self-attention over pool coordinates. Rows come back in the order of
    /// `nodes`; internally members are processed in ascending id order so
    /// the result does not depend on the input order at all.
    pub fn encode_pool(&self, problem: &RoutingProblem, nodes: &[NodeId]) -> Result<(Vec<Var<'t>>, PoolEncoding<'t>)> {
        let pool: Pool = nodes.iter().copied().collect();
        let enc = self.encode_pool_set(problem, &pool)?;
        let rows = nodes.iter().map(|&n| enc.embedding_of(n)).collect::<Result<Vec<_>>>()?;
        Ok((rows, enc))
    }

    pub fn encode_pool_set(&self, problem: &RoutingProblem, pool: &Pool) -> Result<PoolEncoding<'t>> {
        let ix = &self.model.ix;
        let sentinel = self.p(ix.sentinel);
        let members: Vec<NodeId> = pool.iter().copied().collect();
        if members.is_empty() {
            return Ok(PoolEncoding {
                members,
                nodes: None,
                sentinel,
                summary: sentinel,
            });
        }
        let mut data = Vec::with_capacity(members.len() * POOL_FEATURES);
        for &m in &members {
            data.extend(problem.coords(m)?);
        }
        let x = self.tape.constant(Array::new(members.len(), POOL_FEATURES, data)?);
        let h = x.matmul(self.p(ix.pool_in_w))?.add(self.p(ix.pool_in_b))?.tanh();
        let q = h.matmul(self.p(ix.pool_q))?;
        let k = h.matmul(self.p(ix.pool_k))?;
        let v = h.matmul(self.p(ix.pool_v))?;
        let scale = 1.0 / (self.model.config.attention as f64).sqrt();
        let weights = q.matmul(k.transpose())?.scale(scale).softmax_rows();
        let attended = weights.matmul(v)?.matmul(self.p(ix.pool_o))?.add(self.p(ix.pool_o_b))?;
        let nodes = h.add(attended)?;
        let summary = self.tape.concat_rows(&[nodes, sentinel])?.mean_rows();
        Ok(PoolEncoding {
            members,
            nodes: Some(nodes),
            sentinel,
            summary,
        })
    }

    pub fn encode_state(&self, problem: &RoutingProblem, state: &GlobalState) -> Result<StateEncoding<'t>> {
        let routes = state
            .routes
            .iter()
            .map(|r| self.encode_route(problem, r))
            .collect::<Result<Vec<_>>>()?;
        let pool = self.encode_pool_set(problem, &state.pool)?;
        Ok(StateEncoding { routes, pool })
    }

    /// Scores every rule candidate for moving `region` within the agent's
    /// own `route`. Inputs are agent-local: the route, its encoding, and
    /// the shared pool encoding.
    pub fn rule_policy(
        &self,
        problem: &RoutingProblem,
        route: &Route,
        encoding: &RouteEncoding<'t>,
        pool: &PoolEncoding<'t>,
        region: NodeId,
        candidates: &[Rule],
    ) -> Result<RulePolicy<'t>> {
        if candidates.is_empty() {
            return Err(Error::Contract("rule distribution over an empty candidate set".into()));
        }
        let ix = &self.model.ix;
        let a_width = self.model.config.attention;
        let region_embedding = match route.position(region).filter(|&p| p > 0) {
            Some(pos) => encoding.nodes.row(pos)?,
            None => pool.embedding_of(region)?,
        };
        let rows = candidates
            .iter()
            .map(|&rule| match rule {
                Rule::Pool => Ok(pool.sentinel),
                Rule::After(node) => {
                    let pos = route
                        .position(node)
                        .ok_or_else(|| Error::illegal(route.agent(), format!("rule node {node} not in route")))?;
                    encoding.nodes.row(pos)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let rule_embeddings = self.tape.concat_rows(&rows)?;

        let previews = candidates
            .iter()
            .map(|&rule| fictitious_features(problem, route, region, rule))
            .collect::<Result<Vec<_>>>()?;
        let c = candidates.len();
        let mut fictitious: Option<Var<'t>> = None;
        for slot in 0..FICTITIOUS_SLOTS {
            let mut feats = Vec::with_capacity(c * NODE_FEATURES);
            let mut mask = Vec::with_capacity(c * a_width);
            for preview in &previews {
                let f = preview.slots()[slot];
                feats.extend(f.unwrap_or([0.0; NODE_FEATURES]));
                mask.extend(std::iter::repeat_n(if f.is_some() { 1.0 } else { 0.0 }, a_width));
            }
            if mask.iter().all(|&m| m == 0.0) {
                continue;
            }
            let x = self.tape.constant(Array::new(c, NODE_FEATURES, feats)?);
            let m = self.tape.constant(Array::new(c, a_width, mask)?);
            let proj = x.matmul(self.p(ix.fict_w[slot]))?.add(self.p(ix.fict_b[slot]))?.tanh().mul(m)?;
            fictitious = Some(match fictitious {
                None => proj,
                Some(acc) => acc.add(proj)?,
            });
        }
        let fictitious = fictitious.unwrap_or_else(|| self.tape.constant(Array::zeros(c, a_width)));

        let query = region_embedding.matmul(self.p(ix.rule_q))?;
        let keys = rule_embeddings.matmul(self.p(ix.rule_k))?.add(fictitious)?;
        let hidden = keys.add(query)?.add(self.p(ix.rule_b))?.tanh();
        let logits = hidden.matmul(self.p(ix.rule_v))?.transpose();
        Ok(RulePolicy {
            region,
            candidates: candidates.to_vec(),
            region_embedding,
            rule_embeddings,
            fictitious,
            logits,
        })
    }

    /// Scores joint actions. `choices[z][i]` is agent `i`'s entry of
    /// candidate `z`; the result is a `Z x 1` column of Q-values.
    pub fn score(&self, state: &StateEncoding<'t>, choices: &[Vec<ScoredChoice<'_, 't>>]) -> Result<Var<'t>> {
        let e = self.model.config.embedding();
        let a = self.model.config.attention;
        let n = state.routes.len();
        let zeros = self.tape.constant(Array::zeros(1, 2 * e + a));
        let mut inputs = Vec::with_capacity(choices.len());
        for joint in choices {
            if joint.len() != n {
                return Err(Error::Contract(format!("joint action for {} of {n} agents", joint.len())));
            }
            let mut agent_rows = Vec::with_capacity(n);
            for (agent, choice) in joint.iter().enumerate() {
                let action_part = match choice {
                    ScoredChoice::NoOp => zeros,
                    ScoredChoice::Rule { policy, index } => self.tape.concat_cols(&[
                        policy.region_embedding,
                        policy.rule_embeddings.row(*index)?,
                        policy.fictitious.row(*index)?,
                    ])?,
                };
                agent_rows.push(self.tape.concat_cols(&[state.routes[agent].mean, action_part])?);
            }
            let pooled = self.tape.concat_rows(&agent_rows)?.mean_rows();
            inputs.push(self.tape.concat_cols(&[pooled, state.pool.summary])?);
        }
        let mut x = self.tape.concat_rows(&inputs)?;
        let layers = self.model.ix.scorer;
        for (depth, (w, b)) in layers.iter().enumerate() {
            x = x.matmul(self.p(*w))?.add(self.p(*b))?;
            if depth + 1 < layers.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

/// Agent-local context the rule policy needs for one decision.
pub struct AgentDecision<'t> {
    pub encoding: RouteEncoding<'t>,
    pub policy: Option<RulePolicy<'t>>,
}

/// Converts a chosen candidate back into a game action.
pub fn to_action(policy: &RulePolicy<'_>, index: usize) -> LocalAction {
    LocalAction::new(policy.region, policy.candidates[index])
}
