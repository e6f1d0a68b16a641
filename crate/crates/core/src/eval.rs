//! Decentralized inference and multi-run evaluation.
//!
//! At inference time every agent samples one region (or takes its pool
//! offer) and picks the most probable rule from its own policy. The scorer
//! is not used.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::baselines::{assignment_of, exact_mvrp, nn_2opt, per_agent_tsp, Assignment};
use crate::datagen::Instance;
use crate::error::{Error, Result};
use crate::game::{
    final_solution, legal_rules, rollout_episode, sample_region, ActionProvider, EpisodeTrace, GlobalAction,
    LocalAction, Offers, RewardConfig,
};
use crate::model::Model;
use crate::routing::{GlobalState, NodeId, RoutingProblem};

pub const DEFAULT_RUNS: usize = 20;
pub const DEFAULT_INFERENCE_STEPS: usize = 100;

/// Greedy decentralized action provider.
pub struct GreedyPolicy<'m> {
    model: &'m Model,
}

impl<'m> GreedyPolicy<'m> {
    pub fn new(model: &'m Model) -> Self {
        GreedyPolicy { model }
    }

    /// The local action of one agent. Only the agent's own route, its offer
    /// and the pool enter the decision.
    pub fn local_action(
        &self,
        problem: &RoutingProblem,
        state: &GlobalState,
        agent: usize,
        offer: Option<NodeId>,
        rng: &mut dyn RngCore,
    ) -> Result<LocalAction> {
        let Some(region) = sample_region(state, agent, offer, rng) else {
            return Ok(LocalAction::NoOp);
        };
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let pool = bound.encode_pool_set(problem, &state.pool)?;
        let route = state.route(agent)?;
        let encoding = bound.encode_route(problem, route)?;
        let rules = legal_rules(state, agent, region, offer)?;
        let policy = bound.rule_policy(problem, route, &encoding, &pool, region, &rules)?;
        Ok(LocalAction::new(region, rules[policy.argmax()]))
    }
}

impl ActionProvider for GreedyPolicy<'_> {
    fn provide(
        &mut self,
        problem: &RoutingProblem,
        state: &GlobalState,
        offers: &Offers,
        rng: &mut dyn RngCore,
    ) -> Result<GlobalAction> {
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let pool = bound.encode_pool_set(problem, &state.pool)?;
        let mut locals = Vec::with_capacity(state.num_agents());
        for (agent, route) in state.routes.iter().enumerate() {
            let offer = offers.get(agent).copied().flatten();
            let Some(region) = sample_region(state, agent, offer, rng) else {
                locals.push(LocalAction::NoOp);
                continue;
            };
            let encoding = bound.encode_route(problem, route)?;
            let rules = legal_rules(state, agent, region, offer)?;
            let policy = bound.rule_policy(problem, route, &encoding, &pool, region, &rules)?;
            locals.push(LocalAction::new(region, rules[policy.argmax()]));
        }
        Ok(GlobalAction(locals))
    }
}

/// Full greedy rollout of `steps` transitions.
pub fn inference_trace<R: Rng>(
    problem: &RoutingProblem,
    s0: &GlobalState,
    model: &Model,
    steps: usize,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let config = RewardConfig::for_agents(problem.num_agents());
    rollout_episode(problem, s0, &mut GreedyPolicy::new(model), steps, &config, rng)
}

/// The last feasible state of a greedy rollout.
pub fn run_inference<R: Rng>(
    problem: &RoutingProblem,
    s0: &GlobalState,
    model: &Model,
    steps: usize,
    rng: &mut R,
) -> Result<GlobalState> {
    Ok(final_solution(&inference_trace(problem, s0, model, steps, rng)?).clone())
}

/// Random stream of run `run` on problem `problem`.
pub fn run_rng(master: u64, problem: usize, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((problem as u64) << 32) | run as u64);
    rng
}

/// Percentage improvement of `achieved` over `reference`.
pub fn gap(reference: f64, achieved: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::Contract(format!("gap reference must be positive, got {reference}")));
    }
    Ok((reference - achieved) / reference * 100.0)
}

/// Percentage saving of `team_cost` over every agent solving its own TSP on
/// `initial` independently.
pub fn collaboration_benefit(problem: &RoutingProblem, initial: &Assignment, team_cost: f64) -> Result<f64> {
    gap(per_agent_tsp(problem, initial)?.average_cost, team_cost)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Exact multi-vehicle optimum; skipped when the instance is too large.
    Exact,
    /// Nearest neighbour plus 2-opt on the initial assignment.
    Nn2opt,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
    pub baseline: Baseline,
    pub collaboration: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            runs: DEFAULT_RUNS,
            steps: DEFAULT_INFERENCE_STEPS,
            seed: 0,
            baseline: Baseline::None,
            collaboration: false,
        }
    }
}

/// Evaluation of one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: usize,
    pub initial_cost: f64,
    pub run_costs: Vec<f64>,
    /// Mean over runs.
    pub mean_cost: f64,
    /// Minimum over runs.
    pub best_cost: f64,
    pub baseline_cost: Option<f64>,
    /// Set when the exact baseline was requested but the instance is too
    /// large for it.
    pub baseline_skipped: bool,
    pub noncollab_cost: Option<f64>,
    /// State reached by the best run.
    pub best_state: GlobalState,
}

impl ProblemRecord {
    pub fn gap_initial(&self) -> f64 {
        gap(self.initial_cost, self.mean_cost).unwrap_or(f64::NAN)
    }

    pub fn gap_initial_best(&self) -> f64 {
        gap(self.initial_cost, self.best_cost).unwrap_or(f64::NAN)
    }

    pub fn gap_baseline(&self) -> Option<f64> {
        self.baseline_cost.map(|b| gap(b, self.mean_cost).unwrap_or(f64::NAN))
    }

    pub fn gap_baseline_best(&self) -> Option<f64> {
        self.baseline_cost.map(|b| gap(b, self.best_cost).unwrap_or(f64::NAN))
    }

    pub fn collaboration(&self) -> Option<f64> {
        self.noncollab_cost.map(|c| gap(c, self.mean_cost).unwrap_or(f64::NAN))
    }

    pub fn collaboration_best(&self) -> Option<f64> {
        self.noncollab_cost.map(|c| gap(c, self.best_cost).unwrap_or(f64::NAN))
    }
}

/// Aggregates over problems; gaps are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub problems: usize,
    pub runs: usize,
    pub steps: usize,
    pub mean_gap_initial: f64,
    pub mean_gap_initial_best: f64,
    pub mean_gap_baseline: Option<f64>,
    pub mean_gap_baseline_best: Option<f64>,
    pub baseline_skipped: usize,
    pub mean_collaboration: Option<f64>,
    pub mean_collaboration_best: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<ProblemRecord>,
    pub summary: EvalSummary,
    /// Wall-clock seconds per problem, in record order.
    pub seconds: Vec<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn evaluate_problem(instance: &Instance, model: &Model, options: &EvalOptions) -> Result<(ProblemRecord, f64)> {
    let started = Instant::now();
    let problem = &instance.problem;
    let initial_cost = problem.team_average_cost(&instance.initial)?;
    let mut run_costs = Vec::with_capacity(options.runs);
    let mut best: Option<(f64, GlobalState)> = None;
    for run in 0..options.runs {
        let mut rng = run_rng(options.seed, instance.id, run);
        let state = run_inference(problem, &instance.initial, model, options.steps, &mut rng)?;
        let cost = problem.team_average_cost(&state)?;
        run_costs.push(cost);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, state));
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let (best_cost, best_state) = best.unwrap_or_else(|| (initial_cost, instance.initial.clone()));
    let (baseline_cost, baseline_skipped) = match options.baseline {
        Baseline::None => (None, false),
        Baseline::Nn2opt => {
            let state = nn_2opt(problem, &assignment_of(&instance.initial))?;
            (Some(problem.team_average_cost(&state)?), false)
        }
        Baseline::Exact => match exact_mvrp(problem) {
            Ok(sol) => (Some(sol.team_cost), false),
            Err(Error::Size { .. }) => (None, true),
            Err(e) => return Err(e),
        },
    };
    let noncollab_cost = if options.collaboration {
        Some(per_agent_tsp(problem, &assignment_of(&instance.initial))?.average_cost)
    } else {
        None
    };
    let record = ProblemRecord {
        id: instance.id,
        initial_cost,
        mean_cost: mean(run_costs.iter().copied()).unwrap_or(initial_cost),
        run_costs,
        best_cost,
        baseline_cost,
        baseline_skipped,
        noncollab_cost,
        best_state,
    };
    Ok((record, seconds))
}

/// Runs `options.runs` greedy rollouts per problem from its fixed initial
/// solution. Problems are processed in parallel; results keep input order.
pub fn multi_run_eval(instances: &[Instance], model: &Model, options: &EvalOptions) -> Result<EvalReport> {
    if options.runs == 0 {
        return Err(Error::Config("at least one inference run is required".into()));
    }
    let results = instances
        .par_iter()
        .map(|inst| evaluate_problem(inst, model, options))
        .collect::<Result<Vec<_>>>()?;
    let (records, seconds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = EvalSummary {
        problems: records.len(),
        runs: options.runs,
        steps: options.steps,
        mean_gap_initial: mean(records.iter().map(ProblemRecord::gap_initial)).unwrap_or(f64::NAN),
        mean_gap_initial_best: mean(records.iter().map(ProblemRecord::gap_initial_best)).unwrap_or(f64::NAN),
        mean_gap_baseline: mean(records.iter().filter_map(ProblemRecord::gap_baseline)),
        mean_gap_baseline_best: mean(records.iter().filter_map(ProblemRecord::gap_baseline_best)),
        baseline_skipped: records.iter().filter(|r| r.baseline_skipped).count(),
        mean_collaboration: mean(records.iter().filter_map(ProblemRecord::collaboration)),
        mean_collaboration_best: mean(records.iter().filter_map(ProblemRecord::collaboration_best)),
    };
    Ok(EvalReport {
        records,
        summary,
        seconds,
    })
}
