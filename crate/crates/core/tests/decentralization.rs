//! Mutation tests: an agent's greedy decision depends only on its own
//! route, its own velocity, its offer and the pool.

use manr::datagen::{generate_instance, GenConfig, Instance};
use manr::eval::GreedyPolicy;
use manr::game::{apply_global_action, GlobalAction, LocalAction, Rule};
use manr::model::{Model, ModelConfig};
use manr::routing::{GlobalState, NodeId, Route, RoutingProblem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(seed: u64) -> Model {
    let cfg = ModelConfig {
        hidden: 8,
        attention: 6,
        scorer_hidden: 8,
    };
    Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn instance(seed: u64) -> Instance {
    generate_instance(&GenConfig::new(9, 3, 1, seed), 0).unwrap()
}

fn coords(problem: &RoutingProblem) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let pt = |n: &manr::routing::Node| [n.x, n.y];
    (
        problem.customer_nodes().iter().map(pt).collect(),
        problem.depot_nodes().iter().map(pt).collect(),
    )
}

fn with_velocity(problem: &RoutingProblem, agent: usize, v: f64) -> RoutingProblem {
    let (c, d) = coords(problem);
    let mut vel = problem.velocities().to_vec();
    vel[agent] = v;
    RoutingProblem::new(c, d, vel).unwrap()
}

/// Moves every customer of agents 1 and 2 into agent 2's route, reversed.
fn shuffle_others(state: &GlobalState) -> GlobalState {
    let mut s = state.clone();
    let mut others: Vec<NodeId> = s.routes[1].customers().to_vec();
    others.extend(s.routes[2].customers());
    others.reverse();
    s.routes[1] = Route::new(1, s.routes[1].depot(), []);
    s.routes[2] = Route::new(2, s.routes[2].depot(), others);
    s
}

fn decide(m: &Model, p: &RoutingProblem, s: &GlobalState, offer: Option<NodeId>, seed: u64) -> LocalAction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GreedyPolicy::new(m).local_action(p, s, 0, offer, &mut rng).unwrap()
}

#[test]
fn other_agents_do_not_change_the_decision() {
    for seed in 0..30 {
        let inst = instance(seed);
        let m = model(seed);
        let p = &inst.problem;
        let s = &inst.initial;
        let mutated_state = shuffle_others(s);
        let mutated_problem = with_velocity(&with_velocity(p, 1, 0.2), 2, 7.0);
        for draw in 0..5 {
            let base = decide(&m, p, s, None, draw);
            assert_eq!(base, decide(&m, p, &mutated_state, None, draw), "seed {seed}");
            assert_eq!(base, decide(&m, &mutated_problem, s, None, draw), "seed {seed}");
            assert_eq!(base, decide(&m, &mutated_problem, &mutated_state, None, draw), "seed {seed}");
        }
    }
}

#[test]
fn pool_offers_ignore_other_routes() {
    for seed in 0..30 {
        let inst = instance(seed);
        let m = model(seed);
        let p = &inst.problem;
        // Agent 1 drops one customer; agent 0 is offered it.
        let node = inst.initial.routes[1].customers()[0];
        let drop = GlobalAction(vec![LocalAction::NoOp, LocalAction::new(node, Rule::Pool), LocalAction::NoOp]);
        let s = apply_global_action(&inst.initial, &drop).unwrap();
        let mut mutated = s.clone();
        let rest: Vec<NodeId> = mutated.routes[2].customers().iter().rev().copied().collect();
        mutated.routes[2] = Route::new(2, mutated.routes[2].depot(), rest);
        let mutated_problem = with_velocity(p, 2, 3.0);
        let base = decide(&m, p, &s, Some(node), 0);
        assert_eq!(base.region(), Some(node));
        assert_eq!(base, decide(&m, &mutated_problem, &mutated, Some(node), 0), "seed {seed}");
    }
}

// Guards against a vacuous pass: the agent's own data does matter.
#[test]
fn own_velocity_and_route_matter() {
    let mut changed = 0;
    for seed in 0..30 {
        let inst = instance(seed);
        let m = model(seed);
        let p = &inst.problem;
        let s = &inst.initial;
        let mut own = s.clone();
        let reversed: Vec<NodeId> = own.routes[0].customers().iter().rev().copied().collect();
        own.routes[0] = Route::new(0, own.routes[0].depot(), reversed);
        let slow = with_velocity(p, 0, 0.1);
        for draw in 0..5 {
            let base = decide(&m, p, s, None, draw);
            changed += usize::from(base != decide(&m, p, &own, None, draw));
            changed += usize::from(base != decide(&m, &slow, s, None, draw));
        }
    }
    assert!(changed > 0);
}
