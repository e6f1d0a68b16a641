//! Random problems and initial solutions.
//!
//! Depots are uniform in the unit square. A uniformly drawn fraction of the
//! customers is also uniform; the rest are split evenly across agents and
//! drawn from a normal around the agent's depot, truncated to the square.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::nearest_neighbour_route;
use crate::error::{Error, Result};
use crate::routing::{GlobalState, NodeId, Pool, RoutingProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub customers: usize,
    pub agents: usize,
    pub size: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub sigma: f64,
    pub velocity_range: [f64; 2],
    pub seed: u64,
}

impl GenConfig {
    pub fn new(customers: usize, agents: usize, size: usize, seed: u64) -> Self {
        GenConfig {
            customers,
            agents,
            size,
            split: [0.8, 0.1, 0.1],
            sigma: 0.1,
            velocity_range: [0.95, 1.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.customers < self.agents {
            return Err(Error::Config(format!(
                "need customers >= agents >= 1, got {} customers and {} agents",
                self.customers, self.agents
            )));
        }
        if self.split.iter().any(|&f| f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must be nonnegative and sum to 1", self.split)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        let [lo, hi] = self.velocity_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid velocity range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Split sizes; the test split takes the rounding remainder.
    pub fn split_sizes(&self) -> [usize; 3] {
        let train = (self.split[0] * self.size as f64).round() as usize;
        let val = ((self.split[1] * self.size as f64).round() as usize).min(self.size - train);
        [train, val, self.size - train - val]
    }
}

/// Draws a point from `N(center, sigma^2 I)` conditioned on the unit square.
pub fn sample_truncated_normal<R: Rng + ?Sized>(center: [f64; 2], sigma: f64, rng: &mut R) -> [f64; 2] {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let x = center[0] + normal.sample(rng);
        let y = center[1] + normal.sample(rng);
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            return [x, y];
        }
    }
}

pub fn sample_problem<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> Result<RoutingProblem> {
    config.validate()?;
    let (k, n) = (config.customers, config.agents);
    let mut unit = || [rng.random::<f64>(), rng.random::<f64>()];
    let depots: Vec<[f64; 2]> = (0..n).map(|_| unit()).collect();
    let fraction: f64 = rng.random();
    let uniform = ((fraction * k as f64).round() as usize).min(k);
    let mut customers: Vec<[f64; 2]> = (0..uniform).map(|_| [rng.random(), rng.random()]).collect();
    let clustered = k - uniform;
    for agent in 0..n {
        let count = clustered / n + usize::from(agent < clustered % n);
        for _ in 0..count {
            customers.push(sample_truncated_normal(depots[agent], config.sigma, rng));
        }
    }
    customers.shuffle(rng);
    let [lo, hi] = config.velocity_range;
    let velocities = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    RoutingProblem::new(customers, depots, velocities)
}

/// Even random split of the customers, then a nearest-neighbour tour per
/// agent.
pub fn sample_initial_solution<R: Rng + ?Sized>(problem: &RoutingProblem, rng: &mut R) -> Result<GlobalState> {
    let n = problem.num_agents();
    let mut customers: Vec<NodeId> = problem.customer_ids().collect();
    customers.shuffle(rng);
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    let k = customers.len();
    let mut parts = vec![Vec::new(); n];
    let mut start = 0;
    for (i, &agent) in agents.iter().enumerate() {
        let len = k / n + usize::from(i < k % n);
        parts[agent] = customers[start..start + len].to_vec();
        start += len;
    }
    let routes = parts
        .iter()
        .enumerate()
        .map(|(agent, cs)| nearest_neighbour_route(problem, agent, cs))
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalState::new(routes, Pool::new()))
}

/// A problem paired with its fixed initial solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: usize,
    pub problem: RoutingProblem,
    pub initial: GlobalState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Instance `id` of a configuration. Each instance has its own random
/// stream, so generation order does not matter.
pub fn generate_instance(config: &GenConfig, id: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(id as u64);
    let problem = sample_problem(config, &mut rng)?;
    let initial = sample_initial_solution(&problem, &mut rng)?;
    Ok(Instance { id, problem, initial })
}

pub fn generate_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let [train, val, _] = config.split_sizes();
    let mut all = (0..config.size)
        .map(|id| generate_instance(config, id))
        .collect::<Result<Vec<_>>>()?;
    let test = all.split_off(train + val);
    let validation = all.split_off(train);
    Ok(Dataset {
        train: all,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        assert_eq!(GenConfig::new(10, 3, 6280, 1).split_sizes(), [5024, 628, 628]);
        assert_eq!(GenConfig::new(10, 3, 10, 1).split_sizes(), [8, 1, 1]);
        assert_eq!(GenConfig::new(10, 3, 0, 1).split_sizes(), [0, 0, 0]);
    }

    #[test]
    fn coordinates_and_velocities_in_range() {
        let cfg = GenConfig::new(10, 3, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let p = sample_problem(&cfg, &mut rng).unwrap();
            assert!(p.nodes().iter().all(|n| (0.0..=1.0).contains(&n.x) && (0.0..=1.0).contains(&n.y)));
            assert!(p.velocities().iter().all(|v| (0.95..=1.0).contains(v)));
        }
    }

    #[test]
    fn truncated_normal_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100_000 {
            let [x, y] = sample_truncated_normal([0.02, 0.97], 0.1, &mut rng);
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn clustered_mean_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = [0.5, 0.5];
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| {
                let [x, y] = sample_truncated_normal(center, 0.1, &mut rng);
                (x - center[0]).hypot(y - center[1])
            })
            .sum::<f64>()
            / draws as f64;
        let expected = 0.1 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean - expected).abs() < 0.15 * expected, "{mean}");
    }

    #[test]
    fn even_split_and_feasible() {
        let cfg = GenConfig::new(10, 3, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let p = sample_problem(&cfg, &mut rng).unwrap();
            let s = sample_initial_solution(&p, &mut rng).unwrap();
            assert!(p.validate_state(&s).is_empty());
            assert!(s.is_feasible());
            let mut sizes: Vec<usize> = s.routes.iter().map(|r| r.customers().len()).collect();
            sizes.sort();
            assert_eq!(sizes, vec![3, 3, 4]);
        }
        let cfg = GenConfig::new(3, 3, 0, 0);
        let p = sample_problem(&cfg, &mut rng).unwrap();
        let s = sample_initial_solution(&p, &mut rng).unwrap();
        assert!(s.routes.iter().all(|r| r.customers().len() == 1));
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = GenConfig::new(6, 2, 10, 17);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (8, 1, 1));
        assert_eq!(a.test[0].id, 9);
    }

    #[test]
    fn invalid_configs() {
        assert!(GenConfig::new(2, 3, 1, 0).validate().is_err());
        let mut cfg = GenConfig::new(5, 2, 1, 0);
        cfg.split = [0.5, 0.1, 0.1];
        assert!(cfg.validate().is_err());
    }
}
