//! Centralized training of the rule policy, encoders and global scorer.
//!
//! During a training rollout every agent proposes `Z` candidate local
//! actions. The `j`-th candidates of all agents form the `j`-th global
//! candidate, and the scorer picks one of them epsilon-greedily. After the
//! episode the combined loss is rebuilt on a tape from the recorded trace:
//! the scorer regresses onto discounted returns and each executed rule is
//! weighted by its advantage under the scorer.

mod critic;

pub use critic::{
    check_one_step_factorization, critic_independence_diagnostic, FactorizationReport, IndependenceReport,
};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, clip_gradients, AdamState, Array, LrSchedule, Tape, Var};
use crate::datagen::Instance;
use crate::error::{Error, Result};
use crate::eval::{gap, run_inference, run_rng};
use crate::game::{
    legal_rules, rollout_episode, sample_region, ActionProvider, EpisodeTrace, GlobalAction, LocalAction, Offers,
    RewardConfig,
};
use crate::model::{Bound, Model, ModelConfig, RulePolicy, ScoredChoice, StateEncoding};
use crate::routing::{GlobalState, RoutingProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Rewriting steps per episode.
    pub steps: usize,
    /// Candidate local actions per agent.
    pub candidates: usize,
    pub epsilon: f64,
    pub gamma: f64,
    /// Weight of the policy loss.
    pub alpha: f64,
    pub epochs: usize,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    /// Penalty window of the reward.
    pub m: usize,
    pub lr: LrSchedule,
    pub clip: f64,
    /// Rewriting steps of the greedy validation rollouts.
    pub validation_steps: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainingConfig {
    /// Defaults for problems with `customers` customers and `agents` agents.
    pub fn for_size(customers: usize, agents: usize) -> Self {
        let large = customers > 10;
        TrainingConfig {
            steps: if large { 40 } else { 30 },
            candidates: if large { 10 } else { 5 },
            epsilon: 0.15,
            gamma: 0.5,
            alpha: match (large, agents >= 5) {
                (false, _) => 1e-5,
                (true, false) => 1e-6,
                (true, true) => 5e-6,
            },
            epochs: if large && agents >= 5 { 23 } else { 30 },
            batch_size: 4,
            m: agents + 1,
            lr: LrSchedule::default(),
            clip: 0.05,
            validation_steps: crate::eval::DEFAULT_INFERENCE_STEPS,
            seed: 0,
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.candidates == 0 {
            return fail("candidates must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.m == 0 {
            return fail("batch size and m must be at least 1".into());
        }
        if !(self.clip > 0.0) || !(self.lr.base > 0.0) || self.lr.decay_steps == 0 {
            return fail("clip, learning rate and decay steps must be positive".into());
        }
        if self.model.hidden == 0 || self.model.attention == 0 || self.model.scorer_hidden == 0 {
            return fail("model widths must be positive".into());
        }
        Ok(())
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig::new(self.m).expect("validated m")
    }
}

/// One sampled local action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: LocalAction,
    /// Log-probability of the rule under the policy at sampling time; zero
    /// for a NoOp.
    pub log_prob: f64,
}

/// `Z` candidates per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub per_agent: Vec<Vec<Candidate>>,
}

/// Candidates together with the rule distributions they were drawn from.
pub struct SampledCandidates<'t> {
    /// Distinct regions' policies, per agent.
    pub policies: Vec<Vec<RulePolicy<'t>>>,
    /// `slots[i][z]`: policy index and rule index, or `None` for a NoOp.
    pub slots: Vec<Vec<Option<(usize, usize)>>>,
}

impl<'t> SampledCandidates<'t> {
    pub fn len(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint(&self, z: usize) -> Vec<ScoredChoice<'_, 't>> {
        self.slots
            .iter()
            .enumerate()
            .map(|(i, s)| match s[z] {
                None => ScoredChoice::NoOp,
                Some((p, r)) => ScoredChoice::Rule {
                    policy: &self.policies[i][p],
                    index: r,
                },
            })
            .collect()
    }

    pub fn to_set(&self) -> CandidateSet {
        let per_agent = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.iter()
                    .map(|slot| match *slot {
                        None => Candidate {
                            action: LocalAction::NoOp,
                            log_prob: 0.0,
                        },
                        Some((p, r)) => {
                            let policy = &self.policies[i][p];
                            Candidate {
                                action: LocalAction::new(policy.region, policy.candidates[r]),
                                log_prob: policy.log_probabilities().value().get(0, r),
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        CandidateSet { per_agent }
    }
}

/// Draws `z` candidates per agent. While the pool is empty every slot gets
/// a fresh region; while it is filled all slots share the agent's offer,
/// and agents without an offer only hold NoOps.
pub fn sample_candidates<'t, R: Rng + ?Sized>(
    bound: &Bound<'_, 't>,
    problem: &RoutingProblem,
    state: &GlobalState,
    encoding: &StateEncoding<'t>,
    offers: &Offers,
    z: usize,
    rng: &mut R,
) -> Result<SampledCandidates<'t>> {
    if z == 0 {
        return Err(Error::Contract("at least one candidate per agent is required".into()));
    }
    let n = state.num_agents();
    let mut policies = Vec::with_capacity(n);
    let mut slots = Vec::with_capacity(n);
    for agent in 0..n {
        let offer = offers.get(agent).copied().flatten();
        let route = state.route(agent)?;
        let mut cache: Vec<RulePolicy<'t>> = Vec::new();
        let mut agent_slots = Vec::with_capacity(z);
        for _ in 0..z {
            let Some(region) = sample_region(state, agent, offer, rng) else {
                agent_slots.push(None);
                continue;
            };
            let p = match cache.iter().position(|c| c.region == region) {
                Some(p) => p,
                None => {
                    let rules = legal_rules(state, agent, region, offer)?;
                    cache.push(bound.rule_policy(problem, route, &encoding.routes[agent], &encoding.pool, region, &rules)?);
                    cache.len() - 1
                }
            };
            let r = cache[p].sample(rng);
            agent_slots.push(Some((p, r)));
        }
        policies.push(cache);
        slots.push(agent_slots);
    }
    Ok(SampledCandidates { policies, slots })
}

/// Zips the `j`-th candidate of every agent into the `j`-th global action.
pub fn assemble_global_candidates(candidates: &CandidateSet) -> Result<Vec<GlobalAction>> {
    let z = candidates.per_agent.first().map_or(0, Vec::len);
    if candidates.per_agent.iter().any(|c| c.len() != z) {
        return Err(Error::Contract("agents hold different numbers of candidates".into()));
    }
    Ok((0..z)
        .map(|j| GlobalAction(candidates.per_agent.iter().map(|c| c[j].action).collect()))
        .collect())
}

/// With probability `epsilon` a uniform index, otherwise the first maximum.
pub fn select_action_epsilon_greedy<R: Rng + ?Sized>(scores: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Contract("no candidates to select from".into()));
    }
    let u: f64 = rng.random();
    if u < epsilon {
        Ok(rng.random_range(0..scores.len()))
    } else {
        Ok(crate::model::argmax(scores))
    }
}

/// `G_t = sum_{t' >= t} gamma^(t'-t) r_{t'+1}`, where `rewards[t]` is `r_{t+1}`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `Q(u) - sum_u' pi(u') Q(u')` for the chosen rule `u`.
pub fn advantage(q: &[f64], probs: &[f64], chosen: usize) -> f64 {
    let baseline: f64 = q.iter().zip(probs).map(|(q, p)| q * p).sum();
    q[chosen] - baseline
}

/// Mean squared error between returns and scores.
pub fn critic_loss(returns: &[f64], q: &[f64]) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    returns.iter().zip(q).map(|(g, q)| (g - q).powi(2)).sum::<f64>() / returns.len() as f64
}

/// `(1/n) sum -A log pi` over `(advantage, log_prob)` terms of all agents
/// and steps.
pub fn policy_loss(agents: usize, terms: &[(f64, f64)]) -> f64 {
    -terms.iter().map(|(a, lp)| a * lp).sum::<f64>() / agents as f64
}

pub fn total_loss(critic: f64, policy: f64, alpha: f64) -> f64 {
    critic + alpha * policy
}

/// Loss of one episode, built on a tape.
pub struct LossTerms<'t> {
    pub critic: Var<'t>,
    pub policy: Var<'t>,
    pub total: Var<'t>,
    pub returns: Vec<f64>,
    /// Score of the executed action per step.
    pub q_values: Vec<f64>,
    /// `advantages[t][i]`; `None` where agent `i` did nothing.
    pub advantages: Vec<Vec<Option<f64>>>,
}

/// Rebuilds the combined loss of `trace` under the bound parameters.
///
/// Advantages enter as constants, so the policy loss only sends gradient
/// through the log-probabilities.
pub fn episode_loss<'t>(
    bound: &Bound<'_, 't>,
    problem: &RoutingProblem,
    trace: &EpisodeTrace,
    gamma: f64,
    alpha: f64,
) -> Result<LossTerms<'t>> {
    episode_loss_with_advantages(bound, problem, trace, gamma, alpha, None)
}

/// [`episode_loss`] with the advantages supplied instead of recomputed from
/// the bound scorer. Finite-difference checks use this to hold them at
/// their unperturbed values, as the analytic gradient does.
pub fn episode_loss_with_advantages<'t>(
    bound: &Bound<'_, 't>,
    problem: &RoutingProblem,
    trace: &EpisodeTrace,
    gamma: f64,
    alpha: f64,
    fixed: Option<&[Vec<Option<f64>>]>,
) -> Result<LossTerms<'t>> {
    if fixed.is_some_and(|f| f.len() != trace.len()) {
        return Err(Error::Contract("one advantage row per step is required".into()));
    }
    let tape = bound.tape();
    let n = problem.num_agents();
    let steps = trace.len();
    let returns = compute_returns(&trace.rewards, gamma);
    let mut critic_terms = Vec::with_capacity(steps);
    let mut policy_terms = Vec::new();
    let mut q_values = Vec::with_capacity(steps);
    let mut advantages = Vec::with_capacity(steps);
    for t in 0..steps {
        let state = &trace.states[t];
        let encoding = bound.encode_state(problem, state)?;
        let mut policies: Vec<Option<(RulePolicy<'t>, usize)>> = Vec::with_capacity(n);
        for (agent, local) in trace.actions[t].locals().iter().enumerate() {
            policies.push(match *local {
                LocalAction::NoOp => None,
                LocalAction::Move { region, rule } => {
                    let offer = trace.offers[t].get(agent).copied().flatten();
                    let rules = legal_rules(state, agent, region, offer)?;
                    let policy = bound.rule_policy(
                        problem,
                        &state.routes[agent],
                        &encoding.routes[agent],
                        &encoding.pool,
                        region,
                        &rules,
                    )?;
                    let index = policy
                        .index_of(rule)
                        .ok_or_else(|| Error::illegal(agent, format!("step {t}: rule {rule} not legal")))?;
                    Some((policy, index))
                }
            });
        }
        let executed: Vec<ScoredChoice<'_, 't>> = policies
            .iter()
            .map(|p| match p {
                None => ScoredChoice::NoOp,
                Some((policy, index)) => ScoredChoice::Rule { policy, index: *index },
            })
            .collect();
        let q = bound.score(&encoding, std::slice::from_ref(&executed))?;
        q_values.push(q.item());
        critic_terms.push(tape.constant(Array::scalar(returns[t])).sub(q)?.square());

        let mut step_adv = vec![None; n];
        for (agent, entry) in policies.iter().enumerate() {
            let Some((policy, index)) = entry else { continue };
            if let Some(fixed) = fixed {
                let a = fixed[t]
                    .get(agent)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Contract(format!("no advantage for agent {agent} at step {t}")))?;
                step_adv[agent] = Some(a);
                policy_terms.push(policy.log_probabilities().elem(0, *index)?.scale(-a));
                continue;
            }
            let alternatives: Vec<Vec<ScoredChoice<'_, 't>>> = (0..policy.candidates.len())
                .map(|c| {
                    let mut joint = executed.clone();
                    joint[agent] = ScoredChoice::Rule { policy, index: c };
                    joint
                })
                .collect();
            let q_alt = bound.score(&encoding, &alternatives)?.value().data().to_vec();
            let a = advantage(&q_alt, &policy.probabilities(), *index);
            step_adv[agent] = Some(a);
            policy_terms.push(policy.log_probabilities().elem(0, *index)?.scale(-a));
        }
        advantages.push(step_adv);
    }
    let sum = |terms: &[Var<'t>]| -> Result<Var<'t>> {
        if terms.is_empty() {
            Ok(tape.scalar(0.0))
        } else {
            Ok(tape.concat_rows(terms)?.sum())
        }
    };
    let critic = sum(&critic_terms)?.scale(1.0 / steps.max(1) as f64);
    let policy = sum(&policy_terms)?.scale(1.0 / n as f64);
    let total = critic.add(policy.scale(alpha))?;
    Ok(LossTerms {
        critic,
        policy,
        total,
        returns,
        q_values,
        advantages,
    })
}

/// Training-time action provider: `Z` candidates per agent, scored
/// centrally, selected epsilon-greedily.
pub struct ExplorationPolicy<'m> {
    model: &'m Model,
    candidates: usize,
    epsilon: f64,
}

impl<'m> ExplorationPolicy<'m> {
    pub fn new(model: &'m Model, candidates: usize, epsilon: f64) -> Self {
        ExplorationPolicy {
            model,
            candidates,
            epsilon,
        }
    }
}

impl ActionProvider for ExplorationPolicy<'_> {
    fn provide(
        &mut self,
        problem: &RoutingProblem,
        state: &GlobalState,
        offers: &Offers,
        rng: &mut dyn RngCore,
    ) -> Result<GlobalAction> {
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let encoding = bound.encode_state(problem, state)?;
        let sampled = sample_candidates(&bound, problem, state, &encoding, offers, self.candidates, rng)?;
        let joints: Vec<_> = (0..sampled.len()).map(|z| sampled.joint(z)).collect();
        let scores = bound.score(&encoding, &joints)?.value().data().to_vec();
        let chosen = select_action_epsilon_greedy(&scores, self.epsilon, rng)?;
        let set = sampled.to_set();
        Ok(GlobalAction(set.per_agent.iter().map(|c| c[chosen].action).collect()))
    }
}

/// Per-epoch training metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub episodes: usize,
    pub optimizer_steps: u64,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub mean_critic_loss: f64,
    pub mean_policy_loss: f64,
    pub mean_episode_return: f64,
    /// Mean percentage gap of greedy validation rollouts against the
    /// initial solutions; `None` without validation problems.
    pub validation_gap: Option<f64>,
}

/// Gradients and loss values of one episode.
pub struct EpisodeGradients {
    pub grads: Vec<Array>,
    pub loss: f64,
    pub critic: f64,
    pub policy: f64,
    pub episode_return: f64,
}

/// Model, optimizer and progress of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainingConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(domain));
    rng.set_stream(stream);
    rng
}

const INIT_DOMAIN: u64 = 1;
const ORDER_DOMAIN: u64 = 2;
const EPISODE_DOMAIN: u64 = 3;

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model, &mut stream_rng(config.seed, INIT_DOMAIN, 0));
        let adam = AdamState::new(model.params().arrays());
        Ok(Trainer {
            config,
            model,
            adam,
            epoch: 0,
        })
    }

    /// Random stream of the episode on `instance` in `epoch`.
    pub fn episode_rng(&self, epoch: usize, instance: usize) -> ChaCha8Rng {
        stream_rng(self.config.seed, EPISODE_DOMAIN, ((epoch as u64) << 32) | instance as u64)
    }

    /// Rolls out one exploration episode.
    pub fn rollout<R: Rng>(&self, instance: &Instance, rng: &mut R) -> Result<EpisodeTrace> {
        let mut provider = ExplorationPolicy::new(&self.model, self.config.candidates, self.config.epsilon);
        rollout_episode(
            &instance.problem,
            &instance.initial,
            &mut provider,
            self.config.steps,
            &self.config.reward(),
            rng,
        )
    }

    /// Rolls out one episode and differentiates its loss.
    pub fn episode_gradients(&self, instance: &Instance, epoch: usize) -> Result<EpisodeGradients> {
        let trace = self.rollout(instance, &mut self.episode_rng(epoch, instance.id))?;
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let terms = episode_loss(&bound, &instance.problem, &trace, self.config.gamma, self.config.alpha)?;
        let loss = terms.total.item();
        if !loss.is_finite() {
            return Err(Error::Numerical {
                step: self.adam.step as usize,
                problem: instance.id,
            });
        }
        let grads = terms.total.backward()?;
        Ok(EpisodeGradients {
            grads: bound.vars().iter().map(|v| grads.wrt(*v)).collect(),
            loss,
            critic: terms.critic.item(),
            policy: terms.policy.item(),
            episode_return: terms.returns.first().copied().unwrap_or(0.0),
        })
    }

    /// Mean greedy gap against the initial solutions, one run per problem.
    pub fn validation_gap(&self, validation: &[Instance]) -> Result<Option<f64>> {
        if validation.is_empty() {
            return Ok(None);
        }
        let gaps = validation
            .par_iter()
            .map(|inst| {
                let mut rng = run_rng(self.config.seed, inst.id, 0);
                let state = run_inference(
                    &inst.problem,
                    &inst.initial,
                    &self.model,
                    self.config.validation_steps,
                    &mut rng,
                )?;
                gap(
                    inst.problem.team_average_cost(&inst.initial)?,
                    inst.problem.team_average_cost(&state)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(gaps.iter().sum::<f64>() / gaps.len() as f64))
    }

    /// One pass over `train` in a shuffled order, one optimizer step per
    /// batch, followed by validation.
    pub fn train_epoch(&mut self, train: &[Instance], validation: &[Instance]) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(self.config.seed, ORDER_DOMAIN, epoch as u64));
        let (mut loss, mut critic, mut policy, mut ret) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(self.config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| self.episode_gradients(&train[i], epoch))
                .collect::<Result<Vec<_>>>()?;
            let mut sum: Vec<Array> = self
                .model
                .params()
                .arrays()
                .iter()
                .map(|a| Array::zeros(a.rows(), a.cols()))
                .collect();
            for r in &results {
                for (s, g) in sum.iter_mut().zip(&r.grads) {
                    for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                loss += r.loss;
                critic += r.critic;
                policy += r.policy;
                ret += r.episode_return;
            }
            let scale = 1.0 / results.len() as f64;
            for s in &mut sum {
                for v in s.data_mut() {
                    *v *= scale;
                }
            }
            if sum.iter().any(|g| !g.all_finite()) {
                return Err(Error::Numerical {
                    step: self.adam.step as usize,
                    problem: train[batch[0]].id,
                });
            }
            clip_gradients(&mut sum, self.config.clip);
            let lr = self.config.lr.lr_at(self.adam.step);
            adam_step(self.model.params_mut().arrays_mut(), &sum, &mut self.adam, lr)?;
        }
        self.epoch += 1;
        let episodes = train.len();
        let per = |x: f64| if episodes == 0 { 0.0 } else { x / episodes as f64 };
        Ok(EpochMetrics {
            epoch: self.epoch,
            episodes,
            optimizer_steps: self.adam.step,
            learning_rate: self.config.lr.lr_at(self.adam.step),
            mean_loss: per(loss),
            mean_critic_loss: per(critic),
            mean_policy_loss: per(policy),
            mean_episode_return: per(ret),
            validation_gap: self.validation_gap(validation)?,
        })
    }

    /// Trains until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn train<F>(&mut self, train: &[Instance], validation: &[Instance], mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let metrics = self.train_epoch(train, validation)?;
            on_epoch(self, &metrics)?;
            log.push(metrics);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_instance, GenConfig};
    use crate::game::Rule;
    use crate::routing::NodeId;

    fn tiny() -> TrainingConfig {
        let mut cfg = TrainingConfig::for_size(5, 2);
        cfg.model = ModelConfig {
            hidden: 3,
            attention: 4,
            scorer_hidden: 5,
        };
        cfg.steps = 6;
        cfg.batch_size = 2;
        cfg.epochs = 1;
        cfg.validation_steps = 5;
        cfg
    }

    #[test]
    fn defaults_per_size() {
        let c = TrainingConfig::for_size(10, 2);
        assert_eq!((c.steps, c.candidates, c.m, c.epochs), (30, 5, 3, 30));
        assert_eq!(c.alpha, 1e-5);
        let c = TrainingConfig::for_size(20, 5);
        assert_eq!((c.steps, c.candidates, c.m, c.epochs), (40, 10, 6, 23));
        assert_eq!(c.alpha, 5e-6);
        assert_eq!(TrainingConfig::for_size(20, 3).alpha, 1e-6);
    }

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&[1.0, 0.0, 0.0], 0.5), vec![1.0, 0.0, 0.0]);
        assert_eq!(compute_returns(&[0.0, 0.0, 1.0], 0.5), vec![0.25, 0.5, 1.0]);
        assert_eq!(compute_returns(&[0.0; 4], 0.5), vec![0.0; 4]);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(critic_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(critic_loss(&[1.0], &[0.0]), 1.0);
        assert_eq!(policy_loss(1, &[(0.0, -3.0)]), 0.0);
        assert!((policy_loss(1, &[(1.0, 0.5f64.ln())]) - 0.693_147_180_559_945_3).abs() < 1e-12);
        assert!((total_loss(1.0, 2.0, 1e-5) - 1.00002).abs() < 1e-15);
        assert_eq!(total_loss(3.0, 7.0, 0.0), 3.0);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(&[0.7], &[1.0], 0), 0.0);
        assert_eq!(advantage(&[1.0, 0.0], &[0.5, 0.5], 0), 0.5);
        let q = [0.3, -1.2, 2.0];
        let p = [0.2, 0.5, 0.3];
        let mean: f64 = (0..3).map(|u| p[u] * advantage(&q, &p, u)).sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn epsilon_greedy_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action_epsilon_greedy(&[0.1, 0.9, 0.9], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action_epsilon_greedy(&[0.5, 0.5], 0.0, &mut rng).unwrap(), 0);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[select_action_epsilon_greedy(&[9.0, 0.0, 0.0, 0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 850 && c < 1150), "{counts:?}");
        assert!(select_action_epsilon_greedy(&[], 0.1, &mut rng).is_err());
    }

    #[test]
    fn zipping_candidates() {
        let a = |r: u32, u: u32| Candidate {
            action: LocalAction::new(NodeId(r), Rule::After(NodeId(u))),
            log_prob: -1.0,
        };
        let noop = Candidate {
            action: LocalAction::NoOp,
            log_prob: 0.0,
        };
        let set = CandidateSet {
            per_agent: vec![vec![a(0, 5), a(1, 5)], vec![noop, a(2, 6)]],
        };
        let g = assemble_global_candidates(&set).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0, vec![a(0, 5).action, LocalAction::NoOp]);
        assert_eq!(g[1].0, vec![a(1, 5).action, a(2, 6).action]);
    }

    #[test]
    fn candidates_share_offer_when_pool_filled() {
        let inst = generate_instance(&GenConfig::new(5, 2, 1, 1), 0).unwrap();
        let trainer = Trainer::new(tiny()).unwrap();
        let mut state = inst.initial.clone();
        let dropped = state.routes[0].customers()[0];
        state = crate::game::apply_global_action(
            &state,
            &GlobalAction(vec![LocalAction::new(dropped, Rule::Pool), LocalAction::NoOp]),
        )
        .unwrap();
        let tape = Tape::new();
        let bound = trainer.model.bind(&tape);
        let enc = bound.encode_state(&inst.problem, &state).unwrap();
        let offers = vec![None, Some(dropped)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sampled = sample_candidates(&bound, &inst.problem, &state, &enc, &offers, 5, &mut rng).unwrap();
        let set = sampled.to_set();
        assert!(set.per_agent[0].iter().all(|c| c.action == LocalAction::NoOp));
        assert!(set.per_agent[1].iter().all(|c| c.action.region() == Some(dropped)));
        assert!(set.per_agent[1].iter().all(|c| c.log_prob <= 0.0));
    }

    #[test]
    fn empty_dataset_leaves_params_unchanged() {
        let mut trainer = Trainer::new(tiny()).unwrap();
        let before = trainer.model.clone();
        let m = trainer.train_epoch(&[], &[]).unwrap();
        assert_eq!(trainer.model, before);
        assert_eq!(m.optimizer_steps, 0);
        assert_eq!(m.validation_gap, None);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = GenConfig::new(5, 2, 4, 3);
        let data: Vec<_> = (0..4).map(|i| generate_instance(&cfg, i).unwrap()).collect();
        let run = || {
            let mut t = Trainer::new(tiny()).unwrap();
            let log = t.train(&data[..3], &data[3..], |_, _| Ok(())).unwrap();
            (t, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a.adam.step, 2);
        assert_ne!(a.model, Trainer::new(tiny()).unwrap().model);
    }

    #[test]
    fn advantage_is_constant_in_policy_loss() {
        let inst = generate_instance(&GenConfig::new(5, 2, 1, 4), 0).unwrap();
        let trainer = Trainer::new(tiny()).unwrap();
        let trace = trainer.rollout(&inst, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let tape = Tape::new();
        let bound = trainer.model.bind(&tape);
        let terms = episode_loss(&bound, &inst.problem, &trace, 0.5, 1e-5).unwrap();
        let grads = terms.policy.backward().unwrap();
        let params = trainer.model.params();
        for (i, name) in params.names().iter().enumerate() {
            let g = grads.wrt(bound.vars()[i]);
            if name.starts_with("scorer.") {
                assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let moved = params
            .names()
            .iter()
            .enumerate()
            .any(|(i, name)| name.starts_with("rule.") && grads.wrt(bound.vars()[i]).norm_sq() > 0.0);
        assert!(moved);
    }
}
