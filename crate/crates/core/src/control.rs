//! Tabular entropy-regularized actor-critic whose critic target bootstraps
//! through a value estimator: plain `V` (model-free), single-step MVE, or
//! gamma-MVE over a gamma-model learned online from the replay buffer.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Environment, TransitionDataset, TransitionSample};
use crate::error::{check_discount, check_target_discount, Error, Result};
use crate::expansion::{gamma_mve_with_kernel, mve_estimate, sampled_gamma_mve_estimate};
use crate::mdp::{argmax, PolicyTable};
use crate::rollout::{RolloutKernel, Start};
use crate::tables::{QTable, VTable};
use crate::td::{softmax, GammaModelTable, SampledTrainer};

/// Seed offset for evaluation episodes, kept apart from the training stream.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Softmax policy over per-state logits, `pi(.|s) = softmax(logits[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPolicy {
    n_actions: usize,
    logits: Vec<f64>,
    pub temperature: f64,
}

impl SoftPolicy {
    pub fn uniform(n_states: usize, n_actions: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if n_actions == 0 {
            return Err(Error::InvalidArgument("policy needs at least one action".into()));
        }
        Ok(Self {
            n_actions,
            logits: vec![0.0; n_states * n_actions],
            temperature,
        })
    }

    pub fn n_states(&self) -> usize {
        self.logits.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits_row(&self, s: usize) -> &[f64] {
        &self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs_row(&self, s: usize) -> Vec<f64> {
        softmax(self.logits_row(s))
    }

    /// Highest-logit action, lowest index on exact ties.
    pub fn greedy_action(&self, s: usize) -> usize {
        argmax(self.logits_row(s))
    }

    pub fn to_table(&self) -> PolicyTable {
        let probs = (0..self.n_states()).flat_map(|s| self.probs_row(s)).collect();
        PolicyTable::new(self.n_states(), self.n_actions, probs)
            .expect("softmax rows are distributions")
    }

    pub fn greedy_table(&self) -> PolicyTable {
        let actions: Vec<usize> = (0..self.n_states()).map(|s| self.greedy_action(s)).collect();
        PolicyTable::deterministic(self.n_actions, &actions).expect("actions in range")
    }
}

/// Source of `V(s_{t+1})` inside the critic target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    GammaMve,
    Mve,
    ModelFree,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::GammaMve, Estimator::Mve, Estimator::ModelFree];
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma_mve" => Ok(Self::GammaMve),
            "mve" => Ok(Self::Mve),
            "model_free" => Ok(Self::ModelFree),
            other => Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GammaMve => "gamma_mve",
            Self::Mve => "mve",
            Self::ModelFree => "model_free",
        })
    }
}

/// How the gamma-MVE expectations are formed during control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalMode {
    Expected,
    Sampled,
}

impl FromStr for TerminalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected" => Ok(Self::Expected),
            "sampled" => Ok(Self::Sampled),
            other => Err(Error::InvalidArgument(format!("unknown terminal mode '{other}'"))),
        }
    }
}

impl fmt::Display for TerminalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Expected => "expected",
            Self::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcConfig {
    pub estimator: Estimator,
    /// Model discount. Single-step MVE always uses a `gamma = 0` model.
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub horizon: usize,
    pub q_step: f64,
    pub v_step: f64,
    /// `None` applies the closed-form softmax policy update.
    pub policy_step: Option<f64>,
    pub model_step: f64,
    pub model_batch: usize,
    pub model_tau: f64,
    /// Gradient steps between model updates; 0 freezes the model.
    pub model_every: usize,
    /// Transitions per critic minibatch.
    pub critic_batch: usize,
    /// Gradient steps per environment step.
    pub updates_per_step: usize,
    pub temperature: f64,
    /// Initial entry of every Q and V cell. `None` uses the soft value of a
    /// reward-free uniform policy, `temperature * ln(n_actions) / (1 - gt)`.
    pub q_init: Option<f64>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub terminal: TerminalMode,
    /// Include the policy entropy bonus in the expanded rewards, so that the
    /// expansion targets the same soft value that `V` tracks.
    pub soft_expansion: bool,
    pub seed: u64,
}

impl Default for AcConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::GammaMve,
            gamma: 0.8,
            gamma_tilde: 0.99,
            horizon: 1,
            q_step: 0.5,
            v_step: 0.5,
            policy_step: None,
            model_step: 100.0,
            model_batch: 64,
            model_tau: 0.5,
            model_every: 1,
            critic_batch: 1,
            updates_per_step: 1,
            temperature: 1.0,
            q_init: None,
            episodes: 500,
            steps_per_episode: 30,
            buffer_capacity: 100_000,
            eval_every: 10,
            eval_episodes: 10,
            terminal: TerminalMode::Expected,
            soft_expansion: false,
            seed: 0,
        }
    }
}

impl AcConfig {
    /// Discount of the gamma-model this configuration trains, if any.
    pub fn model_gamma(&self) -> Option<f64> {
        match self.estimator {
            Estimator::GammaMve => Some(self.gamma),
            Estimator::Mve => Some(0.0),
            Estimator::ModelFree => None,
        }
    }

    pub fn initial_value(&self, n_actions: usize) -> f64 {
        self.q_init.unwrap_or_else(|| {
            self.temperature * (n_actions as f64).ln() / (1.0 - self.gamma_tilde)
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_discount(self.gamma)?;
        check_discount(self.gamma_tilde)?;
        if let Some(g) = self.model_gamma() {
            check_target_discount(g, self.gamma_tilde)?;
            if self.horizon == 0 {
                return Err(Error::InvalidArgument(
                    "model-based estimators need horizon >= 1".into(),
                ));
            }
        }
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")))
            }
        };
        positive("q_step", self.q_step)?;
        positive("v_step", self.v_step)?;
        positive("model_step", self.model_step)?;
        positive("temperature", self.temperature)?;
        if self.q_init.is_some_and(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("q_init must be finite".into()));
        }
        if let Some(step) = self.policy_step {
            positive("policy_step", step)?;
        }
        if !(self.model_tau > 0.0 && self.model_tau <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "model_tau must lie in (0, 1], got {}",
                self.model_tau
            )));
        }
        for (name, v) in [
            ("model_batch", self.model_batch),
            ("critic_batch", self.critic_batch),
            ("updates_per_step", self.updates_per_step),
            ("episodes", self.episodes),
            ("steps_per_episode", self.steps_per_episode),
            ("buffer_capacity", self.buffer_capacity),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub return_mean: f64,
    pub return_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub estimator: Estimator,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// First evaluated episode whose mean return reaches `threshold`.
    pub fn episodes_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.points
            .iter()
            .find(|p| p.return_mean >= threshold)
            .map(|p| p.episode)
    }
}

/// `Q[s][a] += step * (target - Q[s][a])`, where `target = r + gt * V_est(s')`.
pub fn q_update(q: &mut QTable, s: usize, a: usize, target: f64, step: f64) {
    let old = q.get(s, a);
    q.set(s, a, old + step * (target - old));
}

/// Soft state value `sum_a pi(a|s) (Q[s][a] - temperature * ln pi(a|s))`.
pub fn soft_value(q_row: &[f64], probs: &[f64], temperature: f64) -> f64 {
    q_row
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&q, &p)| p * (q - temperature * p.ln()))
        .sum()
}

pub fn v_update(v: &mut VTable, s: usize, q: &QTable, policy: &SoftPolicy, step: f64) {
    let target = soft_value(q.row(s), &policy.probs_row(s), policy.temperature);
    v.values[s] += step * (target - v.values[s]);
}

/// Closed-form update: `pi(.|s) = softmax(Q[s] / temperature)`.
pub fn policy_update(policy: &mut SoftPolicy, s: usize, q: &QTable) {
    let t = policy.temperature;
    let n = policy.n_actions;
    for (l, &qv) in policy.logits[s * n..(s + 1) * n].iter_mut().zip(q.row(s)) {
        *l = qv / t;
    }
}

/// One gradient step on `E_{a~pi}[temperature * ln pi(a|s) - Q[s][a]]` with
/// respect to the logits of state `s`.
pub fn policy_gradient_update(policy: &mut SoftPolicy, s: usize, q: &QTable, step: f64) {
    let t = policy.temperature;
    let probs = policy.probs_row(s);
    let g: Vec<f64> = probs
        .iter()
        .zip(q.row(s))
        .map(|(&p, &qv)| t * p.max(f64::MIN_POSITIVE).ln() - qv)
        .collect();
    let mean: f64 = probs.iter().zip(&g).map(|(p, x)| p * x).sum();
    let n = policy.n_actions;
    for ((l, &p), &gb) in policy.logits[s * n..(s + 1) * n].iter_mut().zip(&probs).zip(&g) {
        *l -= step * p * (gb - mean);
    }
}

/// Mean and population standard deviation of undiscounted `horizon`-step
/// returns under `policy`.
pub fn evaluate_policy<E: Environment, R: Rng + ?Sized>(
    env: &E,
    policy: &PolicyTable,
    episodes: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    let returns: Vec<f64> = (0..episodes)
        .map(|_| {
            let mut state = env.reset(rng);
            let mut total = 0.0;
            for _ in 0..horizon {
                let a = policy.sample(env.index(&state), rng);
                let (next, r) = env.step(&state, a, rng);
                total += r;
                state = next;
            }
            total
        })
        .collect();
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok((mean, var.sqrt()))
}

/// Learner state for one actor-critic run.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub config: AcConfig,
    pub q: QTable,
    pub v: VTable,
    pub policy: SoftPolicy,
    /// Last observed reward for entering each state.
    pub reward: Vec<f64>,
    pub buffer: TransitionDataset,
    trainer: Option<SampledTrainer>,
    table: PolicyTable,
    steps: usize,
}

impl ActorCritic {
    pub fn new(n_states: usize, n_actions: usize, config: AcConfig) -> Result<Self> {
        config.validate()?;
        let model = match config.model_gamma() {
            Some(g) => Some(GammaModelTable::uniform(n_states, n_actions, g)?),
            None => None,
        };
        Self::assemble(n_states, n_actions, config, model)
    }

    /// Starts from a given model; its discount must match the configuration.
    pub fn with_model(config: AcConfig, model: GammaModelTable) -> Result<Self> {
        config.validate()?;
        if config.model_gamma() != Some(model.gamma()) {
            return Err(Error::InvalidArgument(format!(
                "model discount {} does not match the {} estimator",
                model.gamma(),
                config.estimator
            )));
        }
        Self::assemble(model.n_states(), model.n_actions(), config, Some(model))
    }

    fn assemble(
        n_states: usize,
        n_actions: usize,
        config: AcConfig,
        model: Option<GammaModelTable>,
    ) -> Result<Self> {
        let policy = SoftPolicy::uniform(n_states, n_actions, config.temperature)?;
        let q_init = config.initial_value(n_actions);
        let trainer = model
            .map(|m| SampledTrainer::new(m, config.model_tau))
            .transpose()?;
        Ok(Self {
            q: QTable::filled(n_states, n_actions, q_init),
            v: VTable {
                values: vec![q_init; n_states],
            },
            reward: vec![0.0; n_states],
            buffer: TransitionDataset::with_capacity(config.buffer_capacity),
            table: policy.to_table(),
            policy,
            trainer,
            config,
            steps: 0,
        })
    }

    pub fn model(&self) -> Option<&GammaModelTable> {
        self.trainer.as_ref().map(SampledTrainer::live)
    }

    /// Current policy as a probability table.
    pub fn policy_table(&self) -> &PolicyTable {
        &self.table
    }

    /// `V_est(s)` for the configured estimator.
    pub fn value_estimate<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<f64> {
        let kernel = self.kernel()?;
        let inputs = self.expansion_inputs();
        self.estimate_with(kernel.as_ref(), &inputs, s, rng)
    }

    fn kernel(&self) -> Result<Option<RolloutKernel>> {
        self.trainer
            .as_ref()
            .map(|t| RolloutKernel::new(t.live(), &self.table))
            .transpose()
    }

    fn entropy_bonus(&self, s: usize) -> f64 {
        let probs = self.table.row(s);
        -self.policy.temperature
            * probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// Per-state rewards and terminal values fed to the expansion. With
    /// `soft_expansion` the expansion runs on the entropy-free part of the soft
    /// value, `V(s) - bonus(s)`, with the discounted bonus of each entered
    /// state added to its reward.
    fn expansion_inputs(&self) -> (Vec<f64>, VTable) {
        if !self.config.soft_expansion {
            return (self.reward.clone(), self.v.clone());
        }
        let gt = self.config.gamma_tilde;
        let bonus: Vec<f64> = (0..self.reward.len()).map(|s| self.entropy_bonus(s)).collect();
        let rewards = self.reward.iter().zip(&bonus).map(|(r, b)| r + gt * b).collect();
        let values = self.v.values.iter().zip(&bonus).map(|(v, b)| v - b).collect();
        (rewards, VTable { values })
    }

    fn estimate_with<R: Rng + ?Sized>(
        &self,
        kernel: Option<&RolloutKernel>,
        (rewards, terminal): &(Vec<f64>, VTable),
        s: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let c = &self.config;
        let Some(kernel) = kernel else {
            return Ok(self.v.values[s]);
        };
        let (h, gt) = (c.horizon, c.gamma_tilde);
        let expanded = match (c.estimator, c.terminal) {
            (Estimator::Mve, _) => mve_estimate(kernel.kernel(), terminal, rewards, s, h, gt),
            (_, TerminalMode::Expected) => {
                gamma_mve_with_kernel(kernel, terminal, rewards, Start::State(s), h, gt)?.value
            }
            (_, TerminalMode::Sampled) => {
                sampled_gamma_mve_estimate(kernel, terminal, rewards, s, h, gt, rng)?.value
            }
        };
        Ok(if c.soft_expansion {
            expanded + self.entropy_bonus(s)
        } else {
            expanded
        })
    }

    /// Critic target `r + gt * V_est(s')` for a transition.
    pub fn critic_target<R: Rng + ?Sized>(&self, t: &TransitionSample, rng: &mut R) -> Result<f64> {
        Ok(t.r + self.config.gamma_tilde * self.value_estimate(t.s_next, rng)?)
    }

    /// Records a transition, then runs `updates_per_step` gradient steps.
    pub fn observe<R: Rng + ?Sized>(&mut self, t: TransitionSample, rng: &mut R) -> Result<()> {
        self.buffer.push(t);
        self.reward[t.s_next] = t.r;
        for _ in 0..self.config.updates_per_step {
            self.gradient_step(rng)?;
        }
        Ok(())
    }

    /// Model update (per the cadence) followed by critic, value and policy
    /// updates on a minibatch drawn from the replay buffer.
    pub fn gradient_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.steps += 1;
        let c = &self.config;
        if let Some(trainer) = &mut self.trainer {
            if c.model_every > 0 && self.steps.is_multiple_of(c.model_every) {
                trainer.step(&self.buffer, &self.table, c.model_batch, c.model_step, rng);
            }
        }
        let batch: Vec<TransitionSample> =
            (0..c.critic_batch).map(|_| self.buffer.sample(rng)).collect();
        let kernel = self.kernel()?;
        let inputs = self.expansion_inputs();
        let targets = batch
            .iter()
            .map(|t| {
                let v = self.estimate_with(kernel.as_ref(), &inputs, t.s_next, rng)?;
                Ok(t.r + c.gamma_tilde * v)
            })
            .collect::<Result<Vec<f64>>>()?;
        for (t, target) in batch.iter().zip(targets) {
            q_update(&mut self.q, t.s, t.a, target, self.config.q_step);
        }
        for t in &batch {
            v_update(&mut self.v, t.s, &self.q, &self.policy, self.config.v_step);
            match self.config.policy_step {
                None => policy_update(&mut self.policy, t.s, &self.q),
                Some(step) => policy_gradient_update(&mut self.policy, t.s, &self.q, step),
            }
            self.table.set_row(t.s, &self.policy.probs_row(t.s))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AcOutcome {
    pub curve: LearningCurve,
    pub q: QTable,
    pub v: VTable,
    pub policy: SoftPolicy,
    pub model: Option<GammaModelTable>,
}

/// Trains for `config.episodes` fixed-length episodes, evaluating the greedy
/// policy every `config.eval_every` episodes on a fixed evaluation seed.
pub fn run_actor_critic<E: Environment, R: Rng + ?Sized>(
    env: &E,
    config: &AcConfig,
    rng: &mut R,
) -> Result<AcOutcome> {
    let learner = ActorCritic::new(env.n_states(), env.n_actions(), config.clone())?;
    run_with(env, learner, rng)
}

/// [`run_actor_critic`] from a prepared learner.
pub fn run_with<E: Environment, R: Rng + ?Sized>(
    env: &E,
    mut learner: ActorCritic,
    rng: &mut R,
) -> Result<AcOutcome> {
    let config = learner.config.clone();
    let mut points = Vec::new();
    for episode in 1..=config.episodes {
        let mut state = env.reset(rng);
        for _ in 0..config.steps_per_episode {
            let s = env.index(&state);
            let a = learner.table.sample(s, rng);
            let (next, r) = env.step(&state, a, rng);
            let sample = TransitionSample {
                s,
                a,
                r,
                s_next: env.index(&next),
            };
            learner.observe(sample, rng)?;
            state = next;
        }
        if episode % config.eval_every == 0 {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_SEED_OFFSET);
            let (return_mean, return_std) = evaluate_policy(
                env,
                &learner.policy.greedy_table(),
                config.eval_episodes,
                config.steps_per_episode,
                &mut eval_rng,
            )?;
            points.push(CurvePoint {
                episode,
                return_mean,
                return_std,
            });
        }
    }
    Ok(AcOutcome {
        curve: LearningCurve {
            estimator: config.estimator,
            seed: config.seed,
            points,
        },
        model: learner.model().cloned(),
        q: learner.q,
        v: learner.v,
        policy: learner.policy,
    })
}
