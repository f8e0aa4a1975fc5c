//! Categorical gamma-models trained by generative temporal-difference learning.
//!
//! A [`GammaModelTable`] predicts, for every `(s, a)`, a distribution over exit
//! states. Training regresses each row onto the bootstrapped target
//!
//! ```text
//! (1 - gamma) * delta(s') + gamma * mu_pi(. | s')
//! ```
//!
//! either as a full-expectation operator over a known MDP
//! ([`expected_td_sweep`]) or from sampled transitions with cross-entropy steps
//! and an exponentially-averaged target copy ([`sampled_td_train`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dataset::{TransitionDataset, TransitionSample};
use crate::error::{check_discount, Error, Result};
use crate::linalg::{axpy, tv_distance, Matrix};
use crate::mdp::{check_policy_shape, PolicyTable, TabularMdp};
use crate::tables::ExitTable;

/// Smallest probability represented when converting probabilities to logits.
const LOGIT_FLOOR: f64 = 1e-300;

/// Probabilities are floored here before taking logs in diagnostics.
pub const LOG_FLOOR: f64 = 1e-12;

/// Row-softmax categorical model `mu_theta(s_e | s, a)` with discount `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaModelTable {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    logits: Vec<f64>,
}

impl GammaModelTable {
    /// Zero logits: every row uniform.
    pub fn uniform(n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        check_discount(gamma)?;
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            logits: vec![0.0; n_states * n_actions * n_states],
        })
    }

    pub fn from_logits(n_states: usize, n_actions: usize, gamma: f64, logits: Vec<f64>) -> Result<Self> {
        check_discount(gamma)?;
        if logits.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "{} logits for a {n_states}x{n_actions}x{n_states} model",
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            logits,
        })
    }

    /// Model whose rows equal the given probabilities (zeros become a
    /// vanishing positive mass so logits stay finite).
    pub fn from_probs(probs: &ExitTable, gamma: f64) -> Result<Self> {
        check_discount(gamma)?;
        Ok(Self {
            n_states: probs.n_states(),
            n_actions: probs.n_actions(),
            gamma,
            logits: probs.as_slice().iter().map(|&p| p.max(LOGIT_FLOOR).ln()).collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.row_start(s, a);
        &self.logits[start..start + self.n_states]
    }

    fn row_start(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_states
    }

    /// `mu_theta(. | s, a)`.
    pub fn prob_row(&self, s: usize, a: usize) -> Vec<f64> {
        softmax(self.logits_row(s, a))
    }

    /// All probability rows.
    pub fn probs(&self) -> ExitTable {
        let data = self
            .logits
            .chunks(self.n_states.max(1))
            .flat_map(softmax)
            .collect();
        ExitTable::from_vec(self.n_states, self.n_actions, data).expect("shape preserved")
    }

    fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{} but policy is {}x{}",
                self.n_states,
                self.n_actions,
                policy.n_states(),
                policy.n_actions()
            )));
        }
        Ok(())
    }
}

/// Fills `out` with `exp(l - max l)` and returns the sum.
fn exp_weights(logits: &[f64], out: &mut Vec<f64>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    let mut total = 0.0;
    out.extend(logits.iter().map(|&l| {
        let w = (l - max).exp();
        total += w;
        w
    }));
    total
}

/// Inverse-CDF draw from unnormalized nonnegative weights.
fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Delayed copy of a model whose logits track the live model by EMA:
/// `target <- tau * live + (1 - tau) * target`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub model: GammaModelTable,
    pub tau: f64,
}

impl TargetModel {
    pub fn new(live: &GammaModelTable, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            model: live.clone(),
            tau,
        })
    }

    pub fn update(&mut self, live: &GammaModelTable) {
        debug_assert_eq!(live.logits.len(), self.model.logits.len());
        for (t, &l) in self.model.logits.iter_mut().zip(&live.logits) {
            *t = self.tau * l + (1.0 - self.tau) * *t;
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")))
    }
}

/// `U[s] = sum_a pi(a|s) mu(. | s, a)`.
pub fn state_conditioned(model: &GammaModelTable, policy: &PolicyTable) -> Result<Matrix> {
    model.check_policy(policy)?;
    Ok(state_conditioned_probs(&model.probs(), policy))
}

pub(crate) fn state_conditioned_probs(probs: &ExitTable, policy: &PolicyTable) -> Matrix {
    let n = probs.n_states();
    let mut out = Matrix::zeros(n, n);
    for s in 0..n {
        let dst = out.row_mut(s);
        for (a, &pa) in policy.row(s).iter().enumerate() {
            if pa != 0.0 {
                axpy(pa, probs.row(s, a), dst);
            }
        }
    }
    out
}

/// Single state-conditioned row `sum_a pi(a|s) mu(. | s, a)`.
pub fn state_conditioned_row(model: &GammaModelTable, policy: &PolicyTable, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; model.n_states];
    for (a, &pa) in policy.row(s).iter().enumerate() {
        if pa != 0.0 {
            axpy(pa, &model.prob_row(s, a), &mut out);
        }
    }
    out
}

/// `(1 - gamma) delta(s') + gamma * mu_bar_pi(. | s')`.
pub fn bootstrapped_target(
    sample: &TransitionSample,
    target: &TargetModel,
    policy: &PolicyTable,
) -> Result<Vec<f64>> {
    let model = &target.model;
    model.check_policy(policy)?;
    if sample.s_next >= model.n_states {
        return Err(Error::InvalidArgument(format!(
            "next state {} out of range",
            sample.s_next
        )));
    }
    let gamma = model.gamma;
    let mut out: Vec<f64> = state_conditioned_row(model, policy, sample.s_next)
        .into_iter()
        .map(|p| gamma * p)
        .collect();
    out[sample.s_next] += 1.0 - gamma;
    Ok(out)
}

/// One application of the occupancy operator:
/// `mu(.|s,a) <- (1 - gamma) p(.|s,a) + gamma sum_s' p(s'|s,a) mu_pi(.|s')`.
pub fn expected_td_sweep(
    model: &GammaModelTable,
    mdp: &TabularMdp,
    policy: &PolicyTable,
) -> Result<GammaModelTable> {
    expected_td_iterate(model, mdp, policy, 1)
}

/// `sweeps` applications of [`expected_td_sweep`], carried out in probability
/// space and converted back to logits once.
pub fn expected_td_iterate(
    model: &GammaModelTable,
    mdp: &TabularMdp,
    policy: &PolicyTable,
    sweeps: usize,
) -> Result<GammaModelTable> {
    check_shapes(model, mdp, policy)?;
    let mut probs = model.probs();
    for _ in 0..sweeps {
        probs = occupancy_operator(&probs, mdp, policy, model.gamma);
    }
    GammaModelTable::from_probs(&probs, model.gamma)
}

/// Iterates the operator until successive tables differ by at most
/// `tolerance` in sup-L1, or `max_sweeps` is reached. Returns the model and
/// the number of sweeps applied.
pub fn expected_td_converge(
    model: &GammaModelTable,
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<(GammaModelTable, usize)> {
    expected_td_observed(model, mdp, policy, tolerance, max_sweeps, |_, _, _| {})
}

/// [`expected_td_converge`] that calls `observe(sweep, change, probs)` after
/// every sweep, where `change` is the sup-L1 difference to the previous table.
pub fn expected_td_observed<F>(
    model: &GammaModelTable,
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tolerance: f64,
    max_sweeps: usize,
    mut observe: F,
) -> Result<(GammaModelTable, usize)>
where
    F: FnMut(usize, f64, &ExitTable),
{
    check_shapes(model, mdp, policy)?;
    let mut probs = model.probs();
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let next = occupancy_operator(&probs, mdp, policy, model.gamma);
        sweeps += 1;
        let change = next.sup_l1(&probs);
        probs = next;
        observe(sweeps, change, &probs);
        if change <= tolerance {
            break;
        }
    }
    Ok((GammaModelTable::from_probs(&probs, model.gamma)?, sweeps))
}

fn check_shapes(model: &GammaModelTable, mdp: &TabularMdp, policy: &PolicyTable) -> Result<()> {
    check_policy_shape(mdp, policy)?;
    model.check_policy(policy)
}

pub(crate) fn occupancy_operator(
    probs: &ExitTable,
    mdp: &TabularMdp,
    policy: &PolicyTable,
    gamma: f64,
) -> ExitTable {
    let u = state_conditioned_probs(probs, policy);
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = ExitTable::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            let p = mdp.transition_row(s, a);
            let row = out.row_mut(s, a);
            for (next, &w) in p.iter().enumerate() {
                if w != 0.0 {
                    row[next] += (1.0 - gamma) * w;
                    axpy(gamma * w, u.row(next), row);
                }
            }
        }
    }
    out
}

/// Squared log-density error of the model row against the bootstrapped target
/// mixture, averaged under the target: `sum_e T(e) (log mu(e|s,a) - log T(e))^2`.
pub fn density_regression_loss(
    model: &GammaModelTable,
    target: &TargetModel,
    sample: &TransitionSample,
    policy: &PolicyTable,
) -> Result<f64> {
    if model.n_states != target.model.n_states || model.n_actions != target.model.n_actions {
        return Err(Error::DimensionMismatch("model and target shapes differ".into()));
    }
    let t = bootstrapped_target(sample, target, policy)?;
    let m = model.prob_row(sample.s, sample.a);
    Ok(log_regression(&m, &t))
}

fn log_regression(model_row: &[f64], target_row: &[f64]) -> f64 {
    model_row
        .iter()
        .zip(target_row)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&m, &t)| {
            let d = m.max(LOG_FLOOR).ln() - t.max(LOG_FLOOR).ln();
            t * d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Full-expectation sweeps over a known MDP.
    Expected,
    /// Cross-entropy steps toward sampled bootstrapped targets.
    Sampled,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected" => Ok(TrainMode::Expected),
            "sampled" => Ok(TrainMode::Sampled),
            other => Err(Error::InvalidArgument(format!("unknown training mode `{other}`"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Expected => "expected",
            TrainMode::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub gamma: f64,
    /// Cross-entropy step size on the logits.
    pub step_size: f64,
    /// EMA rate of the target model.
    pub tau: f64,
    pub batch_size: usize,
    /// Gradient steps (sampled) or sweeps (expected).
    pub steps: usize,
    pub seed: u64,
    /// Emit a log line every this many steps; 0 disables logging.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Sampled,
            gamma: 0.5,
            step_size: 1e-2,
            tau: 5e-3,
            batch_size: 128,
            steps: 50_000,
            seed: 0,
            log_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_discount(self.gamma)?;
        check_tau(self.tau)?;
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One progress record: `step,loss[,tv_to_oracle]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLine {
    pub step: usize,
    pub loss: f64,
    pub tv_to_oracle: Option<f64>,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.step, self.loss)?;
        if let Some(tv) = self.tv_to_oracle {
            write!(f, ",{tv}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GammaModelTable,
    pub target: TargetModel,
    pub log: Vec<LogLine>,
    /// `(s, a)` pairs absent from the dataset; their rows stay uniform.
    pub unvisited: Vec<(usize, usize)>,
}

/// Incremental sampled gamma-TD learner.
///
/// The target model is kept lazily: a target row is only brought up to date
/// when it is read or when its live row is about to change. Between changes the
/// live row is constant, so `k` EMA updates collapse to
/// `target = live + (1 - tau)^k (target - live)`.
#[derive(Debug, Clone)]
pub struct SampledTrainer {
    live: GammaModelTable,
    target_logits: Vec<f64>,
    synced_at: Vec<u64>,
    updates: u64,
    tau: f64,
    scratch: Vec<f64>,
}

impl SampledTrainer {
    pub fn new(initial: GammaModelTable, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let rows = initial.n_states * initial.n_actions;
        Ok(Self {
            scratch: Vec::with_capacity(initial.n_states),
            target_logits: initial.logits.clone(),
            synced_at: vec![0; rows],
            updates: 0,
            live: initial,
            tau,
        })
    }

    pub fn live(&self) -> &GammaModelTable {
        &self.live
    }

    /// Number of completed EMA updates.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Materialized target model.
    pub fn target(&self) -> TargetModel {
        let mut model = self.live.clone();
        for row in 0..self.synced_at.len() {
            let start = row * self.live.n_states;
            let range = start..start + self.live.n_states;
            let decay = self.decay(row);
            for (t, (&tl, &l)) in model.logits[range.clone()]
                .iter_mut()
                .zip(self.target_logits[range.clone()].iter().zip(&self.live.logits[range]))
            {
                *t = l + decay * (tl - l);
            }
        }
        TargetModel { model, tau: self.tau }
    }

    fn decay(&self, row: usize) -> f64 {
        let k = self.updates - self.synced_at[row];
        (1.0 - self.tau).powi(k.min(i32::MAX as u64) as i32)
    }

    fn sync_row(&mut self, row: usize) {
        if self.synced_at[row] == self.updates {
            return;
        }
        let decay = self.decay(row);
        let start = row * self.live.n_states;
        let n = self.live.n_states;
        for (t, &l) in self.target_logits[start..start + n]
            .iter_mut()
            .zip(&self.live.logits[start..start + n])
        {
            *t = l + decay * (*t - l);
        }
        self.synced_at[row] = self.updates;
    }

    fn target_probs(&mut self, s: usize, a: usize) -> Vec<f64> {
        let row = s * self.live.n_actions + a;
        self.sync_row(row);
        let start = row * self.live.n_states;
        softmax(&self.target_logits[start..start + self.live.n_states])
    }

    /// Draws an exit state from the bootstrapped target of `sample`.
    pub fn sample_target<R: Rng + ?Sized>(
        &mut self,
        sample: &TransitionSample,
        policy: &PolicyTable,
        rng: &mut R,
    ) -> usize {
        let u: f64 = rng.random();
        if u >= self.live.gamma {
            return sample.s_next;
        }
        let a_next = policy.sample(sample.s_next, rng);
        let row = sample.s_next * self.live.n_actions + a_next;
        self.sync_row(row);
        let start = row * self.live.n_states;
        exp_weights(&self.target_logits[start..start + self.live.n_states], &mut self.scratch);
        sample_weighted(&self.scratch, rng)
    }

    /// One batch of cross-entropy steps followed by one EMA update. Returns
    /// the batch mean cross-entropy of the sampled targets under the live model.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        dataset: &TransitionDataset,
        policy: &PolicyTable,
        batch_size: usize,
        step_size: f64,
        rng: &mut R,
    ) -> f64 {
        let mut batch: Vec<(usize, usize)> = (0..batch_size)
            .map(|_| {
                let t = dataset.sample(rng);
                let exit = self.sample_target(&t, policy, rng);
                (t.s * self.live.n_actions + t.a, exit)
            })
            .collect();
        batch.sort_unstable();
        let n = self.live.n_states;
        let scale = step_size / batch_size as f64;
        let mut cross_entropy = 0.0;
        let mut i = 0;
        while i < batch.len() {
            let row = batch[i].0;
            let mut j = i;
            while j < batch.len() && batch[j].0 == row {
                j += 1;
            }
            self.sync_row(row);
            let start = row * n;
            let logits = &mut self.live.logits[start..start + n];
            let total = exp_weights(logits, &mut self.scratch);
            let count = (j - i) as f64;
            let shrink = scale * count / total;
            for (l, &w) in logits.iter_mut().zip(&self.scratch) {
                *l -= shrink * w;
            }
            for &(_, exit) in &batch[i..j] {
                logits[exit] += scale;
                cross_entropy -= (self.scratch[exit] / total).max(LOG_FLOOR).ln();
            }
            i = j;
        }
        self.updates += 1;
        cross_entropy / batch_size as f64
    }

    /// Mean [`density_regression_loss`] over `samples`, using the current target.
    pub fn regression_loss(&mut self, samples: &[TransitionSample], policy: &PolicyTable) -> f64 {
        let gamma = self.live.gamma;
        let total: f64 = samples
            .iter()
            .map(|t| {
                let mut target = vec![0.0; self.live.n_states];
                for (a, &pa) in policy.row(t.s_next).iter().enumerate() {
                    if pa != 0.0 {
                        axpy(gamma * pa, &self.target_probs(t.s_next, a), &mut target);
                    }
                }
                target[t.s_next] += 1.0 - gamma;
                log_regression(&self.live.prob_row(t.s, t.a), &target)
            })
            .sum();
        total / samples.len().max(1) as f64
    }
}

/// Largest per-row total-variation distance between a model and reference rows.
pub fn max_row_tv(model: &GammaModelTable, reference: &ExitTable) -> f64 {
    model
        .probs()
        .rows()
        .zip(reference.rows())
        .map(|(a, b)| tv_distance(a, b))
        .fold(0.0, f64::max)
}

/// Trains a model from zero logits on sampled transitions.
pub fn sampled_td_train<R: Rng + ?Sized>(
    dataset: &TransitionDataset,
    policy: &PolicyTable,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    sampled_td_train_monitored(dataset, policy, config, None, rng)
}

/// [`sampled_td_train`] that also logs the max per-row TV to `oracle`.
pub fn sampled_td_train_monitored<R: Rng + ?Sized>(
    dataset: &TransitionDataset,
    policy: &PolicyTable,
    config: &TrainConfig,
    oracle: Option<&ExitTable>,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n, na) = (policy.n_states(), policy.n_actions());
    dataset.check_bounds(n, na)?;
    let mut visited = vec![false; n * na];
    for t in dataset.iter() {
        visited[t.s * na + t.a] = true;
    }
    let unvisited = (0..n * na)
        .filter(|&r| !visited[r])
        .map(|r| (r / na, r % na))
        .collect();

    let mut trainer = SampledTrainer::new(GammaModelTable::uniform(n, na, config.gamma)?, config.tau)?;
    let mut log = Vec::new();
    for step in 1..=config.steps {
        trainer.step(dataset, policy, config.batch_size, config.step_size, rng);
        if config.log_every > 0 && (step % config.log_every == 0 || step == config.steps) {
            let probe: Vec<TransitionSample> =
                (0..config.batch_size).map(|_| dataset.sample(rng)).collect();
            let loss = trainer.regression_loss(&probe, policy);
            let tv_to_oracle = oracle.map(|o| max_row_tv(trainer.live(), o));
            log.push(LogLine {
                step,
                loss,
                tv_to_oracle,
            });
        }
    }
    let target = trainer.target();
    Ok(TrainOutcome {
        model: trainer.live,
        target,
        log,
        unvisited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_dataset, MdpEnv};
    use crate::oracle::{exact_occupancy, exact_successor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(s: usize, a: usize, s_next: usize) -> TransitionSample {
        TransitionSample { s, a, r: 0.0, s_next }
    }

    fn assert_rows_valid(table: &ExitTable) {
        for row in table.rows() {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn target_at_zero_discount_is_delta() {
        let model = GammaModelTable::uniform(3, 2, 0.0).unwrap();
        let target = TargetModel::new(&model, 1.0).unwrap();
        let t = bootstrapped_target(&sample(0, 1, 2), &target, &PolicyTable::uniform(3, 2)).unwrap();
        assert_eq!(t, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn target_mixes_with_uniform_model() {
        let n = 4;
        let model = GammaModelTable::uniform(n, 2, 0.5).unwrap();
        let target = TargetModel::new(&model, 0.5).unwrap();
        let t = bootstrapped_target(&sample(0, 0, 1), &target, &PolicyTable::uniform(n, 2)).unwrap();
        for (i, &p) in t.iter().enumerate() {
            let expected = 0.5 / n as f64 + if i == 1 { 0.5 } else { 0.0 };
            assert!((p - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_point_target_equals_model_row() {
        let mdp = TabularMdp::swap_chain();
        let pi = PolicyTable::uniform(2, 1);
        let mu = exact_occupancy(&mdp, &pi, 0.5).unwrap();
        let model = GammaModelTable::from_probs(&mu.table, 0.5).unwrap();
        let target = TargetModel::new(&model, 1.0).unwrap();
        let t = bootstrapped_target(&sample(0, 0, 1), &target, &pi).unwrap();
        for (x, y) in t.iter().zip(mu.row(0, 0)) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn sweep_keeps_exact_occupancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = TabularMdp::random(7, 3, &mut rng);
        let pi = PolicyTable::random(7, 3, &mut rng);
        let mu = exact_occupancy(&mdp, &pi, 0.8).unwrap();
        let model = GammaModelTable::from_probs(&mu.table, 0.8).unwrap();
        let next = expected_td_sweep(&model, &mdp, &pi).unwrap();
        assert!(next.probs().max_abs_diff(&mu.table) <= 1e-12);
    }

    #[test]
    fn sweep_contraction_bound_from_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = TabularMdp::random(10, 2, &mut rng);
        let pi = PolicyTable::random(10, 2, &mut rng);
        let gamma: f64 = 0.7;
        let mu = exact_occupancy(&mdp, &pi, gamma).unwrap();
        let mut model = GammaModelTable::uniform(10, 2, gamma).unwrap();
        for k in 1..=30 {
            model = expected_td_sweep(&model, &mdp, &pi).unwrap();
            let err = model.probs().sup_l1(&mu.table);
            assert!(err <= 2.0 * gamma.powi(k), "sweep {k}: {err}");
        }
    }

    #[test]
    fn zero_discount_converges_in_one_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(5, 2, &mut rng);
        let pi = PolicyTable::uniform(5, 2);
        let model = GammaModelTable::uniform(5, 2, 0.0).unwrap();
        let next = expected_td_sweep(&model, &mdp, &pi).unwrap();
        let p = ExitTable::from_vec(5, 2, mdp.transitions().to_vec()).unwrap();
        assert!(next.probs().max_abs_diff(&p) <= 1e-12);
    }

    #[test]
    fn iterate_matches_repeated_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(6, 2, &mut rng);
        let pi = PolicyTable::random(6, 2, &mut rng);
        let m0 = GammaModelTable::uniform(6, 2, 0.6).unwrap();
        let mut step = m0.clone();
        for _ in 0..5 {
            step = expected_td_sweep(&step, &mdp, &pi).unwrap();
        }
        let batch = expected_td_iterate(&m0, &mdp, &pi, 5).unwrap();
        assert!(step.probs().max_abs_diff(&batch.probs()) <= 1e-12);
    }

    #[test]
    fn state_conditioned_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(6, 2, &mut rng);
        let model = GammaModelTable::from_probs(
            &exact_occupancy(&mdp, &PolicyTable::uniform(6, 2), 0.5).unwrap().table,
            0.5,
        )
        .unwrap();

        let det = PolicyTable::deterministic(2, &[0, 1, 1, 0, 0, 1]).unwrap();
        let u = state_conditioned(&model, &det).unwrap();
        for s in 0..6 {
            assert_eq!(u.row(s), model.prob_row(s, det.greedy_action(s)).as_slice());
        }

        let uni = PolicyTable::uniform(6, 2);
        let u = state_conditioned(&model, &uni).unwrap();
        for s in 0..6 {
            let (r0, r1) = (model.prob_row(s, 0), model.prob_row(s, 1));
            for e in 0..6 {
                assert!((u[(s, e)] - 0.5 * (r0[e] + r1[e])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn state_conditioned_closed_form() {
        // U = (1 - gamma) P_pi (I - gamma P_pi)^{-1}
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = TabularMdp::random(8, 3, &mut rng);
        let pi = PolicyTable::random(8, 3, &mut rng);
        let gamma = 0.75;
        let mu = exact_occupancy(&mdp, &pi, gamma).unwrap();
        let model = GammaModelTable::from_probs(&mu.table, gamma).unwrap();
        let u = state_conditioned(&model, &pi).unwrap();
        let p_pi = crate::mdp::policy_transition_matrix(&mdp, &pi).unwrap();
        let closed = p_pi.matmul(&p_pi.resolvent(gamma).unwrap()).unwrap();
        for s in 0..8 {
            assert!((u.row(s).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for e in 0..8 {
                assert!((u[(s, e)] - (1.0 - gamma) * closed[(s, e)]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn regression_loss_cases() {
        let mdp = TabularMdp::swap_chain();
        let pi = PolicyTable::uniform(2, 1);
        let mu = exact_occupancy(&mdp, &pi, 0.5).unwrap();
        let exact = GammaModelTable::from_probs(&mu.table, 0.5).unwrap();
        let target = TargetModel::new(&exact, 1.0).unwrap();
        assert!(density_regression_loss(&exact, &target, &sample(0, 0, 1), &pi).unwrap() <= 1e-9);

        let n = 3;
        let zero = GammaModelTable::uniform(n, 1, 0.0).unwrap();
        let t0 = TargetModel::new(&zero, 1.0).unwrap();
        let loss = density_regression_loss(&zero, &t0, &sample(0, 0, 1), &PolicyTable::uniform(n, 1));
        assert!(loss.unwrap() > 0.0);
    }

    #[test]
    fn regression_loss_decreases_under_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = TabularMdp::random_deterministic(5, 2, &mut rng);
        let pi = PolicyTable::random(5, 2, &mut rng);
        let total_loss = |m: &GammaModelTable| -> f64 {
            let target = TargetModel::new(m, 1.0).unwrap();
            let mut total = 0.0;
            for s in 0..5 {
                for a in 0..2 {
                    let next = crate::mdp::argmax(mdp.transition_row(s, a));
                    total += density_regression_loss(m, &target, &sample(s, a, next), &pi).unwrap();
                }
            }
            total
        };
        let mut model = GammaModelTable::uniform(5, 2, 0.8).unwrap();
        let mut prev = total_loss(&model);
        for k in 0..120 {
            model = expected_td_sweep(&model, &mdp, &pi).unwrap();
            let loss = total_loss(&model);
            assert!(loss <= prev + 1e-15, "sweep {k}: {prev} -> {loss}");
            prev = loss;
        }
        assert!(prev < 1e-6, "{prev}");
    }

    #[test]
    fn ema_recurrence_closed_form() {
        let n = 4;
        let l0 = GammaModelTable::from_logits(n, 1, 0.5, vec![0.3, -1.0, 2.0, 0.0, 1.0, 1.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 3.0, -3.0, 1.5, 0.2])
            .unwrap();
        let live = GammaModelTable::from_logits(n, 1, 0.5, (0..16).map(|i| i as f64 * 0.1 - 0.7).collect())
            .unwrap();
        let tau = 0.05;
        let mut target = TargetModel::new(&l0, tau).unwrap();
        for steps in 1..=60 {
            target.update(&live);
            let keep = (1.0 - tau).powi(steps);
            for i in 0..16 {
                let expected = (1.0 - keep) * live.logits()[i] + keep * l0.logits()[i];
                assert!((target.model.logits()[i] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lazy_target_matches_eager_ema() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = TabularMdp::random(5, 2, &mut rng);
        let pi = PolicyTable::random(5, 2, &mut rng);
        let data = collect_dataset(&MdpEnv::uniform_start(mdp), &pi, 300, 30, &mut rng).unwrap();
        let tau = 0.1;
        let init = GammaModelTable::uniform(5, 2, 0.7).unwrap();
        let mut trainer = SampledTrainer::new(init.clone(), tau).unwrap();
        let mut eager = TargetModel::new(&init, tau).unwrap();
        for _ in 0..50 {
            trainer.step(&data, &pi, 4, 0.5, &mut rng);
            eager.update(trainer.live());
            let lazy = trainer.target();
            for (a, b) in lazy.model.logits().iter().zip(eager.model.logits()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unit_tau_target_tracks_live() {
        let mdp = TabularMdp::swap_chain();
        let pi = PolicyTable::uniform(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = collect_dataset(&MdpEnv::uniform_start(mdp), &pi, 50, 10, &mut rng).unwrap();
        let mut trainer = SampledTrainer::new(GammaModelTable::uniform(2, 1, 0.5).unwrap(), 1.0).unwrap();
        for _ in 0..20 {
            trainer.step(&data, &pi, 8, 0.3, &mut rng);
            assert_eq!(trainer.target().model.logits(), trainer.live().logits());
        }
    }

    #[test]
    fn zero_discount_training_learns_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mdp = TabularMdp::random(3, 1, &mut rng);
        let pi = PolicyTable::uniform(3, 1);
        let data = collect_dataset(&MdpEnv::uniform_start(mdp), &pi, 30_000, 50, &mut rng).unwrap();
        let mut freq = ExitTable::zeros(3, 1);
        let mut counts = [0.0; 3];
        for t in data.iter() {
            freq.row_mut(t.s, 0)[t.s_next] += 1.0;
            counts[t.s] += 1.0;
        }
        for s in 0..3 {
            freq.row_mut(s, 0).iter_mut().for_each(|x| *x /= counts[s]);
        }
        let config = TrainConfig {
            gamma: 0.0,
            steps: 20_000,
            step_size: 0.1,
            log_every: 0,
            ..TrainConfig::default()
        };
        let out = sampled_td_train(&data, &pi, &config, &mut rng).unwrap();
        assert_rows_valid(&out.model.probs());
        assert!(max_row_tv(&out.model, &freq) <= 0.02);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mdp = TabularMdp::swap_chain();
        let pi = PolicyTable::uniform(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = collect_dataset(&MdpEnv::uniform_start(mdp), &pi, 100, 10, &mut rng).unwrap();
        let config = TrainConfig { steps: 300, log_every: 100, ..TrainConfig::default() };
        let run = || sampled_td_train(&data, &pi, &config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let pi = PolicyTable::uniform(2, 1);
        let err = sampled_td_train(&TransitionDataset::new(), &pi, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn unvisited_rows_are_reported_and_uniform() {
        let pi = PolicyTable::uniform(3, 2);
        let data: TransitionDataset = [sample(0, 0, 1), sample(1, 1, 2)].into_iter().collect();
        let config = TrainConfig { steps: 50, log_every: 0, ..TrainConfig::default() };
        let out = sampled_td_train(&data, &pi, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.unvisited, vec![(0, 1), (1, 0), (2, 0), (2, 1)]);
        assert!(out.model.logits_row(2, 1).iter().all(|&l| l == 0.0));
    }

    #[test]
    fn learned_occupancy_matches_scaled_successor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = TabularMdp::random(6, 2, &mut rng);
        let pi = PolicyTable::random(6, 2, &mut rng);
        let gamma = 0.6;
        let (model, _) = expected_td_converge(
            &GammaModelTable::uniform(6, 2, gamma).unwrap(), &mdp, &pi, 1e-14, 500,
        )
        .unwrap();
        let m = exact_successor(&mdp, &pi, gamma).unwrap();
        assert!(model.probs().max_abs_diff(&m.table.scaled(1.0 - gamma)) <= 1e-10);
    }
}
