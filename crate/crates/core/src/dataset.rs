//! Transition samples, replay buffers and rollout collection.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::DiscretizationSpec;
use crate::env::{env_step, ContinuousEnvState, EnvKind};
use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, PolicyTable, TabularMdp};

/// One observed transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Ordered transition store with optional FIFO capacity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionDataset {
    samples: VecDeque<TransitionSample>,
    capacity: Option<usize>,
}

impl TransitionDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: Some(capacity),
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Appends a sample, evicting the oldest when full.
    pub fn push(&mut self, sample: TransitionSample) {
        if let Some(cap) = self.capacity {
            if cap == 0 {
                return;
            }
            if self.samples.len() == cap {
                self.samples.pop_front();
            }
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> TransitionSample {
        self.samples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSample> {
        self.samples.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionSample {
        self.samples[rng.random_range(0..self.samples.len())]
    }

    /// Errors if any index falls outside the given shape.
    pub fn check_bounds(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for (i, t) in self.samples.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} ({}, {}, {}) outside {n_states} states x {n_actions} actions",
                    t.s, t.a, t.s_next
                )));
            }
        }
        Ok(())
    }

    /// Writes the `s,a,r,s_next` CSV format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for t in &self.samples {
            w.serialize(t).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(csv_error)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "a", "r", "s_next"] {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `s,a,r,s_next`".into(),
            });
        }
        let mut out = Self::new();
        for record in r.deserialize() {
            out.push(record.map_err(csv_error)?);
        }
        Ok(out)
    }
}

impl FromIterator<TransitionSample> for TransitionDataset {
    fn from_iter<I: IntoIterator<Item = TransitionSample>>(iter: I) -> Self {
        Self {
            samples: iter.into_iter().collect(),
            capacity: None,
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// An episodic environment with discrete state and action indices.
pub trait Environment {
    type State: Clone;

    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    /// Returns the next state and the reward `r(s_{t+1})`.
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R)
        -> (Self::State, f64);
    fn index(&self, state: &Self::State) -> usize;
}

/// A tabular MDP with an initial-state distribution.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    pub mdp: TabularMdp,
    pub initial: Vec<f64>,
}

impl MdpEnv {
    pub fn new(mdp: TabularMdp, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != mdp.n_states() {
            return Err(Error::DimensionMismatch(
                "initial distribution length differs from state count".into(),
            ));
        }
        let sum: f64 = initial.iter().sum();
        if initial.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "initial distribution is not a probability vector".into(),
            ));
        }
        Ok(Self { mdp, initial })
    }

    /// Every episode starts in `s0`.
    pub fn from_state(mdp: TabularMdp, s0: usize) -> Result<Self> {
        let mut initial = vec![0.0; mdp.n_states()];
        *initial
            .get_mut(s0)
            .ok_or_else(|| Error::InvalidArgument(format!("start state {s0} out of range")))? = 1.0;
        Self::new(mdp, initial)
    }

    pub fn uniform_start(mdp: TabularMdp) -> Self {
        let n = mdp.n_states();
        Self {
            mdp,
            initial: vec![1.0 / n as f64; n],
        }
    }
}

impl Environment for MdpEnv {
    type State = usize;

    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    fn step<R: Rng + ?Sized>(&self, &s: &usize, action: usize, rng: &mut R) -> (usize, f64) {
        let next = self.mdp.sample_next(s, action, rng);
        (next, self.mdp.reward()[next])
    }

    fn index(&self, &s: &usize) -> usize {
        s
    }
}

/// A continuous benchmark observed through a grid discretization.
#[derive(Debug, Clone)]
pub struct DiscretizedEnv {
    pub env: EnvKind,
    pub spec: DiscretizationSpec,
}

impl Environment for DiscretizedEnv {
    type State = ContinuousEnvState;

    fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> ContinuousEnvState {
        self.env.reset(rng)
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &ContinuousEnvState,
        action: usize,
        _rng: &mut R,
    ) -> (ContinuousEnvState, f64) {
        env_step(state, self.spec.actions[action]).expect("state dimension fixed by reset")
    }

    fn index(&self, state: &ContinuousEnvState) -> usize {
        self.spec
            .discretize(&state.values)
            .expect("state dimension fixed by reset")
    }
}

/// Rolls `policy` for exactly `n_steps` transitions, resetting every
/// `episode_length` steps.
pub fn collect_dataset<E: Environment, R: Rng + ?Sized>(
    env: &E,
    policy: &PolicyTable,
    n_steps: usize,
    episode_length: usize,
    rng: &mut R,
) -> Result<TransitionDataset> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if episode_length == 0 {
        return Err(Error::InvalidArgument("episode_length must be at least 1".into()));
    }
    if policy.n_states() != env.n_states() || policy.n_actions() != env.n_actions() {
        return Err(Error::DimensionMismatch(
            "policy shape differs from environment".into(),
        ));
    }
    let mut out = TransitionDataset::new();
    let mut state = env.reset(rng);
    for t in 0..n_steps {
        if t > 0 && t % episode_length == 0 {
            state = env.reset(rng);
        }
        let s = env.index(&state);
        let a = policy.sample(s, rng);
        let (next, r) = env.step(&state, a, rng);
        out.push(TransitionSample {
            s,
            a,
            r,
            s_next: env.index(&next),
        });
        state = next;
    }
    Ok(out)
}
