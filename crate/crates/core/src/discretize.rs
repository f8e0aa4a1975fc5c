//! Uniform grid discretization of continuous benchmarks into tabular MDPs.

use crate::env::{env_step, ContinuousEnvState, EnvKind};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// One discretized dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bin count must be at least 1".into()));
        }
        if !(lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "axis bounds must be ordered, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper, bins })
    }

    fn width(&self) -> f64 {
        (self.upper - self.lower) / self.bins as f64
    }

    /// Bin of `x`, clamping out-of-range values to the edge bins.
    pub fn bin(&self, x: f64) -> usize {
        let raw = ((x - self.lower) / self.width()).floor();
        if raw <= 0.0 || raw.is_nan() {
            0
        } else {
            (raw as usize).min(self.bins - 1)
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lower + (bin as f64 + 0.5) * self.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationSpec {
    pub axes: Vec<Axis>,
    /// Representative continuous actions; action index `i` applies `actions[i]`.
    pub actions: Vec<f64>,
}

impl DiscretizationSpec {
    pub fn new(axes: Vec<Axis>, actions: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || actions.is_empty() {
            return Err(Error::InvalidArgument(
                "discretization needs at least one axis and one action".into(),
            ));
        }
        Ok(Self { axes, actions })
    }

    /// Grid over the environment's state box with `n_actions` evenly spaced actions.
    pub fn for_env(env: EnvKind, bins: &[usize], n_actions: usize) -> Result<Self> {
        let bounds = env.state_bounds();
        if bins.len() != bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{env} needs {} bin counts, got {}",
                bounds.len(),
                bins.len()
            )));
        }
        let axes = bounds
            .iter()
            .zip(bins)
            .map(|(&(lo, hi), &n)| Axis::new(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi) = env.action_bounds();
        let actions = match n_actions {
            0 => return Err(Error::InvalidArgument("n_actions must be at least 1".into())),
            1 => vec![0.5 * (lo + hi)],
            n => (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self::new(axes, actions)
    }

    pub fn n_states(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Row-major composite bin index of a point.
    pub fn discretize(&self, values: &[f64]) -> Result<usize> {
        if values.len() != self.axes.len() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, discretization has {}",
                values.len(),
                self.axes.len()
            )));
        }
        Ok(self
            .axes
            .iter()
            .zip(values)
            .fold(0, |acc, (axis, &x)| acc * axis.bins + axis.bin(x)))
    }

    /// Midpoint of the cell with composite index `index`.
    pub fn bin_center(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut out = vec![0.0; self.axes.len()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            out[d] = axis.center(rem % axis.bins);
            rem /= axis.bins;
        }
        out
    }
}

/// Tabular MDP whose states are grid cells: each `(cell, action)` steps the
/// continuous dynamics once from the cell center. State rewards are those of
/// the cell centers.
pub fn discretized_mdp(env: EnvKind, spec: &DiscretizationSpec) -> Result<TabularMdp> {
    if spec.axes.len() != env.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{env} has dimension {}, discretization has {}",
            env.dim(),
            spec.axes.len()
        )));
    }
    let n = spec.n_states();
    let na = spec.n_actions();
    let mut transition = vec![0.0; n * na * n];
    let mut reward = Vec::with_capacity(n);
    for s in 0..n {
        let center = spec.bin_center(s);
        reward.push(env.state_reward(&center));
        let state = ContinuousEnvState::new(env, center)?;
        for (a, &u) in spec.actions.iter().enumerate() {
            let (next, _) = env_step(&state, u)?;
            let s_next = spec.discretize(&next.values)?;
            transition[(s * na + a) * n + s_next] = 1.0;
        }
    }
    TabularMdp::new(n, na, transition, reward)
}
