//! Plain tabular containers shared across modules.

use crate::error::{Error, Result};

/// Per-`(state, action)` rows over exit states, stored flat as
/// `[state][action][exit_state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitTable {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl ExitTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            data: vec![0.0; n_states * n_actions * n_states],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n_states}x{n_actions}x{n_states} table",
                data.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            data,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.data[start..start + self.n_states]
    }

    pub fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &mut self.data[start..start + self.n_states]
    }

    /// Rows in `(s, a)` order.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_states.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest per-row L1 distance.
    pub fn sup_l1(&self, other: &Self) -> f64 {
        self.rows()
            .zip(other.rows())
            .map(|(a, b)| crate::linalg::l1_distance(a, b))
            .fold(0.0, f64::max)
    }
}

/// State-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    pub values: Vec<f64>,
}

impl VTable {
    pub fn zeros(n_states: usize) -> Self {
        Self {
            values: vec![0.0; n_states],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Action-value table indexed `[state][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len() / self.n_actions.max(1)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }
}
