//! Deterministic N x N gridworld with a single absorbing goal.

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Moves in action-index order: up, down, left, right.
pub const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gridworld {
    pub size: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
}

impl Gridworld {
    /// Start in the top-left corner, goal in the bottom-right.
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("gridworld size must be positive".into()));
        }
        Ok(Self {
            size,
            start: (0, 0),
            goal: (size - 1, size - 1),
        })
    }

    pub fn n_states(&self) -> usize {
        self.size * self.size
    }

    pub fn index(&self, (row, col): (usize, usize)) -> usize {
        row * self.size + col
    }

    pub fn start_state(&self) -> usize {
        self.index(self.start)
    }

    pub fn goal_state(&self) -> usize {
        self.index(self.goal)
    }

    /// Cell reached by `action`; moving into a wall leaves the agent in place.
    pub fn next_cell(&self, (row, col): (usize, usize), action: usize) -> (usize, usize) {
        if (row, col) == self.goal {
            return self.goal;
        }
        let (dr, dc) = MOVES[action];
        let r = row as isize + dr;
        let c = col as isize + dc;
        let n = self.size as isize;
        if (0..n).contains(&r) && (0..n).contains(&c) {
            (r as usize, c as usize)
        } else {
            (row, col)
        }
    }

    /// Manhattan distance to the goal, the shortest-path length.
    pub fn distance_to_goal(&self, s: usize) -> usize {
        let (row, col) = (s / self.size, s % self.size);
        row.abs_diff(self.goal.0) + col.abs_diff(self.goal.1)
    }

    pub fn to_mdp(&self) -> TabularMdp {
        let n = self.n_states();
        let na = MOVES.len();
        let mut transition = vec![0.0; n * na * n];
        for s in 0..n {
            let cell = (s / self.size, s % self.size);
            for a in 0..na {
                let next = self.index(self.next_cell(cell, a));
                transition[(s * na + a) * n + next] = 1.0;
            }
        }
        let mut reward = vec![0.0; n];
        reward[self.goal_state()] = 1.0;
        TabularMdp::new(n, na, transition, reward).expect("gridworld rows are one-hot")
    }
}
