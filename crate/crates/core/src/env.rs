//! Continuous-state control benchmarks: pendulum swing-up and mountain car.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Continuous benchmark identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    /// State `[theta, theta_dot]`, `theta = 0` upright.
    Pendulum,
    /// State `[x, x_dot]`.
    MountainCar,
}

impl EnvKind {
    pub fn dim(self) -> usize {
        2
    }

    pub fn action_bounds(self) -> (f64, f64) {
        match self {
            EnvKind::Pendulum => (-pendulum::MAX_TORQUE, pendulum::MAX_TORQUE),
            EnvKind::MountainCar => (-1.0, 1.0),
        }
    }

    /// Box containing every reachable state, used as the default discretization range.
    pub fn state_bounds(self) -> [(f64, f64); 2] {
        match self {
            EnvKind::Pendulum => [(-PI, PI), (-pendulum::MAX_SPEED, pendulum::MAX_SPEED)],
            EnvKind::MountainCar => [
                (mountain_car::MIN_POSITION, mountain_car::MAX_POSITION),
                (-mountain_car::MAX_SPEED, mountain_car::MAX_SPEED),
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::MountainCar => "mountain_car",
        }
    }

    /// Draws a start state from the benchmark's initial distribution.
    pub fn reset<R: Rng + ?Sized>(self, rng: &mut R) -> ContinuousEnvState {
        let values = match self {
            EnvKind::Pendulum => vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)],
            EnvKind::MountainCar => vec![rng.random_range(-0.6..-0.4), 0.0],
        };
        ContinuousEnvState { env: self, values }
    }

    /// Reward attached to a state (action cost excluded).
    pub fn state_reward(self, values: &[f64]) -> f64 {
        match self {
            EnvKind::Pendulum => {
                let theta = wrap_angle(values[0]);
                -(theta * theta + 0.1 * values[1] * values[1])
            }
            EnvKind::MountainCar => values[0],
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "mountain_car" | "mountaincar" => Ok(EnvKind::MountainCar),
            other => Err(Error::UnknownEnvironment(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousEnvState {
    pub env: EnvKind,
    pub values: Vec<f64>,
}

impl ContinuousEnvState {
    pub fn new(env: EnvKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != env.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{env} state has dimension {}, got {}",
                env.dim(),
                values.len()
            )));
        }
        Ok(Self { env, values })
    }
}

pub mod pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_SPEED: f64 = 8.0;
}

pub mod mountain_car {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.5;
    pub const FORCE: f64 = 0.0015;
    pub const GRAVITY: f64 = 0.0025;
}

/// Advances one step. Actions outside the bounds are clipped.
///
/// The reward is that of the resulting state (plus the pendulum's torque cost).
pub fn env_step(state: &ContinuousEnvState, action: f64) -> Result<(ContinuousEnvState, f64)> {
    if state.values.len() != state.env.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} state has dimension {}",
            state.env,
            state.values.len()
        )));
    }
    let (lo, hi) = state.env.action_bounds();
    let u = action.clamp(lo, hi);
    let next = match state.env {
        EnvKind::Pendulum => {
            use pendulum::*;
            let (theta, theta_dot) = (state.values[0], state.values[1]);
            let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin()
                + 3.0 / (MASS * LENGTH * LENGTH) * u;
            let new_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
            let new_theta = wrap_angle(theta + new_dot * DT);
            vec![new_theta, new_dot]
        }
        EnvKind::MountainCar => {
            use mountain_car::*;
            let (x, x_dot) = (state.values[0], state.values[1]);
            let mut v = (x_dot + FORCE * u - GRAVITY * (3.0 * x).cos()).clamp(-MAX_SPEED, MAX_SPEED);
            let new_x = (x + v).clamp(MIN_POSITION, MAX_POSITION);
            if new_x == MIN_POSITION && v < 0.0 {
                v = 0.0;
            }
            vec![new_x, v]
        }
    };
    let mut reward = state.env.state_reward(&next);
    if state.env == EnvKind::Pendulum {
        reward -= 0.001 * u * u;
    }
    Ok((
        ContinuousEnvState {
            env: state.env,
            values: next,
        },
        reward,
    ))
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}
