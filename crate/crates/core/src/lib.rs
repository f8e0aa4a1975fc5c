//! Tabular gamma-models.
//!
//! A gamma-model predicts the discounted distribution of future states
//! `mu(s_e | s, a)` and is trained by bootstrapping on its own predictions, the
//! way temporal-difference learning trains value functions. This crate holds
//! the categorical form of that idea together with exact dynamic-programming
//! oracles for every quantity it learns:
//!
//! - [`mdp`], [`env`], [`gridworld`], [`discretize`], [`dataset`]: finite MDPs,
//!   continuous benchmarks and their discretizations, transition datasets.
//! - [`oracle`]: successor representation, occupancy, policy evaluation,
//!   value iteration and Monte Carlo occupancy sampling.
//! - [`td`]: expected and sampled gamma-TD training.
//! - [`rollout`]: chained model steps, rollout reweighting to larger discounts.
//! - [`expansion`]: value estimation from models, MVE and gamma-MVE.
//! - [`control`]: a tabular soft actor-critic using those estimators.
//! - [`io`]: file formats and run manifests.

pub mod control;
pub mod dataset;
pub mod discretize;
pub mod env;
pub mod error;
pub mod expansion;
pub mod gridworld;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod rollout;
pub mod tables;
pub mod td;

pub use control::{AcConfig, Estimator, LearningCurve, SoftPolicy};
pub use dataset::{collect_dataset, Environment, MdpEnv, TransitionDataset, TransitionSample};
pub use discretize::{Axis, DiscretizationSpec};
pub use env::{env_step, ContinuousEnvState, EnvKind};
pub use error::{Error, Result};
pub use expansion::ValueEstimate;
pub use gridworld::Gridworld;
pub use io::{Config, ModelFile, RunManifest};
pub use linalg::Matrix;
pub use mdp::{policy_transition_matrix, validate_mdp, PolicyTable, TabularMdp};
pub use oracle::{OccupancyTable, SuccessorTable};
pub use rollout::{RolloutWeights, Start};
pub use tables::{ExitTable, QTable, VTable};
pub use td::{GammaModelTable, TargetModel, TrainConfig, TrainMode};
