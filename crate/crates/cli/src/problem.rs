//! Builds environments and policies from configuration keys.
//!
//! Every lookup goes through [`Params`], which writes the default back into
//! the configuration so the saved manifest lists every value a run used.

use std::path::PathBuf;
use std::str::FromStr;

use gamma_model::dataset::DiscretizedEnv;
use gamma_model::discretize::discretized_mdp;
use gamma_model::io::MdpJson;
use gamma_model::oracle::value_iteration;
use gamma_model::{
    Config, DiscretizationSpec, EnvKind, Gridworld, MdpEnv, PolicyTable, TabularMdp,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{at_path, CliError, CliResult};

pub const ENV_KEYS: &[&str] = &[
    "env",
    "grid_size",
    "n_states",
    "n_actions",
    "mdp_seed",
    "mdp_path",
    "bins_theta",
    "bins_thetadot",
    "bins_position",
    "bins_velocity",
];

pub const POLICY_KEYS: &[&str] = &["policy", "policy_gamma"];

/// Configuration being resolved for one run.
pub struct Params {
    config: Config,
}

impl Params {
    pub fn new(config: Config) -> Self {
        Self { config }
    }

    pub fn into_config(self) -> Config {
        self.config
    }

    pub fn ensure_known(&self, groups: &[&[&str]]) -> CliResult<()> {
        let known: Vec<&str> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        Ok(self.config.ensure_known(&known)?)
    }

    pub fn get<T: FromStr + ToString>(&mut self, key: &str, default: T) -> CliResult<T> {
        self.config.set_default(key, default.to_string());
        Ok(self.config.get(key)?.expect("default was just set"))
    }

    pub fn list<T: FromStr + ToString>(&mut self, key: &str, default: &[T]) -> CliResult<Vec<T>> {
        let joined = default
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        self.config.set_default(key, joined);
        Ok(self.config.get_list(key)?.expect("default was just set"))
    }

    /// Optional key without a default.
    pub fn optional<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        Ok(self.config.get(key)?)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.config.raw(key).map(PathBuf::from)
    }

    pub fn seed(&mut self) -> CliResult<u64> {
        self.get("seed", 0u64)
    }
}

/// A configured environment.
#[derive(Debug, Clone)]
pub enum Problem {
    Tabular {
        mdp: TabularMdp,
        /// Fixed start state; `None` starts uniformly.
        start: Option<usize>,
    },
    Discretized(DiscretizedEnv),
}

impl Problem {
    pub fn from_params(p: &mut Params) -> CliResult<Self> {
        let env: String = p.get("env", "gridworld".to_string())?;
        match env.as_str() {
            "swap_chain" => Ok(Problem::tabular(TabularMdp::swap_chain(), None)),
            "gridworld" => {
                let size = p.get("grid_size", 5usize)?;
                let grid = Gridworld::new(size)?;
                Ok(Problem::tabular(grid.to_mdp(), Some(grid.start_state())))
            }
            "random" => {
                let n = p.get("n_states", 10usize)?;
                let na = p.get("n_actions", 2usize)?;
                let seed = p.get("mdp_seed", 0u64)?;
                if n == 0 || na == 0 {
                    return Err(CliError::invalid("n_states and n_actions must be positive"));
                }
                let mdp = TabularMdp::random(n, na, &mut ChaCha8Rng::seed_from_u64(seed));
                Ok(Problem::tabular(mdp, None))
            }
            "mdp_file" => {
                let path = p
                    .path("mdp_path")
                    .ok_or_else(|| CliError::invalid("env=mdp_file needs mdp_path"))?;
                let mdp = MdpJson::load(&path).map_err(|e| at_path(e, &path))?;
                Ok(Problem::tabular(mdp, None))
            }
            "pendulum" | "mountain_car" => {
                let kind: EnvKind = env.parse()?;
                let (kx, kv) = match kind {
                    EnvKind::Pendulum => ("bins_theta", "bins_thetadot"),
                    EnvKind::MountainCar => ("bins_position", "bins_velocity"),
                };
                let bins = [p.get(kx, 41usize)?, p.get(kv, 41usize)?];
                let na = p.get("n_actions", 5usize)?;
                let spec = DiscretizationSpec::for_env(kind, &bins, na)?;
                Ok(Problem::Discretized(DiscretizedEnv { env: kind, spec }))
            }
            other => Err(CliError::invalid(format!(
                "unknown env '{other}' (expected swap_chain, gridworld, random, mdp_file, pendulum or mountain_car)"
            ))),
        }
    }

    fn tabular(mdp: TabularMdp, start: Option<usize>) -> Self {
        Problem::Tabular { mdp, start }
    }

    pub fn is_discretized(&self) -> bool {
        matches!(self, Problem::Discretized(_))
    }

    /// The tabular MDP; discretized environments are converted cell by cell.
    pub fn mdp(&self) -> CliResult<TabularMdp> {
        match self {
            Problem::Tabular { mdp, .. } => Ok(mdp.clone()),
            Problem::Discretized(d) => Ok(discretized_mdp(d.env, &d.spec)?),
        }
    }

    pub fn spec(&self) -> Option<&DiscretizationSpec> {
        match self {
            Problem::Discretized(d) => Some(&d.spec),
            Problem::Tabular { .. } => None,
        }
    }

    pub fn mdp_env(&self, mdp: TabularMdp) -> CliResult<MdpEnv> {
        match self {
            Problem::Tabular { start: Some(s), .. } => Ok(MdpEnv::from_state(mdp, *s)?),
            _ => Ok(MdpEnv::uniform_start(mdp)),
        }
    }
}

/// Policy named by the `policy` key: `uniform`, `random` (seeded), or
/// `greedy` (value iteration at `policy_gamma`).
pub fn build_policy(p: &mut Params, mdp: &TabularMdp, seed: u64) -> CliResult<PolicyTable> {
    let kind: String = p.get("policy", "uniform".to_string())?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    match kind.as_str() {
        "uniform" => Ok(PolicyTable::uniform(n, na)),
        "random" => Ok(PolicyTable::random(n, na, &mut ChaCha8Rng::seed_from_u64(seed))),
        "greedy" => {
            let gamma = p.get("policy_gamma", 0.9f64)?;
            Ok(value_iteration(mdp, gamma, 1e-8)?.1)
        }
        other => Err(CliError::invalid(format!(
            "unknown policy '{other}' (expected uniform, random or greedy)"
        ))),
    }
}
