use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use gamma_model::control::{evaluate_policy, run_actor_critic, TerminalMode};
use gamma_model::expansion::value_map;
use gamma_model::io::{
    write_atomic, write_learning_curve_csv, write_q_csv, write_sweep_csv, write_train_log,
    write_value_map_csv, write_values_csv, MODEL_ROW_TOL,
};
use gamma_model::oracle::{exact_occupancy, exact_successor, policy_evaluation, value_iteration};
use gamma_model::rollout::steps_to_mass;
use gamma_model::td::{expected_td_observed, sampled_td_train_monitored, LogLine};
use gamma_model::{
    collect_dataset, AcConfig, Config, Estimator, ExitTable, GammaModelTable,
    ModelFile, PolicyTable, RunManifest, TabularMdp, TrainConfig, TrainMode, TransitionDataset,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{at_path, CliError, CliResult};
use crate::problem::{build_policy, Params, Problem, ENV_KEYS, POLICY_KEYS};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Subcommands that produce a manifest and can be rerun from one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Oracle,
    Train,
    SweepHorizon,
    ValueMap,
    Control,
    Collect,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Oracle => "oracle",
            CommandKind::Train => "train",
            CommandKind::SweepHorizon => "sweep-horizon",
            CommandKind::ValueMap => "value-map",
            CommandKind::Control => "control",
            CommandKind::Collect => "collect",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CommandKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        [
            CommandKind::Oracle,
            CommandKind::Train,
            CommandKind::SweepHorizon,
            CommandKind::ValueMap,
            CommandKind::Control,
            CommandKind::Collect,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| CliError::invalid(format!("unknown command '{s}' in manifest")))
    }
}

/// Output directory and the files written to it so far.
struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.names.push(name.to_string());
        Ok(())
    }
}

/// Runs `kind` with `config` and writes its outputs plus a manifest into `out`.
pub fn execute(kind: CommandKind, config: Config, out: &Path) -> CliResult<RunManifest> {
    let started = Instant::now();
    fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let mut params = Params::new(config);
    let seed = params.seed()?;
    let mut artifacts = Artifacts {
        dir: out.to_path_buf(),
        names: Vec::new(),
    };
    match kind {
        CommandKind::Oracle => oracle(&mut params, &mut artifacts),
        CommandKind::Train => train(&mut params, &mut artifacts),
        CommandKind::SweepHorizon => sweep_horizon(&mut params, &mut artifacts),
        CommandKind::ValueMap => value_map_cmd(&mut params, &mut artifacts),
        CommandKind::Control => control(&mut params, &mut artifacts),
        CommandKind::Collect => collect(&mut params, &mut artifacts),
    }?;
    let manifest = RunManifest {
        command: kind.name().to_string(),
        config: params.into_config().entries().clone(),
        seed,
        artifacts: artifacts.names,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Re-executes the command recorded in a manifest.
pub fn rerun(manifest_path: &Path, out: &Path) -> CliResult<RunManifest> {
    let manifest = RunManifest::load(manifest_path).map_err(|e| at_path(e, manifest_path))?;
    let kind: CommandKind = manifest.command.parse()?;
    let mut config = Config::new();
    for (k, v) in &manifest.config {
        config.set(k, v);
    }
    config.set("seed", manifest.seed);
    execute(kind, config, out)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> gamma_model::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn oracle(p: &mut Params, out: &mut Artifacts) -> CliResult<()> {
    p.ensure_known(&[ENV_KEYS, POLICY_KEYS, &["seed", "gamma"]])?;
    let seed = p.seed()?;
    let problem = Problem::from_params(p)?;
    let gamma = p.get("gamma", 0.9f64)?;
    let mdp = problem.mdp()?;
    let pi = build_policy(p, &mdp, seed)?;

    let occupancy = exact_occupancy(&mdp, &pi, gamma)?;
    let successor = exact_successor(&mdp, &pi, gamma)?;
    let residual = occupancy
        .table
        .max_abs_diff(&successor.table.scaled(1.0 - gamma));
    let (v, q) = policy_evaluation(&mdp, &pi, gamma)?;

    let model = ModelFile::new(gamma, occupancy.table);
    out.write("occupancy.model", &to_bytes(|b| model.write(b))?)?;
    out.write("successor.csv", table_csv(&successor.table).as_bytes())?;
    out.write("values.csv", &to_bytes(|b| write_values_csv(b, &v.values))?)?;
    out.write("q_values.csv", &to_bytes(|b| write_q_csv(b, mdp.n_actions(), &q.values))?)?;
    println!("occupancy residual max|mu - (1-gamma) M| = {residual:e}");
    Ok(())
}

/// `state,action,exit_0,...`: one row per state-action pair.
fn table_csv(table: &ExitTable) -> String {
    let n = table.n_states();
    let mut text = String::from("state,action");
    for e in 0..n {
        text.push_str(&format!(",exit_{e}"));
    }
    text.push('\n');
    for s in 0..n {
        for a in 0..table.n_actions() {
            text.push_str(&format!("{s},{a}"));
            for x in table.row(s, a) {
                text.push_str(&format!(",{x}"));
            }
            text.push('\n');
        }
    }
    text
}

fn gather(
    p: &mut Params,
    problem: &Problem,
    mdp: &TabularMdp,
    pi: &PolicyTable,
    rng: &mut ChaCha8Rng,
) -> CliResult<TransitionDataset> {
    let n = p.get("n_transitions", 10_000usize)?;
    let len = p.get("episode_length", 100usize)?;
    let data = match problem {
        Problem::Discretized(env) => collect_dataset(env, pi, n, len, rng)?,
        Problem::Tabular { .. } => collect_dataset(&problem.mdp_env(mdp.clone())?, pi, n, len, rng)?,
    };
    Ok(data)
}

fn collect(p: &mut Params, out: &mut Artifacts) -> CliResult<()> {
    p.ensure_known(&[ENV_KEYS, POLICY_KEYS, &["seed", "n_transitions", "episode_length"]])?;
    let seed = p.seed()?;
    let problem = Problem::from_params(p)?;
    let mdp = problem.mdp()?;
    let pi = build_policy(p, &mdp, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = gather(p, &problem, &mdp, &pi, &mut rng)?;
    out.write("dataset.csv", &to_bytes(|b| data.write_csv(b))?)?;
    println!("collected {} transitions", data.len());
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "seed",
    "gamma",
    "mode",
    "step_size",
    "tau",
    "batch_size",
    "steps",
    "log_every",
    "dataset",
    "n_transitions",
    "episode_length",
    "tolerance",
    "monitor",
];

fn train(p: &mut Params, out: &mut Artifacts) -> CliResult<()> {
    p.ensure_known(&[ENV_KEYS, POLICY_KEYS, TRAIN_KEYS])?;
    let seed = p.seed()?;
    let problem = Problem::from_params(p)?;
    let mdp = problem.mdp()?;
    let pi = build_policy(p, &mdp, seed)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        mode: p.get("mode", defaults.mode)?,
        gamma: p.get("gamma", defaults.gamma)?,
        step_size: p.get("step_size", defaults.step_size)?,
        tau: p.get("tau", defaults.tau)?,
        batch_size: p.get("batch_size", defaults.batch_size)?,
        steps: p.get("steps", defaults.steps)?,
        seed,
        log_every: p.get("log_every", defaults.log_every)?,
    };
    config.validate()?;
    let oracle = if p.get("monitor", true)? {
        Some(exact_occupancy(&mdp, &pi, config.gamma)?.table)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (model, log) = match config.mode {
        TrainMode::Sampled => {
            let data = match p.path("dataset") {
                Some(path) => {
                    let file = fs::File::open(&path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    TransitionDataset::read_csv(file).map_err(|e| at_path(e, &path))?
                }
                None => gather(p, &problem, &mdp, &pi, &mut rng)?,
            };
            let outcome = sampled_td_train_monitored(&data, &pi, &config, oracle.as_ref(), &mut rng)?;
            if !outcome.unvisited.is_empty() {
                println!(
                    "{} state-action pairs absent from the dataset keep uniform rows",
                    outcome.unvisited.len()
                );
            }
            (outcome.model, outcome.log)
        }
        TrainMode::Expected => {
            let tolerance = p.get("tolerance", 0.0f64)?;
            expected_training(&mdp, &pi, &config, tolerance, oracle.as_ref())?
        }
    };

    let file = checked_model_file(&model)?;
    out.write("model.txt", &to_bytes(|b| file.write(b))?)?;
    out.write("train_log.csv", &to_bytes(|b| write_train_log(b, &log))?)?;
    if let Some(last) = log.last() {
        match last.tv_to_oracle {
            Some(tv) => println!("step {}: loss {:.6e}, tv_to_oracle {tv:.6}", last.step, last.loss),
            None => println!("step {}: loss {:.6e}", last.step, last.loss),
        }
    }
    Ok(())
}

/// Expected-mode sweeps. The logged loss is the sup-L1 change of the sweep.
fn expected_training(
    mdp: &TabularMdp,
    pi: &PolicyTable,
    config: &TrainConfig,
    tolerance: f64,
    oracle: Option<&ExitTable>,
) -> CliResult<(GammaModelTable, Vec<LogLine>)> {
    let init = GammaModelTable::uniform(mdp.n_states(), mdp.n_actions(), config.gamma)?;
    let mut log = Vec::new();
    let (model, _) = expected_td_observed(&init, mdp, pi, tolerance, config.steps, |sweep, change, probs| {
        let last = change <= tolerance || sweep == config.steps;
        if last || (config.log_every > 0 && sweep % config.log_every == 0) {
            log.push(LogLine {
                step: sweep,
                loss: change,
                tv_to_oracle: oracle.map(|o| max_table_tv(probs, o)),
            });
        }
    })?;
    Ok((model, log))
}

fn max_table_tv(a: &ExitTable, b: &ExitTable) -> f64 {
    a.rows()
        .zip(b.rows())
        .map(|(x, y)| 0.5 * x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Checks row validity and that the file form survives a write-read-write cycle.
fn checked_model_file(model: &GammaModelTable) -> CliResult<ModelFile> {
    let table = model.probs();
    for (i, row) in table.rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > MODEL_ROW_TOL {
            return Err(CliError::invalid(format!(
                "trained model row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    let file = ModelFile::new(model.gamma(), table);
    let first = to_bytes(|b| file.write(b))?;
    let second = to_bytes(|b| ModelFile::read(first.as_slice())?.write(b))?;
    if first != second {
        return Err(CliError::invalid("model file round trip changed the rows"));
    }
    Ok(file)
}

fn sweep_horizon(p: &mut Params, out: &mut Artifacts) -> CliResult<()> {
    p.ensure_known(&[&["seed", "gammas", "gamma_tildes", "coverage"]])?;
    let grid: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
    let gammas: Vec<f64> = p.list("gammas", &grid)?;
    let tildes: Vec<f64> = p.list("gamma_tildes", &grid)?;
    let coverage = p.get("coverage", 0.95f64)?;
    let mut rows = Vec::new();
    for &g in &gammas {
        for &gt in tildes.iter().filter(|&&gt| g <= gt) {
            rows.push((g, gt, steps_to_mass(g, gt, coverage)?));
        }
    }
    if rows.is_empty() {
        return Err(CliError::invalid("no (gamma, gamma_tilde) pair with gamma <= gamma_tilde"));
    }
    out.write("sweep.csv", &to_bytes(|b| write_sweep_csv(b, &rows))?)?;
    for &(g, gt, h) in rows
        .iter()
        .filter(|(g, gt, _)| (*g == 0.0 || *g == 0.8) && *gt == 0.99)
    {
        println!("gamma {g}, gamma_tilde {gt}: {h} steps");
    }
    println!("{} rows", rows.len());
    Ok(())
}

fn value_map_cmd(p: &mut Params, out: &mut Artifacts) -> CliResult<()> {
    p.ensure_known(&[ENV_KEYS, POLICY_KEYS, &["seed", "model"]])?;
    let seed = p.seed()?;
    let path = p
        .path("model")
        .ok_or_else(|| CliError::invalid("value-map needs a model file (--model or model=...)"))?;
    let problem = Problem::from_params(p)?;
    let mdp = problem.mdp()?;
    let file = ModelFile::load(&path).map_err(|e| at_path(e, &path))?;
    if file.n_states() != mdp.n_states() || file.n_actions() != mdp.n_actions() {
        return Err(CliError::invalid(format!(
            "model has {} states x {} actions, environment has {} x {}",
            file.n_states(),
            file.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let pi = build_policy(p, &mdp, seed)?;
    let model = GammaModelTable::from_probs(&file.table, file.gamma)?;
    let estimate = value_map(&model, &pi, mdp.reward())?;
    let (oracle, _) = policy_evaluation(&mdp, &pi, file.gamma)?;

    let write_map = |values: &[f64]| -> CliResult<Vec<u8>> {
        match problem.spec() {
            Some(spec) => to_bytes(|b| write_value_map_csv(b, spec, values)),
            None => to_bytes(|b| write_values_csv(b, values)),
        }
    };
    out.write("value_map_model.csv", &write_map(&estimate.values)?)?;
    out.write("value_map_oracle.csv", &write_map(&oracle.values)?)?;
    let dev: Vec<f64> = estimate
        .values
        .iter()
        .zip(&oracle.values)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    let mean = dev.iter().sum::<f64>() / dev.len() as f64;
    println!("max abs deviation {max:e}, mean abs deviation {mean:e}");
    Ok(())
}

const CONTROL_KEYS: &[&str] = &[
    "seed",
    "n_seeds",
    "estimators",
    "gamma",
    "gamma_tilde",
    "horizon",
    "mve_horizon",
    "q_step",
    "v_step",
    "policy_step",
    "model_step",
    "model_batch",
    "model_tau",
    "model_every",
    "critic_batch",
    "updates_per_step",
    "temperature",
    "q_init",
    "episodes",
    "steps_per_episode",
    "buffer_capacity",
    "eval_every",
    "eval_episodes",
    "terminal",
    "soft_expansion",
];

fn control(p: &mut Params, out: &mut Artifacts) -> CliResult<()> {
    p.ensure_known(&[ENV_KEYS, CONTROL_KEYS])?;
    let first_seed = p.seed()?;
    let problem = Problem::from_params(p)?;
    let n_seeds = p.get("n_seeds", 1u64)?;
    let estimators: Vec<Estimator> = p.list("estimators", &Estimator::ALL)?;
    let d = AcConfig::default();
    let temperature = if problem.is_discretized() { 0.1 } else { d.temperature };
    let base = AcConfig {
        estimator: d.estimator,
        gamma: p.get("gamma", d.gamma)?,
        gamma_tilde: p.get("gamma_tilde", d.gamma_tilde)?,
        horizon: p.get("horizon", d.horizon)?,
        q_step: p.get("q_step", d.q_step)?,
        v_step: p.get("v_step", d.v_step)?,
        policy_step: p.optional("policy_step")?,
        model_step: p.get("model_step", d.model_step)?,
        model_batch: p.get("model_batch", d.model_batch)?,
        model_tau: p.get("model_tau", d.model_tau)?,
        model_every: p.get("model_every", d.model_every)?,
        critic_batch: p.get("critic_batch", d.critic_batch)?,
        updates_per_step: p.get("updates_per_step", d.updates_per_step)?,
        temperature: p.get("temperature", temperature)?,
        q_init: p.optional("q_init")?,
        episodes: p.get("episodes", d.episodes)?,
        steps_per_episode: p.get("steps_per_episode", d.steps_per_episode)?,
        buffer_capacity: p.get("buffer_capacity", d.buffer_capacity)?,
        eval_every: p.get("eval_every", d.eval_every)?,
        eval_episodes: p.get("eval_episodes", d.eval_episodes)?,
        terminal: p.get("terminal", TerminalMode::Expected)?,
        soft_expansion: p.get("soft_expansion", d.soft_expansion)?,
        seed: first_seed,
    };
    let mve_horizon = p.get("mve_horizon", 5usize)?;
    base.validate()?;

    let tabular = match &problem {
        Problem::Tabular { mdp, .. } => Some(problem.mdp_env(mdp.clone())?),
        Problem::Discretized(_) => None,
    };
    let threshold = match &tabular {
        Some(env) => {
            let (_, greedy) = value_iteration(&env.mdp, base.gamma_tilde, 1e-10)?;
            let mut rng = ChaCha8Rng::seed_from_u64(first_seed);
            let (best, _) = evaluate_policy(env, &greedy, base.eval_episodes, base.steps_per_episode, &mut rng)?;
            println!("value-iteration policy return {best}");
            Some(0.9 * best)
        }
        None => None,
    };

    for &estimator in &estimators {
        let mut hits = Vec::new();
        for seed in first_seed..first_seed + n_seeds {
            let config = AcConfig {
                estimator,
                seed,
                horizon: if estimator == Estimator::Mve { mve_horizon } else { base.horizon },
                ..base.clone()
            };
            config.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let outcome = match (&tabular, &problem) {
                (Some(env), _) => run_actor_critic(env, &config, &mut rng)?,
                (None, Problem::Discretized(env)) => run_actor_critic(env, &config, &mut rng)?,
                (None, Problem::Tabular { .. }) => unreachable!("tabular problems build an env"),
            };
            let name = format!("curve_{estimator}_seed{seed}.csv");
            out.write(&name, &to_bytes(|b| write_learning_curve_csv(b, &outcome.curve))?)?;
            if let Some(t) = threshold {
                hits.push(outcome.curve.episodes_to_threshold(t));
            }
            let last = outcome.curve.points.last().map(|pt| pt.return_mean);
            println!("{estimator} seed {seed}: final evaluation return {last:?}");
        }
        if !hits.is_empty() {
            let mut sorted: Vec<usize> = hits.iter().map(|h| h.unwrap_or(usize::MAX)).collect();
            sorted.sort_unstable();
            let median = sorted[sorted.len() / 2];
            if median == usize::MAX {
                println!("{estimator}: median run never reached 90% of the optimal return");
            } else {
                println!("{estimator}: median episodes to 90% of the optimal return {median}");
            }
        }
    }
    Ok(())
}
