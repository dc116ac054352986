//! Episode loop, regret against the best stationary proper policy in
//! hindsight, Monte-Carlo evaluation, sweeps and the on-disk formats.
//!
//! A run directory holds `episodes.csv` (one row per episode, columns
//! [`EPISODE_CSV_HEADER`]), `summary.json` ([`RunSummary`]), `events.jsonl`,
//! and `steps.csv` when steps are recorded. A sweep directory holds one run
//! directory per cell and `manifest.json` ([`SweepManifest`]).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{build_agent, perturb_costs, AgentConfig, AgentError, AgentEvent, AgentKind, Mode};
use crate::envlab::{builtin, CostScheduler, EnvError, EnvInstance, ScheduleKind};
use crate::rng::{experiment_rng, indexed_rng};
use crate::ssp::{
    hitting_times, occupancy_of_policy, value_iteration, CostFunction, Mdp, PolicyEvaluator,
    SspError, StochasticPolicy, ViOptions,
};

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

pub const EPISODE_CSV_HEADER: [&str; 10] = [
    "k",
    "length",
    "realized_cost",
    "jstar_k",
    "cum_regret",
    "switch_step",
    "explore_steps",
    "epochs",
    "dual_iters",
    "dual_residual",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("need at least one episode")]
    ZeroEpisodes,
    #[error("need at least one rollout")]
    ZeroRollouts,
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("episode {episode} exceeded the step cap of {cap}")]
    StepCapExceeded { episode: u64, cap: u64 },
    #[error("invalid schedule `{0}`")]
    InvalidSchedule(String),
    #[error("cost sequence does not match the instance: {0}")]
    CostShape(String),
    #[error("sweep cell panicked: {0}")]
    CellPanicked(String),
    #[error("replay differs from the recorded run: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ssp(#[from] SspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `builtin:<spec>` or a path to an instance file.
    pub env: String,
    /// Replaces the instance's scheduler; see [`schedule_from_spec`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    #[serde(flatten)]
    pub agent: AgentConfig,
    pub episodes: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    #[serde(default)]
    pub record_steps: bool,
}

fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}

impl RunConfig {
    pub fn new(env: impl Into<String>, agent: AgentConfig, episodes: u64, seed: u64) -> Self {
        Self {
            env: env.into(),
            schedule: None,
            agent,
            episodes,
            seed,
            step_cap: DEFAULT_STEP_CAP,
            record_steps: false,
        }
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            step_cap: self.step_cap,
            record_steps: self.record_steps,
        }
    }

    pub fn resolve_env(&self) -> Result<EnvInstance, HarnessError> {
        let env = resolve_env(&self.env)?;
        match &self.schedule {
            Some(spec) => {
                let sched = schedule_from_spec(&env, spec, self.seed)?;
                Ok(env.with_scheduler(sched)?)
            }
            None => Ok(env),
        }
    }
}

/// `builtin:<spec>` (see [`crate::envlab::builtin`]) or an instance file.
pub fn resolve_env(source: &str) -> Result<EnvInstance, HarnessError> {
    match source.strip_prefix("builtin:") {
        Some(spec) => Ok(builtin(spec)?),
        None => Ok(EnvInstance::load(Path::new(source))?),
    }
}

/// Scheduler for `env` from a short spec:
/// `constant:V`, `alternating:CMIN[,SEED]`, `random:CMIN[,SEED]`, or the name
/// of one of the instance's alternative schedules. A missing seed defaults to
/// `run_seed`.
pub fn schedule_from_spec(
    env: &EnvInstance,
    spec: &str,
    run_seed: u64,
) -> Result<CostScheduler, HarnessError> {
    if let Some(s) = env.alternatives.get(spec) {
        return Ok(s.clone());
    }
    let bad = || HarnessError::InvalidSchedule(spec.to_string());
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let args: Vec<&str> = args.split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
    let num = |i: usize| -> Result<f64, HarnessError> {
        args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad())
    };
    let seed = || -> Result<u64, HarnessError> {
        args.get(1).map_or(Ok(run_seed), |a| a.parse().map_err(|_| bad()))
    };
    let (n, m) = (env.mdp.num_states(), env.mdp.num_actions());
    Ok(match kind {
        "constant" => CostScheduler::constant(n, m, num(0)?)?,
        "alternating" => CostScheduler::random_alternating(n, m, num(0)?, seed()?)?,
        "random" => CostScheduler::new(n, m, Some(num(0)?), ScheduleKind::SeededRandom { seed: seed()? })?,
        _ => return Err(bad()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub step_cap: u64,
    pub record_steps: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            step_cap: DEFAULT_STEP_CAP,
            record_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: u64,
    pub length: u64,
    /// Cost charged for regret: the perturbed cost when perturbation is on.
    pub realized_cost: f64,
    /// Cost under the adversary's unperturbed cost function.
    pub raw_cost: f64,
    pub jstar_k: f64,
    pub cum_regret: f64,
    pub switch_step: Option<u64>,
    pub explore_steps: u64,
    pub epochs: u64,
    pub dual_iters: u64,
    pub dual_residual: Option<f64>,
    pub dual_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
    /// Mode the learner acted in.
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub agent: String,
    pub config: AgentConfig,
    pub episodes: Vec<EpisodeRecord>,
    pub total_steps: u64,
    /// `(episode, event)` in emission order.
    pub events: Vec<(u64, AgentEvent)>,
    /// Per-episode trajectories, when recorded.
    pub steps: Option<Vec<Vec<StepRecord>>>,
}

impl EpisodeLog {
    pub fn dual_failures(&self) -> usize {
        self.episodes.iter().filter(|e| e.dual_failed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub learner_total: f64,
    pub raw_learner_total: f64,
    pub jstar_total: f64,
    pub regret: f64,
    pub jstar_per_episode: Vec<f64>,
    pub comparator: StochasticPolicy,
    /// Expected time of the comparator from the initial state.
    pub comparator_hitting_time: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EpisodeLog,
    pub report: RegretReport,
}

/// Best stationary proper policy for a cost sequence and its per-episode costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Hindsight {
    pub policy: StochasticPolicy,
    pub per_episode: Vec<f64>,
    pub total: f64,
}

/// Plans on the mean cost (the total scaled down by `K`) and evaluates the
/// resulting policy on every episode.
pub fn best_in_hindsight(
    mdp: &Mdp,
    costs: &[CostFunction],
    vi: ViOptions,
) -> Result<Hindsight, HarnessError> {
    if costs.is_empty() {
        return Err(HarnessError::ZeroEpisodes);
    }
    let mut sum = vec![0.0; mdp.num_states() * mdp.num_actions()];
    for c in costs {
        if !c.matches(mdp) {
            return Err(HarnessError::CostShape(format!(
                "{}x{} costs for a {}x{} instance",
                c.num_states(),
                c.num_actions(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        sum.iter_mut().zip(c.values()).for_each(|(s, v)| *s += v);
    }
    hindsight_from_sum(mdp, &sum, costs.len() as u64, vi, |k| Ok(costs[(k - 1) as usize].clone()))
}

fn hindsight_from_sum(
    mdp: &Mdp,
    sum: &[f64],
    episodes: u64,
    vi: ViOptions,
    mut cost_of: impl FnMut(u64) -> Result<CostFunction, HarnessError>,
) -> Result<Hindsight, HarnessError> {
    let mean: Vec<f64> = sum.iter().map(|s| (s / episodes as f64).clamp(0.0, 1.0)).collect();
    let mean = CostFunction::new(mdp.num_states(), mdp.num_actions(), mean)?;
    let plan = value_iteration(mdp, &mean, vi)?;
    let evaluator = PolicyEvaluator::new(mdp, &plan.policy)?;
    let s0 = mdp.initial_state();
    let mut per_episode = Vec::with_capacity(episodes as usize);
    let mut total = 0.0;
    for k in 1..=episodes {
        let j = evaluator.evaluate(&cost_of(k)?)?.require(s0)?;
        total += j;
        per_episode.push(j);
    }
    Ok(Hindsight {
        policy: plan.policy,
        per_episode,
        total,
    })
}

/// Runs `episodes` episodes of the learner configured by `cfg` against `env`.
/// Deterministic in `seed`: transitions and the learner's own draws come from
/// separate streams of it.
pub fn run_experiment(
    env: &EnvInstance,
    cfg: &AgentConfig,
    episodes: u64,
    seed: u64,
    opts: RunOptions,
) -> Result<RunOutput, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::ZeroEpisodes);
    }
    let mdp = &env.mdp;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    if env.scheduler.num_states != n || env.scheduler.num_actions != m {
        return Err(HarnessError::CostShape("scheduler shape differs from the instance".into()));
    }
    let mut agent = build_agent(cfg, mdp, episodes)?;
    let mut env_rng = indexed_rng(seed, 1);
    let mut agent_rng = indexed_rng(seed, 2);
    let eps = cfg.epsilon_perturb;
    let charged = |c: CostFunction| if eps > 0.0 { perturb_costs(&c, eps) } else { c };

    let mut records = Vec::with_capacity(episodes as usize);
    let mut events = Vec::new();
    let mut steps = opts.record_steps.then(Vec::new);
    let mut sum = vec![0.0; n * m];
    let mut total_steps = 0;
    for k in 1..=episodes {
        agent.begin_episode(k)?;
        let raw = env.scheduler.next(k)?;
        let cost = charged(raw.clone());
        let mut trajectory = Vec::new();
        let (mut s, mut length, mut realized, mut raw_total) = (mdp.initial_state(), 0u64, 0.0, 0.0);
        while s != mdp.goal() {
            if length >= opts.step_cap {
                return Err(HarnessError::StepCapExceeded {
                    episode: k,
                    cap: opts.step_cap,
                });
            }
            let a = agent.act(s, &mut agent_rng);
            let next = mdp.sample_next(s, a, &mut env_rng);
            agent.observe(s, a, next);
            let c = cost.get(s, a);
            realized += c;
            raw_total += raw.get(s, a);
            length += 1;
            if steps.is_some() {
                trajectory.push(StepRecord {
                    state: s,
                    action: a,
                    cost: c,
                    mode: agent.mode(),
                });
            }
            s = next;
        }
        agent.end_episode(&raw)?;
        total_steps += length;
        sum.iter_mut().zip(cost.values()).for_each(|(t, v)| *t += v);
        let stats = agent.stats().clone();
        let mut dual_failed = false;
        for e in agent.take_events() {
            dual_failed |= matches!(e, AgentEvent::DualFailure { .. });
            events.push((k, e));
        }
        if let Some(all) = steps.as_mut() {
            all.push(trajectory);
        }
        records.push(EpisodeRecord {
            k,
            length,
            realized_cost: realized,
            raw_cost: raw_total,
            jstar_k: 0.0,
            cum_regret: 0.0,
            switch_step: stats.switch_step,
            explore_steps: stats.explore_steps,
            epochs: stats.epochs,
            dual_iters: stats.dual_iters,
            dual_residual: stats.dual_residual,
            dual_failed,
        });
    }

    let hindsight = hindsight_from_sum(mdp, &sum, episodes, cfg_vi(cfg), |k| {
        Ok(charged(env.scheduler.next(k)?))
    })?;
    let (mut cum_cost, mut cum_jstar, mut raw_total) = (0.0, 0.0, 0.0);
    for (r, &j) in records.iter_mut().zip(&hindsight.per_episode) {
        cum_cost += r.realized_cost;
        cum_jstar += j;
        raw_total += r.raw_cost;
        r.jstar_k = j;
        r.cum_regret = cum_cost - cum_jstar;
    }
    let comparator_hitting_time = hitting_times(mdp, &hindsight.policy)?.require(mdp.initial_state())?;
    let report = RegretReport {
        learner_total: cum_cost,
        raw_learner_total: raw_total,
        jstar_total: cum_jstar,
        regret: cum_cost - cum_jstar,
        jstar_per_episode: hindsight.per_episode,
        comparator: hindsight.policy,
        comparator_hitting_time,
    };
    let log = EpisodeLog {
        seed,
        agent: agent.name().to_string(),
        config: cfg.clone(),
        episodes: records,
        total_steps,
        events,
        steps,
    };
    Ok(RunOutput { log, report })
}

fn cfg_vi(cfg: &AgentConfig) -> ViOptions {
    ViOptions {
        tol: cfg.vi_tol,
        ..ViOptions::default()
    }
}

/// Resolves the instance of `cfg` and runs it.
pub fn run_config(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    let env = cfg.resolve_env()?;
    run_experiment(&env, &cfg.agent, cfg.episodes, cfg.seed, cfg.options())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Standard error of the mean; undefined for a single rollout.
    pub stderr: Option<f64>,
    pub rollouts: u64,
}

/// Mean episode cost of `policy` over `rollouts` independent episodes.
pub fn monte_carlo_eval(
    mdp: &Mdp,
    policy: &StochasticPolicy,
    cost: &CostFunction,
    rollouts: u64,
    seed: u64,
    step_cap: u64,
) -> Result<MonteCarloEstimate, HarnessError> {
    if rollouts == 0 {
        return Err(HarnessError::ZeroRollouts);
    }
    let mut rng = experiment_rng(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 1..=rollouts {
        let (mut s, mut total, mut steps) = (mdp.initial_state(), 0.0, 0u64);
        while s != mdp.goal() {
            if steps >= step_cap {
                return Err(HarnessError::StepCapExceeded {
                    episode: i,
                    cap: step_cap,
                });
            }
            let a = policy.sample(s, &mut rng);
            total += cost.get(s, a);
            s = mdp.sample_next(s, a, &mut rng);
            steps += 1;
        }
        // Welford
        let delta = total - mean;
        mean += delta / i as f64;
        m2 += delta * (total - mean);
    }
    let stderr = (rollouts > 1).then(|| (m2 / (rollouts - 1) as f64 / rollouts as f64).sqrt());
    Ok(MonteCarloEstimate {
        mean,
        stderr,
        rollouts,
    })
}

/// `summary.json` of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub episodes: u64,
    pub seed: u64,
    pub total_steps: u64,
    pub dual_failures: usize,
    pub wall_clock_seconds: f64,
    #[serde(flatten)]
    pub report: RegretReport,
    pub config: RunConfig,
}

#[derive(Serialize)]
struct CsvRow {
    k: u64,
    length: u64,
    realized_cost: f64,
    jstar_k: f64,
    cum_regret: f64,
    switch_step: Option<u64>,
    explore_steps: u64,
    epochs: u64,
    dual_iters: u64,
    dual_residual: Option<f64>,
}

/// Writes the episode table with the frozen header.
pub fn write_episode_csv(path: &Path, episodes: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for e in episodes {
        w.serialize(CsvRow {
            k: e.k,
            length: e.length,
            realized_cost: e.realized_cost,
            jstar_k: e.jstar_k,
            cum_regret: e.cum_regret,
            switch_step: e.switch_step,
            explore_steps: e.explore_steps,
            epochs: e.epochs,
            dual_iters: e.dual_iters,
            dual_residual: e.dual_residual,
        })?;
    }
    if episodes.is_empty() {
        w.write_record(EPISODE_CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a run directory.
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    out: &RunOutput,
    wall_clock_seconds: f64,
) -> Result<RunSummary, HarnessError> {
    fs::create_dir_all(dir)?;
    write_episode_csv(&dir.join("episodes.csv"), &out.log.episodes)?;
    let mut events = BufWriter::new(File::create(dir.join("events.jsonl"))?);
    for (k, e) in &out.log.events {
        serde_json::to_writer(&mut events, &serde_json::json!({ "k": k, "event": e }))?;
        events.write_all(b"\n")?;
    }
    events.flush()?;
    if let Some(steps) = &out.log.steps {
        let mut w = csv::Writer::from_path(dir.join("steps.csv"))?;
        w.write_record(["k", "i", "state", "action", "cost", "mode"])?;
        for (k, traj) in steps.iter().enumerate() {
            for (i, st) in traj.iter().enumerate() {
                w.write_record(&[
                    (k + 1).to_string(),
                    (i + 1).to_string(),
                    st.state.to_string(),
                    st.action.to_string(),
                    st.cost.to_string(),
                    format!("{:?}", st.mode).to_lowercase(),
                ])?;
            }
        }
        w.flush()?;
    }
    let summary = RunSummary {
        agent: out.log.agent.clone(),
        episodes: cfg.episodes,
        seed: cfg.seed,
        total_steps: out.log.total_steps,
        dual_failures: out.log.dual_failures(),
        wall_clock_seconds,
        report: out.report.clone(),
        config: cfg.clone(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Runs `cfg` and writes its directory.
pub fn execute_run(cfg: &RunConfig, dir: &Path) -> Result<RunSummary, HarnessError> {
    let start = Instant::now();
    let out = run_config(cfg)?;
    write_run(dir, cfg, &out, start.elapsed().as_secs_f64())
}

/// Re-runs the configuration stored in a run directory and checks that the
/// episode table comes out byte for byte identical.
pub fn replay_run(dir: &Path) -> Result<RunSummary, HarnessError> {
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let recorded = fs::read(dir.join("episodes.csv"))?;
    let out = run_config(&summary.config)?;
    let tmp = dir.join(".replay-episodes.csv");
    write_episode_csv(&tmp, &out.log.episodes)?;
    let replayed = fs::read(&tmp)?;
    fs::remove_file(&tmp)?;
    if replayed != recorded {
        let line = recorded
            .split(|b| *b == b'\n')
            .zip(replayed.split(|b| *b == b'\n'))
            .position(|(a, b)| a != b)
            .map_or_else(|| "length differs".to_string(), |i| format!("first difference on line {}", i + 1));
        return Err(HarnessError::ReplayMismatch(line));
    }
    Ok(summary)
}

/// Cartesian product of agent configurations, horizons and seeds on one
/// instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub env: String,
    #[serde(default)]
    pub schedule: Option<String>,
    pub agents: Vec<AgentConfig>,
    pub episodes: Vec<u64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for agent in &self.agents {
            for &k in &self.episodes {
                for &seed in &self.seeds {
                    out.push(RunConfig {
                        env: self.env.clone(),
                        schedule: self.schedule.clone(),
                        agent: agent.clone(),
                        episodes: k,
                        seed,
                        step_cap: self.step_cap,
                        record_steps: false,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub status: CellStatus,
    pub agent: String,
    pub episodes: u64,
    pub seed: u64,
    /// Run directory relative to the sweep directory.
    pub dir: String,
    pub episodes_csv: Option<String>,
    pub summary: Option<String>,
    pub regret: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub cells: Vec<ManifestEntry>,
}

impl SweepManifest {
    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Ok).count()
    }
}

fn agent_name(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Oreps => "oreps",
        AgentKind::Oreps2 => "oreps2",
        AgentKind::Oreps3 => "oreps3",
    }
}

/// Runs every cell in parallel, each into its own directory under `out_dir`,
/// and writes `manifest.json`. A failing cell is recorded and does not stop
/// the others.
pub fn run_sweep(cells: &[RunConfig], out_dir: &Path) -> Result<SweepManifest, HarnessError> {
    if cells.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    fs::create_dir_all(out_dir)?;
    let entries: Vec<ManifestEntry> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let agent = agent_name(cfg.agent.agent).to_string();
            let id = format!("{i:04}-{agent}-k{}-s{}", cfg.episodes, cfg.seed);
            let dir = out_dir.join(&id);
            let result = catch_unwind(AssertUnwindSafe(|| execute_run(cfg, &dir)))
                .unwrap_or_else(|p| {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    Err(HarnessError::CellPanicked(msg))
                });
            match result {
                Ok(summary) => ManifestEntry {
                    status: CellStatus::Ok,
                    agent,
                    episodes: cfg.episodes,
                    seed: cfg.seed,
                    episodes_csv: Some(format!("{id}/episodes.csv")),
                    summary: Some(format!("{id}/summary.json")),
                    regret: Some(summary.report.regret),
                    error: None,
                    dir: id.clone(),
                    id,
                },
                Err(err) => ManifestEntry {
                    status: CellStatus::Failed,
                    agent,
                    episodes: cfg.episodes,
                    seed: cfg.seed,
                    episodes_csv: None,
                    summary: None,
                    regret: None,
                    error: Some(err.to_string()),
                    dir: id.clone(),
                    id,
                },
            }
        })
        .collect();
    let manifest = SweepManifest { cells: entries };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Total cost of `policy` over a cost sequence through its occupancy measure;
/// equals the sum of per-episode evaluations by linearity.
pub fn total_cost_via_occupancy(
    mdp: &Mdp,
    policy: &StochasticPolicy,
    costs: &[CostFunction],
) -> Result<f64, HarnessError> {
    let q = occupancy_of_policy(mdp, policy)?;
    let mut sum = vec![0.0; mdp.num_states() * mdp.num_actions()];
    for c in costs {
        sum.iter_mut().zip(c.values()).for_each(|(s, v)| *s += v);
    }
    Ok(q.values().iter().zip(&sum).map(|(a, b)| a * b).sum())
}

/// Random proper policy with full support, for dominance checks.
pub fn random_full_support_policy<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    rng: &mut R,
) -> StochasticPolicy {
    let mut probs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states {
        let row: Vec<f64> = (0..num_actions).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / z));
    }
    StochasticPolicy::new(num_states, num_actions, probs).expect("rows are normalized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::{fixture_a2, make_chain};

    #[test]
    fn chain_has_zero_regret() {
        let env = make_chain(3).unwrap();
        let out = run_experiment(&env, &AgentConfig::default(), 5, 1, RunOptions::default()).unwrap();
        for e in &out.log.episodes {
            assert_eq!(e.length, 3);
            assert_eq!(e.realized_cost, 3.0);
            assert!((e.jstar_k - 3.0).abs() < 1e-12);
        }
        assert!(out.report.regret.abs() < 1e-9);
    }

    #[test]
    fn zero_episodes_rejected() {
        let env = make_chain(2).unwrap();
        assert!(matches!(
            run_experiment(&env, &AgentConfig::default(), 0, 1, RunOptions::default()),
            Err(HarnessError::ZeroEpisodes)
        ));
    }

    #[test]
    fn hindsight_prefers_a2_when_it_is_cheap() {
        let env = fixture_a2(10.0, 0.1).unwrap();
        let cheap = &env.alternatives["cheap_a2"];
        let costs: Vec<_> = (1..=4).map(|k| cheap.next(k).unwrap()).collect();
        let h = best_in_hindsight(&env.mdp, &costs, ViOptions::default()).unwrap();
        assert_eq!(h.policy.mode(0), 1);
        for j in &h.per_episode {
            assert!((j - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_rollout_has_no_stderr() {
        let env = make_chain(3).unwrap();
        let unit = CostFunction::constant(3, 1, 1.0).unwrap();
        let pi = StochasticPolicy::uniform(3, 1);
        let est = monte_carlo_eval(&env.mdp, &pi, &unit, 1, 0, 100).unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.stderr, None);
        let est = monte_carlo_eval(&env.mdp, &pi, &unit, 10, 0, 100).unwrap();
        assert_eq!(est.stderr, Some(0.0));
    }

    #[test]
    fn step_cap_is_enforced() {
        let env = make_chain(5).unwrap();
        let opts = RunOptions {
            step_cap: 3,
            record_steps: false,
        };
        assert!(matches!(
            run_experiment(&env, &AgentConfig::default(), 1, 0, opts),
            Err(HarnessError::StepCapExceeded { episode: 1, cap: 3 })
        ));
    }

    #[test]
    fn config_round_trips_with_flattened_agent() {
        let cfg = RunConfig::new(
            "builtin:chain:3",
            AgentConfig {
                agent: AgentKind::Oreps2,
                c_min: 0.5,
                ..Default::default()
            },
            10,
            7,
        );
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"agent\":\"oreps2\""));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: RunConfig =
            serde_json::from_str(r#"{"env": "builtin:chain:2", "agent": "oreps", "episodes": 3}"#).unwrap();
        assert_eq!(minimal.step_cap, DEFAULT_STEP_CAP);
        assert_eq!(minimal.agent.c_min, 1.0);
    }

    #[test]
    fn slope_of_square_root() {
        let pts: Vec<_> = [100.0f64, 400.0, 1600.0].iter().map(|&k| (k, k.sqrt())).collect();
        assert!((log_log_slope(&pts) - 0.5).abs() < 1e-12);
    }
}
