use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ssp_omd::agents::{AgentConfig, AgentKind};
use ssp_omd::harness::{execute_run, replay_run, resolve_env, run_sweep, RunConfig, SweepGrid};
use ssp_omd::ssp::validate_mdp;

#[derive(Parser)]
#[command(name = "ssp-omd", version, about = "Online mirror descent for adversarial stochastic shortest path")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one learner and write episodes.csv, summary.json and events.jsonl.
    Run(RunArgs),
    /// Run a grid of configurations in parallel and write a manifest.
    Sweep(SweepArgs),
    /// Check an instance (or a run configuration) and print its summary.
    Validate(ValidateArgs),
    /// Re-run a recorded run and check that it reproduces bit for bit.
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Default)]
struct AgentFlags {
    /// `builtin:<name>:<args>` or an instance file
    #[arg(long)]
    env: Option<String>,
    /// Replaces the instance's cost schedule, e.g. `alternating:0.1`
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, value_parser = parse_agent)]
    agent: Option<AgentKind>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    cmin: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Known-state threshold, overriding the formula
    #[arg(long)]
    known_threshold: Option<u64>,
    /// Known SSP-diameter
    #[arg(long)]
    diameter: Option<f64>,
    #[arg(long)]
    epsilon_perturb: Option<f64>,
    #[arg(long)]
    estimate_diameter: bool,
    #[arg(long)]
    step_cap: Option<u64>,
}

impl AgentFlags {
    fn apply(&self, cfg: &mut AgentConfig) {
        if let Some(a) = self.agent {
            cfg.agent = a;
        }
        if self.eta.is_some() {
            cfg.eta = self.eta;
        }
        if let Some(c) = self.cmin {
            cfg.c_min = c;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if self.known_threshold.is_some() {
            cfg.known_threshold = self.known_threshold;
        }
        if self.diameter.is_some() {
            cfg.diameter = self.diameter;
        }
        if let Some(e) = self.epsilon_perturb {
            cfg.epsilon_perturb = e;
        }
        if self.estimate_diameter {
            cfg.estimate_diameter = true;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: AgentFlags,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write every step to steps.csv
    #[arg(long)]
    record_steps: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep grid file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: AgentFlags,
    /// Comma-separated horizons
    #[arg(long, value_delimiter = ',')]
    episodes: Vec<u64>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    env: Option<String>,
    /// Run configuration to check instead of an instance
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run directory written by `run`
    #[arg(long)]
    run: PathBuf,
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse().map_err(|e: ssp_omd::agents::AgentError| e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<RunConfig>(p)?,
        None => {
            let Some(env) = &args.flags.env else {
                bail!("--env is required without --config");
            };
            let Some(k) = args.episodes else {
                bail!("--episodes is required without --config");
            };
            RunConfig::new(env.clone(), AgentConfig::default(), k, 0)
        }
    };
    if let Some(env) = &args.flags.env {
        cfg.env = env.clone();
    }
    if args.flags.schedule.is_some() {
        cfg.schedule = args.flags.schedule.clone();
    }
    if let Some(k) = args.episodes {
        cfg.episodes = k;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(cap) = args.flags.step_cap {
        cfg.step_cap = cap;
    }
    cfg.record_steps |= args.record_steps;
    args.flags.apply(&mut cfg.agent);
    cfg.agent.validate()?;
    Ok(cfg)
}

fn sweep_grid(args: &SweepArgs) -> Result<SweepGrid> {
    let mut grid = match &args.config {
        Some(p) => read_json::<SweepGrid>(p)?,
        None => {
            let Some(env) = &args.flags.env else {
                bail!("--env is required without --config");
            };
            SweepGrid {
                env: env.clone(),
                schedule: None,
                agents: vec![AgentConfig::default()],
                episodes: Vec::new(),
                seeds: vec![0],
                step_cap: ssp_omd::harness::DEFAULT_STEP_CAP,
            }
        }
    };
    if let Some(env) = &args.flags.env {
        grid.env = env.clone();
    }
    if args.flags.schedule.is_some() {
        grid.schedule = args.flags.schedule.clone();
    }
    if !args.episodes.is_empty() {
        grid.episodes = args.episodes.clone();
    }
    if !args.seeds.is_empty() {
        grid.seeds = args.seeds.clone();
    }
    if let Some(cap) = args.flags.step_cap {
        grid.step_cap = cap;
    }
    for agent in &mut grid.agents {
        args.flags.apply(agent);
    }
    Ok(grid)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let summary = execute_run(&cfg, &args.out)?;
    println!(
        "{} K={} seed={} regret={:.6} learner={:.6} comparator={:.6} steps={} dual_failures={} ({:.2}s)",
        summary.agent,
        summary.episodes,
        summary.seed,
        summary.report.regret,
        summary.report.learner_total,
        summary.report.jstar_total,
        summary.total_steps,
        summary.dual_failures,
        summary.wall_clock_seconds
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let grid = sweep_grid(args)?;
    let manifest = run_sweep(&grid.cells(), &args.out)?;
    for cell in &manifest.cells {
        match (&cell.regret, &cell.error) {
            (Some(r), _) => println!("{} ok regret={r:.6}", cell.id),
            (None, Some(e)) => println!("{} failed: {e}", cell.id),
            (None, None) => println!("{} failed", cell.id),
        }
    }
    println!("{}/{} cells succeeded", manifest.succeeded(), manifest.cells.len());
    Ok(manifest.succeeded() == manifest.cells.len())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let source = match (&args.env, &args.config) {
        (Some(env), _) => env.clone(),
        (None, Some(p)) => {
            let cfg: RunConfig = read_json(p)?;
            cfg.agent.validate()?;
            cfg.resolve_env()?;
            cfg.env
        }
        (None, None) => bail!("nothing to validate: pass --env or --config"),
    };
    let env = resolve_env(&source)?;
    validate_mdp(&env.mdp)?;
    println!(
        "{}: {} states, {} actions, initial state {}, diameter {}",
        env.name,
        env.mdp.num_states(),
        env.mdp.num_actions(),
        env.mdp.initial_state(),
        env.diameter.map_or_else(|| "unknown".to_string(), |d| format!("{d:.6}"))
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a).map(|_| true),
        Command::Replay(a) => replay_run(&a.run)
            .map(|s| {
                println!("replay of {} matches (regret {:.6})", a.run.display(), s.report.regret);
                true
            })
            .map_err(Into::into),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
