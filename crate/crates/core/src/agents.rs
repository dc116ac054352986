//! The learners: SSP-O-REPS (OMD over occupancy measures with known
//! transitions), its variant that switches to the fast policy on states whose
//! expected time exceeds the budget, and the unknown-transition learner that
//! runs OMD over extended occupancy measures inside Bernstein confidence sets,
//! with forced exploration and optional diameter estimation.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{
    build_confidence_set, known_state_threshold, optimistic_fast, ConfidenceSet,
    KnownStateTracker, OptimisticFast, VisitCounts,
};
use crate::omd::{
    project_extended, project_known, unconstrained_step, unconstrained_step_extended,
    DualSolver, DualTelemetry, DualVariables, ExtendedOccupancyMeasure, OmdError, OmdParams,
};
use crate::ssp::{
    fast_policy_and_diameter, occupancy_of_policy, policy_of_occupancy, CostFunction, Mdp,
    OccupancyMeasure, PolicyEvaluator, SspError, StateValues, StochasticPolicy, ViOptions,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("diameter estimation episode exceeded {0} steps")]
    EstimationAborted(u64),
    #[error(transparent)]
    Omd(#[from] OmdError),
    #[error(transparent)]
    Ssp(#[from] SspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Oreps,
    Oreps2,
    Oreps3,
}

impl std::str::FromStr for AgentKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oreps" => Ok(Self::Oreps),
            "oreps2" => Ok(Self::Oreps2),
            "oreps3" => Ok(Self::Oreps3),
            other => Err(AgentError::InvalidConfig(format!("unknown agent `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSettings {
    pub dual_tol: f64,
    pub dual_max_iters: usize,
    pub solver: DualSolver,
}

impl Default for DualSettings {
    fn default() -> Self {
        Self {
            dual_tol: 1e-8,
            dual_max_iters: 50_000,
            solver: DualSolver::Newton,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub agent: AgentKind,
    /// Learning rate; the horizon-tuned default when absent.
    pub eta: Option<f64>,
    pub c_min: f64,
    pub delta: f64,
    /// Multiplier of the known-state threshold.
    pub alpha: f64,
    /// Known-state threshold, overriding the `alpha` formula.
    pub known_threshold: Option<u64>,
    /// SSP-diameter supplied by the user; computed from the model when absent
    /// and not estimated.
    pub diameter: Option<f64>,
    pub estimate_diameter: bool,
    /// Episodes (and per-state visits) used for diameter estimation.
    pub estimation_episodes: Option<u64>,
    /// Costs are raised to at least this before the learner sees them; 0 disables.
    pub epsilon_perturb: f64,
    pub dual: DualSettings,
    pub vi_tol: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Oreps,
            eta: None,
            c_min: 1.0,
            delta: 0.1,
            alpha: 1.0,
            known_threshold: None,
            diameter: None,
            estimate_diameter: false,
            estimation_episodes: None,
            epsilon_perturb: 0.0,
            dual: DualSettings::default(),
            vi_tol: 1e-10,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        if !(self.c_min > 0.0 && self.c_min <= 1.0) {
            return bad(format!("c_min must lie in (0, 1], got {}", self.c_min));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.epsilon_perturb) {
            return bad(format!("epsilon_perturb must lie in [0, 1], got {}", self.epsilon_perturb));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad(format!("eta must be positive, got {eta}"));
            }
        }
        if let Some(d) = self.diameter {
            if !(d >= 1.0 && d.is_finite()) {
                return bad(format!("diameter must be at least 1, got {d}"));
            }
        }
        if self.estimation_episodes == Some(0) {
            return bad("estimation_episodes must be positive".into());
        }
        Ok(())
    }

    /// `c_min` the learner plans with: the perturbation level when
    /// perturbation is on.
    pub fn effective_c_min(&self) -> f64 {
        if self.epsilon_perturb > 0.0 {
            self.epsilon_perturb
        } else {
            self.c_min
        }
    }

    fn omd_params(&self, eta: f64, tau: f64) -> Result<OmdParams, AgentError> {
        let p = OmdParams {
            eta,
            tau,
            dual_tol: self.dual.dual_tol,
            dual_max_iters: self.dual.dual_max_iters,
            solver: self.dual.solver,
        };
        p.validate()?;
        Ok(p)
    }

    fn vi(&self) -> ViOptions {
        ViOptions {
            tol: self.vi_tol,
            ..ViOptions::default()
        }
    }
}

/// `sqrt(factor ln(D |S| |A| / c_min) / K)`. The default factor is 3
/// with known transitions and 6 over confidence sets. The logarithm is floored
/// at 1 so that tiny instances still get a positive rate.
pub fn default_eta(
    diameter: f64,
    num_states: usize,
    num_actions: usize,
    c_min: f64,
    episodes: u64,
    factor: f64,
) -> f64 {
    let log = (diameter * (num_states * num_actions) as f64 / c_min).ln().max(1.0);
    (factor * log / episodes.max(1) as f64).sqrt()
}

/// `K^{-1/4}`.
pub fn default_perturbation(episodes: u64) -> f64 {
    (episodes.max(1) as f64).powf(-0.25)
}

/// `max(c, epsilon)` entrywise.
pub fn perturb_costs(c: &CostFunction, epsilon: f64) -> CostFunction {
    let values = c.values().iter().map(|v| v.max(epsilon)).collect();
    CostFunction::new(c.num_states(), c.num_actions(), values).expect("entries stay in [0, 1]")
}

/// `10 * mean(lengths)`.
pub fn diameter_statistic(lengths: &[u64]) -> f64 {
    if lengths.is_empty() {
        return f64::NAN;
    }
    10.0 * lengths.iter().sum::<u64>() as f64 / lengths.len() as f64
}

/// `2400 max{|S|^2 |A| ln^2(K|S||A|/(delta c_min)), sqrt(K)/(c_min sqrt|A|) ln(K|S||A|/(delta c_min))}`.
pub fn default_estimation_episodes(
    episodes: u64,
    num_states: usize,
    num_actions: usize,
    delta: f64,
    c_min: f64,
) -> u64 {
    let (s, a, k) = (num_states as f64, num_actions as f64, episodes as f64);
    let log = (k * s * a / (delta * c_min)).ln().max(0.0);
    let first = s * s * a * log * log;
    let second = k.sqrt() / (c_min * a.sqrt()) * log;
    (2400.0 * first.max(second)).ceil().max(1.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Omd,
    Fast,
    Explore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    /// Expected time from the state reached the budget.
    Budget,
    UnknownState,
    EpochEnded,
    /// The projection failed and the fast policy plays the whole episode.
    SolverFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    EpisodeStart { k: u64 },
    EpochStart { epoch: u64, step: u64 },
    Switch { step: u64, state: usize, reason: SwitchReason },
    ForcedExploration { step: u64, state: usize, action: usize },
    DualSolve { telemetry: DualTelemetry },
    DualFailure { message: String },
    DiameterEstimate { state: usize, value: f64 },
}

/// Per-episode counters reported to the harness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub switch_step: Option<u64>,
    pub explore_steps: u64,
    pub epochs: u64,
    pub dual_iters: u64,
    pub dual_residual: Option<f64>,
}

/// Interaction protocol: `begin_episode`, then `act`/`observe` per step until
/// the goal, then `end_episode` with the revealed cost function.
pub trait Learner: Send {
    fn name(&self) -> &'static str;
    fn begin_episode(&mut self, k: u64) -> Result<(), AgentError>;
    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> usize;
    fn observe(&mut self, s: usize, a: usize, next: usize);
    fn end_episode(&mut self, cost: &CostFunction) -> Result<(), AgentError>;
    fn mode(&self) -> Mode;
    fn stats(&self) -> &EpisodeStats;
    fn take_events(&mut self) -> Vec<AgentEvent>;
    /// The OMD policy of the current episode, if one was computed.
    fn omd_policy(&self) -> Option<&StochasticPolicy>;
}

/// States reachable from the initial state of `kernel` under `policy`.
pub fn reachable_states(kernel: &Mdp, policy: &StochasticPolicy) -> Vec<bool> {
    let n = kernel.num_states();
    let mut seen = vec![false; n];
    let mut stack = vec![kernel.initial_state()];
    seen[kernel.initial_state()] = true;
    while let Some(s) = stack.pop() {
        for a in 0..kernel.num_actions() {
            if policy.prob(s, a) == 0.0 {
                continue;
            }
            for (t, &p) in kernel.row(s, a)[..n].iter().enumerate() {
                if p > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    seen
}

/// Expected times to the goal under `policy` and `kernel` on the states with
/// positive `mass` that the policy can reach; the other states are pinned at
/// `default`. Reachability decides exact zeros that a numerical occupancy
/// only approximates.
pub fn times_on_support(
    kernel: &Mdp,
    policy: &StochasticPolicy,
    mass: &[f64],
    default: f64,
) -> Vec<f64> {
    let n = kernel.num_states();
    let m = kernel.num_actions();
    let reachable = reachable_states(kernel, policy);
    let support: Vec<usize> =
        (0..n).filter(|&s| reachable[s] && mass[s] > 0.0 && mass[s].is_finite()).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &s) in support.iter().enumerate() {
        index[s] = i;
    }
    let k = support.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    let mut rhs = DVector::<f64>::from_element(k, 1.0);
    for (i, &s) in support.iter().enumerate() {
        for act in 0..m {
            let pa = policy.prob(s, act);
            if pa == 0.0 {
                continue;
            }
            for (next, &p) in kernel.row(s, act)[..n].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if index[next] != usize::MAX {
                    a[(i, index[next])] -= pa * p;
                } else {
                    rhs[i] += pa * p * default;
                }
            }
        }
    }
    let mut out = vec![default; n];
    if let Some(sol) = a.lu().solve(&rhs) {
        if sol.iter().all(|x| x.is_finite() && *x >= 0.0) {
            for (i, &s) in support.iter().enumerate() {
                out[s] = sol[i];
            }
        }
    }
    out
}

/// Exact evaluation of the two-phase strategy that follows `first` until it
/// enters a state in `bad`, then follows `second` for the rest of the episode.
/// Returns the cost-to-go from every state (starting in the first phase).
pub fn two_phase_evaluation(
    mdp: &Mdp,
    first: &StochasticPolicy,
    bad: &[bool],
    second: &StochasticPolicy,
    cost: &CostFunction,
) -> Result<StateValues, SspError> {
    let n = mdp.num_states();
    let m = mdp.num_actions();
    let after = PolicyEvaluator::new(mdp, second)?.evaluate(cost)?;
    let good: Vec<usize> = (0..n).filter(|&s| !bad[s]).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &s) in good.iter().enumerate() {
        index[s] = i;
    }
    let k = good.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut infinite = vec![false; k];
    for (i, &s) in good.iter().enumerate() {
        for act in 0..m {
            let pa = first.prob(s, act);
            if pa == 0.0 {
                continue;
            }
            rhs[i] += pa * cost.get(s, act);
            for (next, &p) in mdp.row(s, act)[..n].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if bad[next] {
                    match after.get(next) {
                        Some(v) => rhs[i] += pa * p * v,
                        None => infinite[i] = true,
                    }
                } else {
                    a[(i, index[next])] -= pa * p;
                }
            }
        }
    }
    // Phase-one states that can reach an infinite continuation, or that
    // cannot leave the phase, have infinite value.
    let phase_one = StochasticPolicy::new(
        n,
        m,
        (0..n)
            .flat_map(|s| (0..m).map(move |a| (s, a)))
            .map(|(s, a)| if bad[s] { 1.0 / m as f64 } else { first.prob(s, a) })
            .collect(),
    )?;
    let proper = crate::ssp::proper_states(mdp, &phase_one);
    let mut out: Vec<Option<f64>> = (0..n).map(|s| if bad[s] { after.get(s) } else { None }).collect();
    // Propagate infinities backwards through phase one.
    let mut doomed: Vec<bool> = (0..k).map(|i| infinite[i] || !proper[good[i]]).collect();
    loop {
        let mut changed = false;
        for (i, &s) in good.iter().enumerate() {
            if doomed[i] {
                continue;
            }
            let reaches = (0..m).any(|act| {
                first.prob(s, act) > 0.0
                    && mdp.row(s, act)[..n]
                        .iter()
                        .enumerate()
                        .any(|(t, &p)| p > 0.0 && !bad[t] && doomed[index[t]])
            });
            if reaches {
                doomed[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let live: Vec<usize> = (0..k).filter(|&i| !doomed[i]).collect();
    if !live.is_empty() {
        let sub_a = DMatrix::from_fn(live.len(), live.len(), |r, c| a[(live[r], live[c])]);
        let sub_b = DVector::from_fn(live.len(), |r, _| rhs[live[r]]);
        let sol = sub_a.lu().solve(&sub_b).ok_or(SspError::SingularSystem)?;
        for (r, &i) in live.iter().enumerate() {
            out[good[i]] = Some(sol[r]);
        }
    }
    Ok(StateValues::new(out))
}

fn sample_row(policy: &StochasticPolicy, s: usize, rng: &mut dyn RngCore) -> usize {
    policy.sample(s, rng)
}

/// SSP-O-REPS, and with `switching` set, SSP-O-REPS2.
#[derive(Debug, Clone)]
pub struct OReps {
    mdp: Mdp,
    switching: bool,
    params: OmdParams,
    fast: StochasticPolicy,
    q: OccupancyMeasure,
    last_cost: CostFunction,
    warm: Option<DualVariables>,
    policy: StochasticPolicy,
    times: Vec<f64>,
    mode: Mode,
    step: u64,
    stats: EpisodeStats,
    events: Vec<AgentEvent>,
}

impl OReps {
    pub fn new(mdp: Mdp, cfg: &AgentConfig, episodes: u64, switching: bool) -> Result<Self, AgentError> {
        cfg.validate()?;
        let fast = fast_policy_and_diameter(&mdp, cfg.vi())?;
        let d = cfg.diameter.unwrap_or(fast.diameter);
        let c_min = cfg.effective_c_min();
        let tau = (d / c_min).max(1.0);
        let (n, m) = (mdp.num_states(), mdp.num_actions());
        let eta = cfg.eta.unwrap_or_else(|| default_eta(d, n, m, c_min, episodes, 3.0));
        let params = cfg.omd_params(eta, tau)?;
        Ok(Self {
            switching,
            params,
            fast: fast.policy,
            q: OccupancyMeasure::filled(n, m, 1.0),
            last_cost: CostFunction::zeros(n, m),
            warm: None,
            policy: StochasticPolicy::uniform(n, m),
            times: vec![tau; n],
            mode: Mode::Omd,
            step: 0,
            stats: EpisodeStats::default(),
            events: Vec::new(),
            mdp,
        })
    }

    pub fn params(&self) -> &OmdParams {
        &self.params
    }

    /// Current occupancy measure `q_k`.
    pub fn occupancy(&self) -> &OccupancyMeasure {
        &self.q
    }

    /// Per-state expected times of `pi_k` used by the switching rule.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fast_policy(&self) -> &StochasticPolicy {
        &self.fast
    }

    /// States where the switching rule fires.
    pub fn bad_states(&self) -> Vec<bool> {
        self.times.iter().map(|t| *t >= self.params.tau).collect()
    }
}

impl Learner for OReps {
    fn name(&self) -> &'static str {
        if self.switching {
            "oreps2"
        } else {
            "oreps"
        }
    }

    fn begin_episode(&mut self, k: u64) -> Result<(), AgentError> {
        self.stats = EpisodeStats {
            epochs: 1,
            ..Default::default()
        };
        self.step = 0;
        self.mode = Mode::Omd;
        self.events.push(AgentEvent::EpisodeStart { k });
        let q_prime = unconstrained_step(&self.q, &self.last_cost, self.params.eta);
        match project_known(&q_prime, &self.mdp, &self.params, self.warm.as_ref()) {
            Ok(proj) => {
                self.stats.dual_iters = proj.telemetry.iterations as u64;
                self.stats.dual_residual = Some(proj.telemetry.residual);
                self.events.push(AgentEvent::DualSolve {
                    telemetry: proj.telemetry,
                });
                self.q = proj.q;
                self.warm = Some(proj.duals);
            }
            Err(err) => {
                // The fast policy's occupancy is always inside the budget.
                self.events.push(AgentEvent::DualFailure {
                    message: err.to_string(),
                });
                self.q = occupancy_of_policy(&self.mdp, &self.fast)?;
            }
        }
        self.policy = policy_of_occupancy(&self.q);
        if self.switching {
            let mass: Vec<f64> = (0..self.mdp.num_states()).map(|s| self.q.state_mass(s)).collect();
            self.times = times_on_support(&self.mdp, &self.policy, &mass, self.params.tau);
        }
        Ok(())
    }

    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> usize {
        self.step += 1;
        if self.switching && self.mode == Mode::Omd && self.times[s] >= self.params.tau {
            self.mode = Mode::Fast;
            self.stats.switch_step = Some(self.step);
            self.events.push(AgentEvent::Switch {
                step: self.step,
                state: s,
                reason: SwitchReason::Budget,
            });
        }
        match self.mode {
            Mode::Omd => sample_row(&self.policy, s, rng),
            _ => sample_row(&self.fast, s, rng),
        }
    }

    fn observe(&mut self, _s: usize, _a: usize, _next: usize) {}

    fn end_episode(&mut self, cost: &CostFunction) -> Result<(), AgentError> {
        if cost.num_states() != self.mdp.num_states() || cost.num_actions() != self.mdp.num_actions() {
            return Err(SspError::ShapeMismatch {
                expected: self.mdp.num_states() * self.mdp.num_actions(),
                found: cost.values().len(),
            }
            .into());
        }
        self.last_cost = cost.clone();
        Ok(())
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn stats(&self) -> &EpisodeStats {
        &self.stats
    }

    fn take_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    fn omd_policy(&self) -> Option<&StochasticPolicy> {
        Some(&self.policy)
    }
}

/// SSP-O-REPS3: unknown transitions.
#[derive(Debug, Clone)]
pub struct OReps3 {
    num_states: usize,
    num_actions: usize,
    initial_state: usize,
    cfg: AgentConfig,
    episodes: u64,
    params: OmdParams,
    counts: VisitCounts,
    tracker: KnownStateTracker,
    conf: ConfidenceSet,
    optimistic: OptimisticFast,
    q: ExtendedOccupancyMeasure,
    last_cost: CostFunction,
    warm: Option<DualVariables>,
    policy: Option<StochasticPolicy>,
    times: Vec<f64>,
    /// Diameter used for the budget; an estimate of the start state's fast
    /// time when estimating.
    diameter: f64,
    estimation: Option<Estimation>,
    mode: Mode,
    step: u64,
    stats: EpisodeStats,
    events: Vec<AgentEvent>,
}

#[derive(Debug, Clone)]
struct Estimation {
    /// Episodes still devoted to estimating the start state's diameter.
    remaining: u64,
    window: u64,
    start_lengths: Vec<u64>,
    /// Per-state remaining lengths from the first post-switch visit of each episode.
    samples: Vec<Vec<u64>>,
    per_state: Vec<Option<f64>>,
    /// Step of this episode's first post-switch visit to each state.
    pending: Vec<Option<u64>>,
}

impl OReps3 {
    /// The model is only used for its shape and, when the diameter is neither
    /// supplied nor estimated, to compute the diameter.
    pub fn new(mdp: &Mdp, cfg: &AgentConfig, episodes: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let (n, m, s0) = (mdp.num_states(), mdp.num_actions(), mdp.initial_state());
        let c_min = cfg.effective_c_min();
        let (diameter, estimation) = if cfg.estimate_diameter {
            let window = cfg
                .estimation_episodes
                .unwrap_or_else(|| default_estimation_episodes(episodes, n, m, cfg.delta, c_min));
            (
                f64::NAN,
                Some(Estimation {
                    remaining: window,
                    window,
                    start_lengths: Vec::new(),
                    samples: vec![Vec::new(); n],
                    per_state: vec![None; n],
                    pending: vec![None; n],
                }),
            )
        } else {
            let d = match cfg.diameter {
                Some(d) => d,
                None => fast_policy_and_diameter(mdp, cfg.vi())?.diameter,
            };
            (d, None)
        };
        let threshold = match (cfg.known_threshold, &estimation) {
            (Some(t), _) => t,
            (None, Some(e)) => e.window,
            (None, None) => known_state_threshold(cfg.alpha, diameter, n, m, c_min, cfg.delta),
        };
        // Placeholder budget until the diameter is known.
        let d_for_params = if diameter.is_finite() { diameter } else { 1.0 };
        let eta = cfg
            .eta
            .unwrap_or_else(|| default_eta(d_for_params, n, m, c_min, episodes, 6.0));
        let params = cfg.omd_params(eta, (d_for_params / c_min).max(1.0))?;
        let counts = VisitCounts::new(n, m, s0);
        let conf = build_confidence_set(&counts, cfg.delta);
        let optimistic = optimistic_fast(&conf, cfg.vi())?;
        Ok(Self {
            num_states: n,
            num_actions: m,
            initial_state: s0,
            cfg: cfg.clone(),
            episodes,
            params,
            counts,
            tracker: KnownStateTracker::new(n, m, threshold),
            conf,
            optimistic,
            q: ExtendedOccupancyMeasure::filled(n, m, 1.0),
            last_cost: CostFunction::zeros(n, m),
            warm: None,
            policy: None,
            times: vec![f64::INFINITY; n],
            diameter,
            estimation,
            mode: Mode::Fast,
            step: 0,
            stats: EpisodeStats::default(),
            events: Vec::new(),
        })
    }

    pub fn params(&self) -> &OmdParams {
        &self.params
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn known_threshold(&self) -> u64 {
        self.tracker.threshold()
    }

    pub fn confidence_set(&self) -> &ConfidenceSet {
        &self.conf
    }

    pub fn counts(&self) -> &VisitCounts {
        &self.counts
    }

    pub fn is_estimating(&self) -> bool {
        self.estimation.as_ref().is_some_and(|e| e.remaining > 0)
    }

    /// Estimated diameter of `s`, once enough post-switch visits were seen.
    pub fn state_diameter(&self, s: usize) -> Option<f64> {
        self.estimation.as_ref().and_then(|e| e.per_state[s])
    }

    fn budget(&self, s: usize) -> f64 {
        let d = self.state_diameter(s).unwrap_or(self.diameter);
        d / self.cfg.effective_c_min()
    }

    fn start_epoch(&mut self) -> Result<(), AgentError> {
        self.counts.start_epoch();
        self.conf = build_confidence_set(&self.counts, self.cfg.delta);
        self.optimistic = optimistic_fast(&self.conf, self.cfg.vi())?;
        self.stats.epochs += 1;
        self.events.push(AgentEvent::EpochStart {
            epoch: self.counts.epoch(),
            step: self.step,
        });
        Ok(())
    }

    fn leave_omd(&mut self, s: usize, reason: SwitchReason) {
        self.mode = Mode::Fast;
        self.stats.switch_step = Some(self.step);
        self.events.push(AgentEvent::Switch {
            step: self.step,
            state: s,
            reason,
        });
    }

    fn finish_estimation(&mut self) -> Result<(), AgentError> {
        let est = self.estimation.as_ref().expect("estimating");
        let d = diameter_statistic(&est.start_lengths).max(1.0);
        self.diameter = d;
        let c_min = self.cfg.effective_c_min();
        let eta = self.cfg.eta.unwrap_or_else(|| {
            default_eta(d, self.num_states, self.num_actions, c_min, self.episodes, 6.0)
        });
        self.params = self.cfg.omd_params(eta, (d / c_min).max(1.0))?;
        self.q = ExtendedOccupancyMeasure::filled(self.num_states, self.num_actions, 1.0);
        self.last_cost = CostFunction::zeros(self.num_states, self.num_actions);
        self.warm = None;
        self.events.push(AgentEvent::DiameterEstimate {
            state: self.initial_state,
            value: d,
        });
        Ok(())
    }
}

impl Learner for OReps3 {
    fn name(&self) -> &'static str {
        "oreps3"
    }

    fn begin_episode(&mut self, k: u64) -> Result<(), AgentError> {
        self.stats = EpisodeStats::default();
        self.step = 0;
        self.events.push(AgentEvent::EpisodeStart { k });
        if let Some(e) = self.estimation.as_mut() {
            e.pending.iter_mut().for_each(|p| *p = None);
        }
        self.start_epoch()?;
        if self.is_estimating() {
            self.mode = Mode::Fast;
            self.policy = None;
            return Ok(());
        }
        let q_prime = unconstrained_step_extended(&self.q, &self.last_cost, self.params.eta);
        match project_extended(&q_prime, &self.conf, &self.params, self.warm.as_ref()) {
            Ok(proj) => {
                self.stats.dual_iters = proj.telemetry.iterations as u64;
                self.stats.dual_residual = Some(proj.telemetry.residual);
                self.events.push(AgentEvent::DualSolve {
                    telemetry: proj.telemetry,
                });
                self.q = proj.q;
                self.warm = Some(proj.duals);
                let policy = self.q.policy();
                let kernel = self.q.induced_kernel(self.initial_state);
                let mass: Vec<f64> = (0..self.num_states).map(|s| self.q.state_mass(s)).collect();
                self.times = times_on_support(&kernel, &policy, &mass, self.params.tau);
                self.policy = Some(policy);
                self.mode = Mode::Omd;
            }
            Err(err) => {
                self.events.push(AgentEvent::DualFailure {
                    message: err.to_string(),
                });
                self.policy = None;
                self.mode = Mode::Fast;
                self.stats.switch_step = Some(0);
                self.events.push(AgentEvent::Switch {
                    step: 0,
                    state: self.initial_state,
                    reason: SwitchReason::SolverFallback,
                });
            }
        }
        Ok(())
    }

    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> usize {
        self.step += 1;
        if self.mode == Mode::Omd {
            if !self.tracker.is_known(s) {
                self.leave_omd(s, SwitchReason::UnknownState);
            } else if self.times[s] >= self.budget(s) {
                self.leave_omd(s, SwitchReason::Budget);
            }
        }
        if self.mode == Mode::Omd {
            return sample_row(self.policy.as_ref().expect("OMD mode has a policy"), s, rng);
        }
        if let Some(e) = self.estimation.as_mut() {
            if e.pending[s].is_none() && e.per_state[s].is_none() {
                e.pending[s] = Some(self.step);
            }
        }
        if !self.tracker.is_known(s) && !self.is_estimating() {
            let a = self.tracker.least_played_action(s);
            self.mode = Mode::Explore;
            self.stats.explore_steps += 1;
            self.events.push(AgentEvent::ForcedExploration {
                step: self.step,
                state: s,
                action: a,
            });
            a
        } else {
            self.mode = Mode::Fast;
            sample_row(&self.optimistic.policy, s, rng)
        }
    }

    fn observe(&mut self, s: usize, a: usize, next: usize) {
        self.tracker.record(s, a);
        if self.counts.record_transition(s, a, next) && next != self.num_states {
            if self.start_epoch().is_err() {
                // Planning on the optimistic kernel cannot fail for a valid
                // set; keep the previous policy if it somehow does.
                self.events.push(AgentEvent::DualFailure {
                    message: "optimistic planning failed".into(),
                });
            }
            if self.mode == Mode::Omd {
                self.leave_omd(s, SwitchReason::EpochEnded);
            }
        }
    }

    fn end_episode(&mut self, cost: &CostFunction) -> Result<(), AgentError> {
        if cost.num_states() != self.num_states || cost.num_actions() != self.num_actions {
            return Err(SspError::ShapeMismatch {
                expected: self.num_states * self.num_actions,
                found: cost.values().len(),
            }
            .into());
        }
        self.last_cost = cost.clone();
        let length = self.step;
        let mut finished_start = false;
        if let Some(e) = self.estimation.as_mut() {
            for s in 0..self.num_states {
                if let Some(at) = e.pending[s].take() {
                    if e.per_state[s].is_none() {
                        e.samples[s].push(length - at + 1);
                        if e.samples[s].len() as u64 >= e.window {
                            let d = diameter_statistic(&e.samples[s]);
                            e.per_state[s] = Some(d);
                            self.events.push(AgentEvent::DiameterEstimate { state: s, value: d });
                        }
                    }
                }
            }
            if e.remaining > 0 {
                e.start_lengths.push(length);
                e.remaining -= 1;
                finished_start = e.remaining == 0;
            }
        }
        if finished_start {
            self.finish_estimation()?;
        }
        Ok(())
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn stats(&self) -> &EpisodeStats {
        &self.stats
    }

    fn take_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    fn omd_policy(&self) -> Option<&StochasticPolicy> {
        self.policy.as_ref()
    }
}

/// Passes `max(c, epsilon)` to the wrapped learner instead of `c`.
#[derive(Debug, Clone)]
pub struct Perturbed<L> {
    inner: L,
    epsilon: f64,
}

impl<L: Learner> Perturbed<L> {
    pub fn new(inner: L, epsilon: f64) -> Self {
        Self { inner, epsilon }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }
}

impl<L: Learner> Learner for Perturbed<L> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn begin_episode(&mut self, k: u64) -> Result<(), AgentError> {
        self.inner.begin_episode(k)
    }

    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> usize {
        self.inner.act(s, rng)
    }

    fn observe(&mut self, s: usize, a: usize, next: usize) {
        self.inner.observe(s, a, next)
    }

    fn end_episode(&mut self, cost: &CostFunction) -> Result<(), AgentError> {
        self.inner.end_episode(&perturb_costs(cost, self.epsilon))
    }

    fn mode(&self) -> Mode {
        self.inner.mode()
    }

    fn stats(&self) -> &EpisodeStats {
        self.inner.stats()
    }

    fn take_events(&mut self) -> Vec<AgentEvent> {
        self.inner.take_events()
    }

    fn omd_policy(&self) -> Option<&StochasticPolicy> {
        self.inner.omd_policy()
    }
}

impl Learner for Box<dyn Learner> {
    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn begin_episode(&mut self, k: u64) -> Result<(), AgentError> {
        (**self).begin_episode(k)
    }

    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> usize {
        (**self).act(s, rng)
    }

    fn observe(&mut self, s: usize, a: usize, next: usize) {
        (**self).observe(s, a, next)
    }

    fn end_episode(&mut self, cost: &CostFunction) -> Result<(), AgentError> {
        (**self).end_episode(cost)
    }

    fn mode(&self) -> Mode {
        (**self).mode()
    }

    fn stats(&self) -> &EpisodeStats {
        (**self).stats()
    }

    fn take_events(&mut self) -> Vec<AgentEvent> {
        (**self).take_events()
    }

    fn omd_policy(&self) -> Option<&StochasticPolicy> {
        (**self).omd_policy()
    }
}

/// Builds the learner named by `cfg` for `episodes` episodes on `mdp`,
/// wrapped in [`Perturbed`] when `cfg.epsilon_perturb > 0`.
pub fn build_agent(cfg: &AgentConfig, mdp: &Mdp, episodes: u64) -> Result<Box<dyn Learner>, AgentError> {
    if episodes == 0 {
        return Err(AgentError::InvalidConfig("need at least one episode".into()));
    }
    let inner: Box<dyn Learner> = match cfg.agent {
        AgentKind::Oreps => Box::new(OReps::new(mdp.clone(), cfg, episodes, false)?),
        AgentKind::Oreps2 => Box::new(OReps::new(mdp.clone(), cfg, episodes, true)?),
        AgentKind::Oreps3 => Box::new(OReps3::new(mdp, cfg, episodes)?),
    };
    Ok(if cfg.epsilon_perturb > 0.0 {
        Box::new(Perturbed::new(inner, cfg.epsilon_perturb))
    } else {
        inner
    })
}

/// Diameter estimate of `start` from `episodes` episodes of a unit-cost
/// optimistic learner: the optimistic fast policy of a confidence set rebuilt
/// at every epoch. Returns ten times the mean episode length.
pub fn estimate_diameter(
    mdp: &Mdp,
    start: usize,
    episodes: u64,
    delta: f64,
    step_cap: u64,
    rng: &mut dyn RngCore,
) -> Result<f64, AgentError> {
    if episodes == 0 {
        return Err(AgentError::InvalidConfig("need at least one episode".into()));
    }
    let mdp = mdp.with_initial_state(start)?;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let vi = ViOptions::default();
    let mut counts = VisitCounts::new(n, m, start);
    let mut lengths = Vec::with_capacity(episodes as usize);
    for _ in 0..episodes {
        counts.start_epoch();
        let mut plan = optimistic_fast(&build_confidence_set(&counts, delta), vi)?;
        let mut s = start;
        let mut steps = 0u64;
        while s != n {
            if steps >= step_cap {
                return Err(AgentError::EstimationAborted(step_cap));
            }
            let a = plan.policy.sample(s, rng);
            let next = mdp.sample_next(s, a, rng);
            steps += 1;
            if counts.record_transition(s, a, next) && next != n {
                counts.start_epoch();
                plan = optimistic_fast(&build_confidence_set(&counts, delta), vi)?;
            }
            s = next;
        }
        lengths.push(steps);
    }
    Ok(diameter_statistic(&lengths))
}
