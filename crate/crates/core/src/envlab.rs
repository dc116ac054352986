//! Environment generators, the counterexample fixtures and oblivious cost
//! schedulers.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{experiment_rng, indexed_rng};
use crate::ssp::{
    evaluate_policy, fast_policy_and_diameter, hitting_times, validate_mdp, CostFunction, Mdp,
    SspError, StochasticPolicy, ViOptions,
};

/// Closed-form fixture values are checked to this precision at construction.
pub const FIXTURE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("episodes are numbered from 1")]
    EpisodeZero,
    #[error("replay holds {len} cost functions, episode {k} requested")]
    ReplayExhausted { k: u64, len: usize },
    #[error("{what}: expected {expected}, found {found}")]
    FixtureMismatch {
        what: &'static str,
        expected: f64,
        found: f64,
    },
    #[error("unknown builtin environment `{0}`")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Ssp(#[from] SspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One piece of a [`ScheduleKind::PiecewiseAdversary`]: `costs` is played in
/// every episode up to and including `until`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub until: u64,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant {
        costs: Vec<f64>,
    },
    /// `odd` in episodes 1, 3, 5, ...; `even` in the others.
    Alternating {
        odd: Vec<f64>,
        even: Vec<f64>,
    },
    /// Independent uniform draws on `[c_min, 1]` (or `[0, 1]`), keyed by `(seed, k)`.
    SeededRandom {
        seed: u64,
    },
    Replay {
        sequence: Vec<Vec<f64>>,
        #[serde(default)]
        cyclic: bool,
    },
    /// Fixed costs that change at preset episodes; the last piece persists.
    PiecewiseAdversary {
        segments: Vec<Segment>,
    },
}

/// Oblivious adversary: `c_k` depends only on the descriptor and `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostScheduler {
    pub num_states: usize,
    pub num_actions: usize,
    /// Declared lower bound on every emitted cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_min: Option<f64>,
    #[serde(flatten)]
    pub kind: ScheduleKind,
}

impl CostScheduler {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        c_min: Option<f64>,
        kind: ScheduleKind,
    ) -> Result<Self, EnvError> {
        let s = Self {
            num_states,
            num_actions,
            c_min,
            kind,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Result<Self, EnvError> {
        Self::new(
            num_states,
            num_actions,
            None,
            ScheduleKind::Constant {
                costs: vec![value; num_states * num_actions],
            },
        )
    }

    /// Alternates between two cost functions drawn uniformly on `[c_min, 1]`
    /// from `seed`.
    pub fn random_alternating(
        num_states: usize,
        num_actions: usize,
        c_min: f64,
        seed: u64,
    ) -> Result<Self, EnvError> {
        let mut rng = experiment_rng(seed);
        let mut draw = || -> Vec<f64> {
            (0..num_states * num_actions)
                .map(|_| rng.random_range(c_min..=1.0))
                .collect()
        };
        let odd = draw();
        let even = draw();
        Self::new(
            num_states,
            num_actions,
            Some(c_min),
            ScheduleKind::Alternating { odd, even },
        )
    }

    fn fixed_vectors(&self) -> Vec<&Vec<f64>> {
        match &self.kind {
            ScheduleKind::Constant { costs } => vec![costs],
            ScheduleKind::Alternating { odd, even } => vec![odd, even],
            ScheduleKind::SeededRandom { .. } => vec![],
            ScheduleKind::Replay { sequence, .. } => sequence.iter().collect(),
            ScheduleKind::PiecewiseAdversary { segments } => {
                segments.iter().map(|s| &s.costs).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if let Some(c) = self.c_min {
            if !(0.0..=1.0).contains(&c) {
                return Err(EnvError::InvalidParameter(format!("c_min {c} outside [0, 1]")));
            }
        }
        for v in self.fixed_vectors() {
            match self.c_min {
                Some(c) => CostFunction::with_min(self.num_states, self.num_actions, v.clone(), c)?,
                None => CostFunction::new(self.num_states, self.num_actions, v.clone())?,
            };
        }
        match &self.kind {
            ScheduleKind::Replay { sequence, .. } if sequence.is_empty() => {
                Err(EnvError::InvalidParameter("empty replay sequence".into()))
            }
            ScheduleKind::PiecewiseAdversary { segments } => {
                if segments.is_empty() {
                    return Err(EnvError::InvalidParameter("no segments".into()));
                }
                if segments.windows(2).any(|w| w[0].until >= w[1].until) {
                    return Err(EnvError::InvalidParameter(
                        "segment ends must increase".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Cost function of episode `k` (from 1).
    pub fn next(&self, k: u64) -> Result<CostFunction, EnvError> {
        if k == 0 {
            return Err(EnvError::EpisodeZero);
        }
        let (n, m) = (self.num_states, self.num_actions);
        let values = match &self.kind {
            ScheduleKind::Constant { costs } => costs.clone(),
            ScheduleKind::Alternating { odd, even } => {
                if k % 2 == 1 {
                    odd.clone()
                } else {
                    even.clone()
                }
            }
            ScheduleKind::SeededRandom { seed } => {
                let lo = self.c_min.unwrap_or(0.0);
                let mut rng = indexed_rng(*seed, k);
                (0..n * m).map(|_| rng.random_range(lo..=1.0)).collect()
            }
            ScheduleKind::Replay { sequence, cyclic } => {
                let i = (k - 1) as usize;
                if i < sequence.len() {
                    sequence[i].clone()
                } else if *cyclic {
                    sequence[i % sequence.len()].clone()
                } else {
                    return Err(EnvError::ReplayExhausted {
                        k,
                        len: sequence.len(),
                    });
                }
            }
            ScheduleKind::PiecewiseAdversary { segments } => segments
                .iter()
                .find(|s| k <= s.until)
                .unwrap_or_else(|| segments.last().expect("validated nonempty"))
                .costs
                .clone(),
        };
        Ok(CostFunction::new(n, m, values)?)
    }
}

/// `c_k` of `sched`.
pub fn scheduler_next(sched: &CostScheduler, k: u64) -> Result<CostFunction, EnvError> {
    sched.next(k)
}

/// A validated instance with its adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInstance {
    pub name: String,
    pub mdp: Mdp,
    pub scheduler: CostScheduler,
    /// SSP-diameter, when computed or known analytically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast_policy: Option<Vec<usize>>,
    /// Further named cost settings of the same instance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alternatives: BTreeMap<String, CostScheduler>,
}

impl EnvInstance {
    /// Validates the MDP and attaches the fast policy and diameter.
    pub fn new(name: impl Into<String>, mdp: Mdp, scheduler: CostScheduler) -> Result<Self, EnvError> {
        validate_mdp(&mdp).map_err(SspError::from)?;
        if scheduler.num_states != mdp.num_states() || scheduler.num_actions != mdp.num_actions() {
            return Err(EnvError::InvalidParameter(
                "scheduler shape differs from the MDP".into(),
            ));
        }
        scheduler.validate()?;
        let fast = fast_policy_and_diameter(&mdp, ViOptions::default())?;
        let actions = (0..mdp.num_states()).map(|s| fast.policy.mode(s)).collect();
        Ok(Self {
            name: name.into(),
            mdp,
            scheduler,
            diameter: Some(fast.diameter),
            fast_policy: Some(actions),
            alternatives: BTreeMap::new(),
        })
    }

    pub fn with_scheduler(mut self, scheduler: CostScheduler) -> Result<Self, EnvError> {
        if scheduler.num_states != self.mdp.num_states()
            || scheduler.num_actions != self.mdp.num_actions()
        {
            return Err(EnvError::InvalidParameter(
                "scheduler shape differs from the MDP".into(),
            ));
        }
        scheduler.validate()?;
        self.scheduler = scheduler;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)?;
        let env: EnvInstance = serde_json::from_str(&text)?;
        validate_mdp(&env.mdp).map_err(SspError::from)?;
        env.scheduler.validate()?;
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `n` states in a line, one action, unit costs.
pub fn make_chain(n: usize) -> Result<EnvInstance, EnvError> {
    if n == 0 {
        return Err(EnvError::InvalidParameter("chain needs a state".into()));
    }
    let mut kernel = vec![0.0; n * (n + 1)];
    for s in 0..n {
        kernel[s * (n + 1) + s + 1] = 1.0;
    }
    let mdp = Mdp::new(n, 1, 0, kernel)?;
    EnvInstance::new(format!("chain-{n}"), mdp, CostScheduler::constant(n, 1, 1.0)?)
}

/// Grid actions: up, right, down, left.
pub const GRID_MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// `w x h` grid starting in the top-left cell with the goal in the bottom-right
/// cell. A move succeeds with probability `1 - slip`, otherwise one of the
/// other three directions is taken uniformly; moves into a wall stay put.
pub fn make_gridworld(w: usize, h: usize, slip: f64) -> Result<EnvInstance, EnvError> {
    if w == 0 || h == 0 || w * h < 2 {
        return Err(EnvError::InvalidParameter("grid needs at least two cells".into()));
    }
    if !(0.0..=0.5).contains(&slip) {
        return Err(EnvError::InvalidParameter(format!("slip {slip} outside [0, 0.5]")));
    }
    let n = w * h - 1;
    let width = n + 1;
    let mut kernel = vec![0.0; n * 4 * width];
    let target = |cell: usize, dir: usize| -> usize {
        let (r, c) = ((cell / w) as isize, (cell % w) as isize);
        let (dr, dc) = GRID_MOVES[dir];
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
            cell
        } else {
            nr as usize * w + nc as usize
        }
    };
    for s in 0..n {
        for a in 0..4 {
            let row = &mut kernel[(s * 4 + a) * width..(s * 4 + a + 1) * width];
            for dir in 0..4 {
                let p = if dir == a { 1.0 - slip } else { slip / 3.0 };
                row[target(s, dir)] += p;
            }
        }
    }
    let mdp = Mdp::new(n, 4, 0, kernel)?;
    EnvInstance::new(
        format!("gridworld-{w}x{h}-slip{slip}"),
        mdp,
        CostScheduler::constant(n, 4, 1.0)?,
    )
}

/// Random sparse instance. Every action of every state sends at least
/// `goal_reach_prob` of its mass directly to the goal from action 0, so any
/// policy that plays action 0 with positive probability everywhere is proper.
/// Costs are seeded draws on `[0.1, 1]`.
pub fn make_random_ssp(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    goal_reach_prob: f64,
) -> Result<EnvInstance, EnvError> {
    if n_states == 0 || n_actions == 0 {
        return Err(EnvError::InvalidParameter("empty model".into()));
    }
    if !(goal_reach_prob > 0.0 && goal_reach_prob <= 1.0) {
        return Err(EnvError::InvalidParameter(format!(
            "goal_reach_prob {goal_reach_prob} outside (0, 1]"
        )));
    }
    let mut rng = experiment_rng(seed);
    let w = n_states + 1;
    let mut kernel = Vec::with_capacity(n_states * n_actions * w);
    for _ in 0..n_states {
        for a in 0..n_actions {
            let mut row: Vec<f64> = (0..w)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(0.05..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            if row.iter().all(|x| *x == 0.0) {
                let i = rng.random_range(0..w);
                row[i] = 1.0;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
            if a == 0 {
                row.iter_mut().for_each(|x| *x *= 1.0 - goal_reach_prob);
                row[n_states] += goal_reach_prob;
            }
            kernel.extend(row);
        }
    }
    let mdp = Mdp::new(n_states, n_actions, 0, kernel)?;
    let scheduler = CostScheduler::new(
        n_states,
        n_actions,
        Some(0.1),
        ScheduleKind::SeededRandom { seed },
    )?;
    EnvInstance::new(
        format!("random-{n_states}x{n_actions}-seed{seed}"),
        mdp,
        scheduler,
    )
}

fn check(what: &'static str, expected: f64, found: Option<f64>) -> Result<(), EnvError> {
    let found = found.unwrap_or(f64::INFINITY);
    if (expected - found).abs() <= FIXTURE_TOL * expected.abs().max(1.0) {
        Ok(())
    } else {
        Err(EnvError::FixtureMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Combination lock: in state `i` one action `a(i)`, drawn from `seed`,
/// advances to `i + 1` (the goal after the last state); every other action
/// returns to the start. Under unit costs the uniform policy costs
/// `|A| (|A|^|S| - 1) / (|A| - 1)` from the start.
pub fn fixture_a1(num_states: usize, num_actions: usize, seed: u64) -> Result<EnvInstance, EnvError> {
    if num_states == 0 || num_actions < 2 {
        return Err(EnvError::InvalidParameter(
            "needs a state and at least two actions".into(),
        ));
    }
    let mut rng = experiment_rng(seed);
    let lock: Vec<usize> = (0..num_states)
        .map(|_| rng.random_range(0..num_actions))
        .collect();
    let w = num_states + 1;
    let mut kernel = vec![0.0; num_states * num_actions * w];
    for s in 0..num_states {
        for a in 0..num_actions {
            let next = if a == lock[s] { s + 1 } else { 0 };
            kernel[(s * num_actions + a) * w + next] = 1.0;
        }
    }
    let mdp = Mdp::new(num_states, num_actions, 0, kernel)?;
    let unit = CostFunction::constant(num_states, num_actions, 1.0)?;
    let uniform = StochasticPolicy::uniform(num_states, num_actions);
    let a = num_actions as f64;
    let closed = a * (a.powi(num_states as i32) - 1.0) / (a - 1.0);
    check(
        "uniform cost-to-go",
        closed,
        evaluate_policy(&mdp, &uniform, &unit)?.get(0),
    )?;
    let env = EnvInstance::new(
        format!("a1-{num_states}x{num_actions}-seed{seed}"),
        mdp,
        CostScheduler::constant(num_states, num_actions, 1.0)?,
    )?;
    check("diameter", num_states as f64, env.diameter)?;
    Ok(env)
}

/// One state, two actions: `a1` reaches the goal with probability `1/D`,
/// `a2` with probability `2 c_min / D`. The default scheduler charges
/// `(1, c_min)`, under which `a2` is best; the alternative `costly_a2`
/// charges `(1, 3 c_min)`, under which `a1` is best.
pub fn fixture_a2(d: f64, c_min: f64) -> Result<EnvInstance, EnvError> {
    if !(d >= 1.0) || !(c_min > 0.0 && c_min <= 1.0) || 2.0 * c_min > d || 3.0 * c_min > 1.0 {
        return Err(EnvError::InvalidParameter(format!(
            "need D >= 1, 0 < c_min <= 1/3 and 2 c_min <= D; got D = {d}, c_min = {c_min}"
        )));
    }
    let p1 = 1.0 / d;
    let p2 = 2.0 * c_min / d;
    let mdp = Mdp::new(1, 2, 0, vec![1.0 - p1, p1, 1.0 - p2, p2])?;
    let t1 = hitting_times(&mdp, &StochasticPolicy::deterministic(2, &[0])?)?;
    let t2 = hitting_times(&mdp, &StochasticPolicy::deterministic(2, &[1])?)?;
    check("time of a1", d, t1.get(0))?;
    check("time of a2", d / (2.0 * c_min), t2.get(0))?;
    let replay = |c2: f64| {
        CostScheduler::new(
            1,
            2,
            Some(c_min),
            ScheduleKind::Replay {
                sequence: vec![vec![1.0, c2]],
                cyclic: true,
            },
        )
    };
    let mut env = EnvInstance::new(format!("a2-D{d}-cmin{c_min}"), mdp, replay(c_min)?)?;
    env.alternatives.insert("cheap_a2".into(), replay(c_min)?);
    env.alternatives.insert("costly_a2".into(), replay(3.0 * c_min)?);
    Ok(env)
}

/// Two states. From the start, `a1` ends the episode; `a2` ends it with
/// probability `p = 1 - (1 - c_min)/(10K)` and otherwise falls into a trap
/// left with probability `1/(10K)` per step. Costs are 1 except
/// `c(start, a2) = c_min`, so both policies cost 1 in expectation.
pub fn fixture_a3(k: u64, c_min: f64) -> Result<EnvInstance, EnvError> {
    if k == 0 || !(c_min > 0.0 && c_min <= 1.0) {
        return Err(EnvError::InvalidParameter(format!(
            "need K >= 1 and c_min in (0, 1]; got K = {k}, c_min = {c_min}"
        )));
    }
    let ten_k = 10.0 * k as f64;
    let p = 1.0 - (1.0 - c_min) / ten_k;
    let leave = 1.0 / ten_k;
    let kernel = vec![
        0.0, 0.0, 1.0, // start, a1
        0.0, 1.0 - p, p, // start, a2
        0.0, 1.0 - leave, leave, // trap, a1
        0.0, 1.0 - leave, leave, // trap, a2
    ];
    let mdp = Mdp::new(2, 2, 0, kernel)?;
    let costs = vec![1.0, c_min, 1.0, 1.0];
    let cost = CostFunction::new(2, 2, costs.clone())?;
    let pi1 = StochasticPolicy::deterministic(2, &[0, 0])?;
    let pi2 = StochasticPolicy::deterministic(2, &[1, 1])?;
    check("cost of pi2", 1.0, evaluate_policy(&mdp, &pi2, &cost)?.get(0))?;
    check("time of pi2", 2.0 - c_min, hitting_times(&mdp, &pi2)?.get(0))?;
    check("cost of pi1", 1.0, evaluate_policy(&mdp, &pi1, &cost)?.get(0))?;
    let scheduler = CostScheduler::new(2, 2, Some(c_min), ScheduleKind::Constant { costs })?;
    EnvInstance::new(format!("a3-K{k}-cmin{c_min}"), mdp, scheduler)
}

/// Resolves `name` or `name:arg,arg,...`:
/// `chain:N`, `gridworld:W,H,SLIP`, `random:S,A,SEED,GOAL_PROB`,
/// `a1:S,A,SEED`, `a2:D,CMIN`, `a3:K,CMIN`.
pub fn builtin(spec: &str) -> Result<EnvInstance, EnvError> {
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    let args: Vec<&str> = args.split(',').filter(|a| !a.is_empty()).collect();
    let bad = || EnvError::UnknownBuiltin(spec.to_string());
    let num = |i: usize, default: f64| -> Result<f64, EnvError> {
        args.get(i)
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .unwrap_or(Ok(default))
    };
    let int = |i: usize, default: u64| -> Result<u64, EnvError> {
        args.get(i)
            .map(|a| a.trim().parse::<u64>().map_err(|_| bad()))
            .unwrap_or(Ok(default))
    };
    match name {
        "chain" => make_chain(int(0, 3)? as usize),
        "gridworld" => make_gridworld(int(0, 4)? as usize, int(1, 4)? as usize, num(2, 0.1)?),
        "random" => make_random_ssp(int(0, 5)? as usize, int(1, 2)? as usize, int(2, 0)?, num(3, 0.05)?),
        "a1" => fixture_a1(int(0, 2)? as usize, int(1, 2)? as usize, int(2, 0)?),
        "a2" => fixture_a2(num(0, 10.0)?, num(1, 0.1)?),
        "a3" => fixture_a3(int(0, 1000)?, num(1, 0.1)?),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_has_diameter_n() {
        let env = make_chain(3).unwrap();
        assert_eq!(env.diameter, Some(3.0));
    }

    #[test]
    fn deterministic_grid_diameter_is_manhattan() {
        let env = make_gridworld(4, 4, 0.0).unwrap();
        assert!((env.diameter.unwrap() - 6.0).abs() < 1e-9);
        let env = make_gridworld(3, 2, 0.0).unwrap();
        assert!((env.diameter.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn slippery_grid_rows_are_stochastic() {
        let env = make_gridworld(4, 4, 0.1).unwrap();
        assert!(env.diameter.unwrap() > 6.0);
        assert!(make_gridworld(4, 4, 0.6).is_err());
    }

    #[test]
    fn random_instances_validate() {
        for seed in 0..20 {
            make_random_ssp(8, 3, seed, 0.05).unwrap();
        }
    }

    #[test]
    fn fixture_closed_forms() {
        for (n, m, j) in [(2, 2, 6.0), (3, 2, 14.0), (2, 3, 12.0)] {
            let env = fixture_a1(n, m, 11).unwrap();
            let unit = CostFunction::constant(n, m, 1.0).unwrap();
            let v = evaluate_policy(&env.mdp, &StochasticPolicy::uniform(n, m), &unit).unwrap();
            assert!((v.get(0).unwrap() - j).abs() < 1e-9);
        }
        let a2 = fixture_a2(10.0, 0.1).unwrap();
        assert!((a2.diameter.unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(a2.fast_policy, Some(vec![0]));
        fixture_a3(1000, 0.1).unwrap();
    }

    #[test]
    fn schedulers_emit_expected_costs() {
        let alt = CostScheduler::new(
            1,
            1,
            None,
            ScheduleKind::Alternating {
                odd: vec![0.2],
                even: vec![0.7],
            },
        )
        .unwrap();
        assert_eq!(alt.next(1).unwrap().values(), &[0.2]);
        assert_eq!(alt.next(2).unwrap().values(), &[0.7]);
        assert!(matches!(alt.next(0), Err(EnvError::EpisodeZero)));

        let rnd = CostScheduler::new(2, 2, Some(0.1), ScheduleKind::SeededRandom { seed: 4 }).unwrap();
        let low = (1..=1000)
            .map(|k| rnd.next(k).unwrap().min())
            .fold(f64::INFINITY, f64::min);
        assert!(low >= 0.1);
        assert_eq!(rnd.next(17).unwrap(), rnd.next(17).unwrap());

        let replay = CostScheduler::new(
            1,
            1,
            None,
            ScheduleKind::Replay {
                sequence: vec![vec![0.5]],
                cyclic: false,
            },
        )
        .unwrap();
        assert!(matches!(replay.next(2), Err(EnvError::ReplayExhausted { .. })));

        let piece = CostScheduler::new(
            1,
            1,
            None,
            ScheduleKind::PiecewiseAdversary {
                segments: vec![
                    Segment { until: 2, costs: vec![0.1] },
                    Segment { until: 4, costs: vec![0.9] },
                ],
            },
        )
        .unwrap();
        let seq: Vec<f64> = (1..=6).map(|k| piece.next(k).unwrap().values()[0]).collect();
        assert_eq!(seq, vec![0.1, 0.1, 0.9, 0.9, 0.9, 0.9]);
    }

    #[test]
    fn declared_minimum_is_enforced() {
        let err = CostScheduler::new(1, 1, Some(0.5), ScheduleKind::Constant { costs: vec![0.2] });
        assert!(err.is_err());
    }

    #[test]
    fn builtin_names_resolve() {
        assert_eq!(builtin("chain:5").unwrap().mdp.num_states(), 5);
        assert_eq!(builtin("gridworld:3,3,0").unwrap().mdp.num_states(), 8);
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn env_file_round_trips() {
        let env = fixture_a2(10.0, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        env.save(&path).unwrap();
        assert_eq!(EnvInstance::load(&path).unwrap(), env);
    }
}
