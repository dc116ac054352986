use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SspError;

/// Tolerance on the row sums of a transition kernel.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A finite stochastic shortest path instance.
///
/// States are `0..num_states`; the goal is the extra index `num_states` and is
/// never part of the state space proper. The kernel is stored densely as
/// `[s][a][s']` with `s'` ranging over the states and the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    initial_state: usize,
    transitions: Vec<f64>,
}

/// On-disk layout: `transitions[s][a][s']`, index `num_states` is the goal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub initial_state: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpFile> for Mdp {
    type Error = SspError;

    fn try_from(file: MdpFile) -> Result<Self, Self::Error> {
        Mdp::from_nested(
            file.num_states,
            file.num_actions,
            file.initial_state,
            &file.transitions,
        )
    }
}

impl From<Mdp> for MdpFile {
    fn from(mdp: Mdp) -> Self {
        let transitions = (0..mdp.num_states)
            .map(|s| (0..mdp.num_actions).map(|a| mdp.row(s, a).to_vec()).collect())
            .collect();
        MdpFile {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            initial_state: mdp.initial_state,
            transitions,
        }
    }
}

/// One problem found by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    RowNotStochastic { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, next: usize },
    GoalUnreachableFrom(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowNotStochastic { state, action, sum } => {
                write!(f, "row ({state}, {action}) sums to {sum}")
            }
            Violation::NegativeProbability {
                state,
                action,
                next,
            } => write!(f, "P({next} | {state}, {action}) is outside [0, 1]"),
            Violation::GoalUnreachableFrom(s) => write!(f, "goal unreachable from state {s}"),
        }
    }
}

/// Every violated invariant of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

impl Mdp {
    /// Builds an instance from a flat `[s][a][s']` kernel. Only shapes and the
    /// initial state are checked here; see [`validate_mdp`] for the rest.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        initial_state: usize,
        transitions: Vec<f64>,
    ) -> Result<Self, SspError> {
        if num_states == 0 || num_actions == 0 {
            return Err(SspError::EmptyModel);
        }
        if initial_state >= num_states {
            return Err(SspError::StateOutOfRange(initial_state));
        }
        let expected = num_states * num_actions * (num_states + 1);
        if transitions.len() != expected {
            return Err(SspError::ShapeMismatch {
                expected,
                found: transitions.len(),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            initial_state,
            transitions,
        })
    }

    pub fn from_nested(
        num_states: usize,
        num_actions: usize,
        initial_state: usize,
        transitions: &[Vec<Vec<f64>>],
    ) -> Result<Self, SspError> {
        let mut flat = Vec::with_capacity(num_states * num_actions * (num_states + 1));
        if transitions.len() != num_states {
            return Err(SspError::ShapeMismatch {
                expected: num_states,
                found: transitions.len(),
            });
        }
        for per_state in transitions {
            if per_state.len() != num_actions {
                return Err(SspError::ShapeMismatch {
                    expected: num_actions,
                    found: per_state.len(),
                });
            }
            for row in per_state {
                if row.len() != num_states + 1 {
                    return Err(SspError::ShapeMismatch {
                        expected: num_states + 1,
                        found: row.len(),
                    });
                }
                flat.extend_from_slice(row);
            }
        }
        Self::new(num_states, num_actions, initial_state, flat)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Index of the goal in kernel rows.
    pub fn goal(&self) -> usize {
        self.num_states
    }

    /// Same kernel with a different start state.
    pub fn with_initial_state(&self, s: usize) -> Result<Self, SspError> {
        if s >= self.num_states {
            return Err(SspError::StateOutOfRange(s));
        }
        let mut m = self.clone();
        m.initial_state = s;
        Ok(m)
    }

    /// `P(. | s, a)` over states followed by the goal.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let width = self.num_states + 1;
        let start = (s * self.num_actions + a) * width;
        &self.transitions[start..start + width]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    pub fn kernel(&self) -> &[f64] {
        &self.transitions
    }

    /// States from which the goal can be reached with positive probability
    /// under some action sequence.
    pub fn goal_reachable(&self) -> Vec<bool> {
        self.reach_goal_with(|_, _| true)
    }

    /// Backward search from the goal over edges `(s, a) -> s'` with
    /// `P(s'|s,a) > 0`, restricted to actions where `allowed(s, a)`.
    pub(crate) fn reach_goal_with(&self, allowed: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let n = self.num_states;
        let goal = self.goal();
        // predecessors[s'] = states with an allowed action reaching s'
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for s in 0..n {
            for a in 0..self.num_actions {
                if !allowed(s, a) {
                    continue;
                }
                for (next, &p) in self.row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        preds[next].push(s);
                    }
                }
            }
        }
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([goal]);
        while let Some(t) = queue.pop_front() {
            for &s in &preds[t] {
                if !reached[s] {
                    reached[s] = true;
                    queue.push_back(s);
                }
            }
        }
        reached
    }
}

/// Checks that every kernel row is a distribution and that the goal is
/// reachable from every state.
pub fn validate_mdp(mdp: &Mdp) -> Result<&Mdp, ValidationReport> {
    let mut violations = Vec::new();
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let row = mdp.row(s, a);
            if let Some(next) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
                violations.push(Violation::NegativeProbability {
                    state: s,
                    action: a,
                    next,
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                violations.push(Violation::RowNotStochastic {
                    state: s,
                    action: a,
                    sum,
                });
            }
        }
    }
    for (s, ok) in mdp.goal_reachable().into_iter().enumerate() {
        if !ok {
            violations.push(Violation::GoalUnreachableFrom(s));
        }
    }
    if violations.is_empty() {
        Ok(mdp)
    } else {
        Err(ValidationReport { violations })
    }
}

/// Per-(state, action) costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl CostFunction {
    /// Costs must lie in `[0, 1]`.
    pub fn new(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self, SspError> {
        if values.len() != num_states * num_actions {
            return Err(SspError::ShapeMismatch {
                expected: num_states * num_actions,
                found: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(SspError::CostOutOfRange(bad));
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    /// Like [`CostFunction::new`], additionally requiring every entry to be at
    /// least `c_min`.
    pub fn with_min(
        num_states: usize,
        num_actions: usize,
        values: Vec<f64>,
        c_min: f64,
    ) -> Result<Self, SspError> {
        let c = Self::new(num_states, num_actions, values)?;
        match c.values.iter().find(|&&v| v < c_min) {
            Some(&bad) => Err(SspError::BelowMinimumCost { cost: bad, c_min }),
            None => Ok(c),
        }
    }

    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Result<Self, SspError> {
        Self::new(num_states, num_actions, vec![value; num_states * num_actions])
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn matches(&self, mdp: &Mdp) -> bool {
        self.num_states == mdp.num_states() && self.num_actions == mdp.num_actions()
    }
}
