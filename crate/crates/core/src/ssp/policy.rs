use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SspError;

/// Tolerance on the row sums of a policy.
pub const POLICY_ROW_TOL: f64 = 1e-9;

/// A stationary randomized policy `pi(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self, SspError> {
        if probs.len() != num_states * num_actions {
            return Err(SspError::ShapeMismatch {
                expected: num_states * num_actions,
                found: probs.len(),
            });
        }
        for s in 0..num_states {
            let row = &probs[s * num_actions..(s + 1) * num_actions];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > POLICY_ROW_TOL
            {
                return Err(SspError::InvalidPolicyRow(s));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Plays `actions[s]` with probability one.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self, SspError> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(SspError::ActionOutOfRange(a));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self {
            num_states: actions.len(),
            num_actions,
            probs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.num_states).all(|s| self.row(s).contains(&1.0))
    }

    /// The most likely action in `s`, lowest index on ties.
    pub fn mode(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

/// Inverse-CDF draw from an (approximately) normalized weight vector. Falls
/// back to the last positive entry when rounding leaves `u` past the total.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Per-state quantity that may be infinite (improper policy from that state).
/// `None` marks an infinite entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateValues {
    values: Vec<Option<f64>>,
}

/// Expected cumulative cost to the goal.
pub type CostToGo = StateValues;
/// Expected number of steps to the goal.
pub type HittingTimes = StateValues;

impl StateValues {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, s: usize) -> Option<f64> {
        self.values[s]
    }

    pub fn is_finite(&self, s: usize) -> bool {
        self.values[s].is_some()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// The value at `s`, or an error if the policy is improper there.
    pub fn require(&self, s: usize) -> Result<f64, SspError> {
        self.values[s].ok_or(SspError::ImproperAt(s))
    }

    /// Largest value; `None` when any entry is infinite.
    pub fn max(&self) -> Option<f64> {
        self.values
            .iter()
            .try_fold(f64::NEG_INFINITY, |m, v| v.map(|x| m.max(x)))
    }

    pub fn as_slice(&self) -> &[Option<f64>] {
        &self.values
    }

    /// Finite entries, with infinite ones replaced by `fill`.
    pub fn to_vec_or(&self, fill: f64) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_or(fill)).collect()
    }
}
