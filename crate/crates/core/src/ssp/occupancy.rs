use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::eval::{policy_kernel, proper_states};
use super::{CostFunction, Mdp, SspError, StochasticPolicy};

/// Expected visit counts `q(s, a)` of a policy started at the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(num_states: usize, num_actions: usize, q: Vec<f64>) -> Result<Self, SspError> {
        if q.len() != num_states * num_actions {
            return Err(SspError::ShapeMismatch {
                expected: num_states * num_actions,
                found: q.len(),
            });
        }
        if q.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(SspError::NegativeOccupancy);
        }
        Ok(Self {
            num_states,
            num_actions,
            q,
        })
    }

    pub fn filled(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            q: vec![value; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    /// Expected visits to `s`.
    pub fn state_mass(&self, s: usize) -> f64 {
        self.q[s * self.num_actions..(s + 1) * self.num_actions]
            .iter()
            .sum()
    }

    /// Total mass, equal to the expected time to the goal when flow holds.
    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    /// `<q, c>`.
    pub fn inner(&self, cost: &CostFunction) -> Result<f64, SspError> {
        if cost.num_states() != self.num_states || cost.num_actions() != self.num_actions {
            return Err(SspError::ShapeMismatch {
                expected: self.q.len(),
                found: cost.values().len(),
            });
        }
        Ok(self.q.iter().zip(cost.values()).map(|(q, c)| q * c).sum())
    }

    /// Per-state flow imbalance
    /// `sum_a q(s,a) - sum_{s',a'} q(s',a') P(s|s',a') - 1{s = s0}`.
    pub fn flow_imbalance(&self, mdp: &Mdp) -> Vec<f64> {
        let n = self.num_states;
        let mut r: Vec<f64> = (0..n).map(|s| self.state_mass(s)).collect();
        r[mdp.initial_state()] -= 1.0;
        for sp in 0..n {
            for a in 0..self.num_actions {
                let w = self.get(sp, a);
                if w == 0.0 {
                    continue;
                }
                for (s, &p) in mdp.row(sp, a)[..n].iter().enumerate() {
                    r[s] -= w * p;
                }
            }
        }
        r
    }

    /// Sup-norm of [`OccupancyMeasure::flow_imbalance`].
    pub fn flow_residual(&self, mdp: &Mdp) -> f64 {
        self.flow_imbalance(mdp)
            .into_iter()
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// `<q, c>` as a free function.
pub fn inner_product(q: &OccupancyMeasure, cost: &CostFunction) -> Result<f64, SspError> {
    q.inner(cost)
}

/// Solves the flow equations `(I - P_pi^T) x = e_{s0}` for state visits and
/// splits them by `pi`. Errors if `pi` can reach a state from which it is
/// improper.
pub fn occupancy_of_policy(
    mdp: &Mdp,
    policy: &StochasticPolicy,
) -> Result<OccupancyMeasure, SspError> {
    let n = mdp.num_states();
    let m = mdp.num_actions();
    let proper = proper_states(mdp, policy);
    let kernel = policy_kernel(mdp, policy);

    // states visited with positive probability from s0
    let mut reachable = vec![false; n];
    let mut stack = vec![mdp.initial_state()];
    reachable[mdp.initial_state()] = true;
    while let Some(s) = stack.pop() {
        for t in 0..n {
            if kernel[(s, t)] > 0.0 && !reachable[t] {
                reachable[t] = true;
                stack.push(t);
            }
        }
    }
    if let Some(s) = (0..n).find(|&s| reachable[s] && !proper[s]) {
        return Err(SspError::ImproperAt(s));
    }

    let members: Vec<usize> = (0..n).filter(|&s| reachable[s]).collect();
    let k = members.len();
    let mut a = nalgebra::DMatrix::identity(k, k);
    for (i, &t) in members.iter().enumerate() {
        for (j, &s) in members.iter().enumerate() {
            a[(i, j)] -= kernel[(s, t)];
        }
    }
    let mut rhs = DVector::zeros(k);
    let start = members
        .iter()
        .position(|&s| s == mdp.initial_state())
        .expect("initial state is reachable");
    rhs[start] = 1.0;
    let visits = a.lu().solve(&rhs).ok_or(SspError::SingularSystem)?;

    let mut q = vec![0.0; n * m];
    for (i, &s) in members.iter().enumerate() {
        let x = visits[i].max(0.0);
        for a in 0..m {
            q[s * m + a] = x * policy.prob(s, a);
        }
    }
    OccupancyMeasure::new(n, m, q)
}

/// `pi(a|s) = q(s,a) / q(s)`; states with no mass get the uniform
/// distribution.
pub fn policy_of_occupancy(q: &OccupancyMeasure) -> StochasticPolicy {
    let n = q.num_states();
    let m = q.num_actions();
    let mut probs = vec![1.0 / m as f64; n * m];
    for s in 0..n {
        let mass = q.state_mass(s);
        if mass > 0.0 && mass.is_finite() {
            for a in 0..m {
                probs[s * m + a] = q.get(s, a) / mass;
            }
        }
    }
    StochasticPolicy::new(n, m, probs).expect("normalized rows")
}
