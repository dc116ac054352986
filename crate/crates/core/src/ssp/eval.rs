use nalgebra::{DMatrix, DVector};

use super::{CostFunction, Mdp, SspError, StateValues, StochasticPolicy};

/// States from which `policy` reaches the goal with probability one.
///
/// A state qualifies iff every state reachable from it (under `policy`) can
/// still reach the goal with positive probability.
pub fn proper_states(mdp: &Mdp, policy: &StochasticPolicy) -> Vec<bool> {
    let n = mdp.num_states();
    let m = mdp.num_actions();
    let mut proper = mdp.reach_goal_with(|s, a| policy.prob(s, a) > 0.0);
    loop {
        let mut changed = false;
        for s in 0..n {
            if !proper[s] {
                continue;
            }
            let leaks = (0..m).any(|a| {
                policy.prob(s, a) > 0.0
                    && mdp.row(s, a)[..n]
                        .iter()
                        .enumerate()
                        .any(|(t, &p)| p > 0.0 && !proper[t])
            });
            if leaks {
                proper[s] = false;
                changed = true;
            }
        }
        if !changed {
            return proper;
        }
    }
}

/// Policy-averaged kernel restricted to states: `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
pub(crate) fn policy_kernel(mdp: &Mdp, policy: &StochasticPolicy) -> DMatrix<f64> {
    let n = mdp.num_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (t, &pr) in mdp.row(s, a)[..n].iter().enumerate() {
                p[(s, t)] += w * pr;
            }
        }
    }
    p
}

/// Factored Bellman system `(I - P_pi) J = c_pi` on the proper states of a
/// policy. Solving for several cost functions reuses one LU factorization.
pub struct PolicyEvaluator<'a> {
    mdp: &'a Mdp,
    policy: &'a StochasticPolicy,
    proper: Vec<bool>,
    index: Vec<usize>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'a> PolicyEvaluator<'a> {
    pub fn new(mdp: &'a Mdp, policy: &'a StochasticPolicy) -> Result<Self, SspError> {
        if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
            return Err(SspError::ShapeMismatch {
                expected: mdp.num_states() * mdp.num_actions(),
                found: policy.num_states() * policy.num_actions(),
            });
        }
        let proper = proper_states(mdp, policy);
        let members: Vec<usize> = (0..mdp.num_states()).filter(|&s| proper[s]).collect();
        let mut index = vec![usize::MAX; mdp.num_states()];
        for (i, &s) in members.iter().enumerate() {
            index[s] = i;
        }
        let lu = if members.is_empty() {
            None
        } else {
            let full = policy_kernel(mdp, policy);
            let k = members.len();
            let mut a = DMatrix::identity(k, k);
            for (i, &s) in members.iter().enumerate() {
                for (j, &t) in members.iter().enumerate() {
                    a[(i, j)] -= full[(s, t)];
                }
            }
            let lu = a.lu();
            if !lu.is_invertible() {
                return Err(SspError::SingularSystem);
            }
            Some(lu)
        };
        Ok(Self {
            mdp,
            policy,
            proper,
            index,
            lu,
        })
    }

    pub fn proper(&self) -> &[bool] {
        &self.proper
    }

    /// Solves the Bellman equations for a per-state expected one-step cost.
    pub fn solve_state_costs(&self, state_cost: &[f64]) -> Result<StateValues, SspError> {
        let n = self.mdp.num_states();
        let Some(lu) = &self.lu else {
            return Ok(StateValues::new(vec![None; n]));
        };
        let members: Vec<usize> = (0..n).filter(|&s| self.proper[s]).collect();
        let rhs = DVector::from_iterator(members.len(), members.iter().map(|&s| state_cost[s]));
        let sol = lu.solve(&rhs).ok_or(SspError::SingularSystem)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(SspError::SingularSystem);
        }
        let values = (0..n)
            .map(|s| self.proper[s].then(|| sol[self.index[s]]))
            .collect();
        Ok(StateValues::new(values))
    }

    pub fn evaluate(&self, cost: &CostFunction) -> Result<StateValues, SspError> {
        if !cost.matches(self.mdp) {
            return Err(SspError::ShapeMismatch {
                expected: self.mdp.num_states() * self.mdp.num_actions(),
                found: cost.values().len(),
            });
        }
        let state_cost: Vec<f64> = (0..self.mdp.num_states())
            .map(|s| {
                (0..self.mdp.num_actions())
                    .map(|a| self.policy.prob(s, a) * cost.get(s, a))
                    .sum()
            })
            .collect();
        self.solve_state_costs(&state_cost)
    }

    pub fn hitting_times(&self) -> Result<StateValues, SspError> {
        self.solve_state_costs(&vec![1.0; self.mdp.num_states()])
    }
}

/// Exact cost-to-go of `policy`; states where it is improper come back
/// infinite.
pub fn evaluate_policy(
    mdp: &Mdp,
    policy: &StochasticPolicy,
    cost: &CostFunction,
) -> Result<StateValues, SspError> {
    PolicyEvaluator::new(mdp, policy)?.evaluate(cost)
}

/// Expected steps to the goal; the unit-cost special case of
/// [`evaluate_policy`].
pub fn hitting_times(mdp: &Mdp, policy: &StochasticPolicy) -> Result<StateValues, SspError> {
    let unit = CostFunction::constant(mdp.num_states(), mdp.num_actions(), 1.0)?;
    evaluate_policy(mdp, policy, &unit)
}
