use serde::{Deserialize, Serialize};

use super::eval::PolicyEvaluator;
use super::{CostFunction, Mdp, SspError, StateValues, StochasticPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    /// Stop once the sup-norm change of one sweep drops below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 1_000_000,
        }
    }
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct Plan {
    /// Deterministic greedy policy.
    pub policy: StochasticPolicy,
    /// Exact cost-to-go of `policy`.
    pub values: Vec<f64>,
    pub iterations: usize,
}

// Relative slack under which two Q-values count as tied.
const TIE_TOL: f64 = 1e-12;

fn q_value(mdp: &Mdp, cost: &CostFunction, values: &[f64], s: usize, a: usize) -> f64 {
    let n = mdp.num_states();
    let future: f64 = mdp.row(s, a)[..n]
        .iter()
        .zip(values)
        .map(|(p, v)| p * v)
        .sum();
    cost.get(s, a) + future
}

/// Greedy action with ties broken toward the lowest index.
fn greedy(mdp: &Mdp, cost: &CostFunction, values: &[f64], s: usize) -> usize {
    let qs: Vec<f64> = (0..mdp.num_actions())
        .map(|a| q_value(mdp, cost, values, s, a))
        .collect();
    let best = qs.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOL * best.abs().max(1.0);
    qs.iter().position(|&q| q <= best + slack).unwrap_or(0)
}

/// Optimal deterministic policy for a strictly positive cost.
///
/// Gauss-Seidel value iteration from zero runs until one sweep changes no
/// value by more than `opts.tol`. The greedy policy is then evaluated exactly
/// and improved until stable, so the returned values are the exact
/// cost-to-go of the returned policy.
pub fn value_iteration(mdp: &Mdp, cost: &CostFunction, opts: ViOptions) -> Result<Plan, SspError> {
    if !cost.matches(mdp) {
        return Err(SspError::ShapeMismatch {
            expected: mdp.num_states() * mdp.num_actions(),
            found: cost.values().len(),
        });
    }
    if let Some(&c) = cost.values().iter().find(|&&c| c <= 0.0) {
        return Err(SspError::NonPositiveCost(c));
    }
    if let Some(s) = mdp.goal_reachable().iter().position(|ok| !ok) {
        return Err(SspError::ImproperAt(s));
    }
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    let mut iterations = 0;
    loop {
        if iterations >= opts.max_iters {
            return Err(SspError::NoConvergence(opts.max_iters));
        }
        iterations += 1;
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let best = (0..mdp.num_actions())
                .map(|a| q_value(mdp, cost, &values, s, a))
                .fold(f64::INFINITY, f64::min);
            delta = delta.max((best - values[s]).abs());
            values[s] = best;
        }
        if delta < opts.tol {
            break;
        }
    }

    let mut actions: Vec<usize> = (0..n).map(|s| greedy(mdp, cost, &values, s)).collect();
    for _ in 0..=n * mdp.num_actions() {
        let policy = StochasticPolicy::deterministic(mdp.num_actions(), &actions)?;
        let exact = PolicyEvaluator::new(mdp, &policy)?.evaluate(cost)?;
        let Some(exact) = exact.as_slice().iter().copied().collect::<Option<Vec<f64>>>() else {
            return Err(SspError::NoConvergence(iterations));
        };
        let mut improved = false;
        for s in 0..n {
            let current = q_value(mdp, cost, &exact, s, actions[s]);
            let candidate = greedy(mdp, cost, &exact, s);
            let cq = q_value(mdp, cost, &exact, s, candidate);
            if cq < current - TIE_TOL * current.abs().max(1.0) {
                actions[s] = candidate;
                improved = true;
            }
        }
        if !improved {
            return Ok(Plan {
                policy,
                values: exact,
                iterations,
            });
        }
    }
    Err(SspError::NoConvergence(iterations))
}

/// Fast policy (optimal for unit cost), its hitting times, and the
/// SSP-diameter `D = max_s T(s)`.
#[derive(Debug, Clone)]
pub struct FastPolicy {
    pub policy: StochasticPolicy,
    pub times: StateValues,
    pub diameter: f64,
}

pub fn fast_policy_and_diameter(mdp: &Mdp, opts: ViOptions) -> Result<FastPolicy, SspError> {
    let unit = CostFunction::constant(mdp.num_states(), mdp.num_actions(), 1.0)?;
    let plan = value_iteration(mdp, &unit, opts)?;
    let diameter = plan.values.iter().copied().fold(0.0, f64::max);
    Ok(FastPolicy {
        policy: plan.policy,
        times: StateValues::new(plan.values.into_iter().map(Some).collect()),
        diameter,
    })
}
