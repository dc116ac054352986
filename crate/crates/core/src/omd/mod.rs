//! Online mirror descent over occupancy measures: the exponential-weights
//! step and KL projections onto `{q : flow holds, sum q <= tau}` under a known
//! kernel or a confidence set of kernels.
//!
//! Projections go through the Lagrangian dual. The default solver is a
//! projected Newton method on `(lambda, v)` that eliminates the confidence
//! multipliers exactly (see `newton`); projected gradient on the full dual is
//! available as [`DualSolver::ProjectedGradient`].

mod box_simplex;
mod dual;
mod extended;
mod newton;
mod pgd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::ConfidenceSet;
use crate::ssp::{CostFunction, Mdp, OccupancyMeasure, SspError};

pub use dual::{
    dual_objective_and_gradient, projected_gradient_norm, DualProblem, DualVariables, Geometry,
    Q_FLOOR,
};
pub use extended::ExtendedOccupancyMeasure;

/// Dual residual above which a failed solve is blamed on an empty feasible set.
pub const EMPTY_SET_RESIDUAL: f64 = 1e-3;

/// Residual accepted from a solve that stalled above `dual_tol`. Budgets at
/// the minimal expected time leave only occupancies with zeros, whose duals
/// sit at infinity, and the residual then creeps instead of converging.
pub const STALLED_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OmdError {
    #[error("dual solver stopped at residual {residual:e} after {iterations} iterations")]
    DualDidNotConverge { iterations: usize, residual: f64 },
    #[error("no occupancy measure satisfies the constraints (dual residual {residual:e})")]
    EmptyFeasibleSet { residual: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Ssp(#[from] SspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSolver {
    #[default]
    Newton,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmdParams {
    pub eta: f64,
    /// Time budget, `D / c_min` in the learners.
    pub tau: f64,
    /// Stop once the projected dual gradient is this small in sup norm.
    #[serde(default = "default_dual_tol")]
    pub dual_tol: f64,
    #[serde(default = "default_dual_max_iters")]
    pub dual_max_iters: usize,
    #[serde(default)]
    pub solver: DualSolver,
}

fn default_dual_tol() -> f64 {
    1e-8
}

fn default_dual_max_iters() -> usize {
    50_000
}

impl OmdParams {
    pub fn new(eta: f64, tau: f64) -> Result<Self, OmdError> {
        let p = Self {
            eta,
            tau,
            dual_tol: default_dual_tol(),
            dual_max_iters: default_dual_max_iters(),
            solver: DualSolver::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_solver(mut self, solver: DualSolver) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<(), OmdError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OmdError::InvalidParams(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(OmdError::InvalidParams(format!("tau must be at least 1, got {}", self.tau)));
        }
        if !(self.dual_tol > 0.0) || self.dual_max_iters == 0 {
            return Err(OmdError::InvalidParams("dual tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// How a projection's dual solve went.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualTelemetry {
    pub iterations: usize,
    /// Sup norm of the projected dual gradient at the returned point.
    pub residual: f64,
    pub objective: f64,
    /// `tau - sum q`.
    pub slack: f64,
    pub solver: DualSolver,
}

#[derive(Debug, Clone)]
pub struct Projection<Q> {
    pub q: Q,
    pub duals: DualVariables,
    pub telemetry: DualTelemetry,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
    pub diverged: bool,
    /// Stopped because the residual no longer improved.
    pub stalled: bool,
}

/// `q(s, a) exp(-eta c(s, a))`.
pub fn unconstrained_step(q: &OccupancyMeasure, c: &CostFunction, eta: f64) -> OccupancyMeasure {
    let values = q
        .values()
        .iter()
        .zip(c.values())
        .map(|(q, c)| q * (-eta * c).exp())
        .collect();
    OccupancyMeasure::new(q.num_states(), q.num_actions(), values).expect("shape preserved")
}

/// `q(s, a, s') exp(-eta c(s, a))`.
pub fn unconstrained_step_extended(
    q: &ExtendedOccupancyMeasure,
    c: &CostFunction,
    eta: f64,
) -> ExtendedOccupancyMeasure {
    let w = q.num_states() + 1;
    let values = q
        .values()
        .iter()
        .enumerate()
        .map(|(i, q)| q * (-eta * c.values()[i / w]).exp())
        .collect();
    ExtendedOccupancyMeasure::new(q.num_states(), q.num_actions(), values).expect("shape preserved")
}

/// Unnormalized relative entropy `sum q ln(q / q') - q + q'`.
pub fn kl_divergence(q: &[f64], q_prime: &[f64]) -> f64 {
    q.iter()
        .zip(q_prime)
        .map(|(&x, &y)| {
            let y = y.max(Q_FLOOR);
            if x > 0.0 {
                x * (x / y).ln() - x + y
            } else {
                y
            }
        })
        .sum()
}

fn usable_warm<'w>(problem: &DualProblem<'_>, warm: Option<&'w DualVariables>) -> Option<&'w DualVariables> {
    let template = problem.zero_duals();
    warm.filter(|w| {
        w.v.len() == template.v.len()
            && w.mu_plus.len() == template.mu_plus.len()
            && w.mu_minus.len() == template.mu_minus.len()
            && w.to_flat().iter().all(|x| x.is_finite())
    })
}

/// Minimizes the dual and recovers the primal point.
pub fn solve_dual(
    problem: &DualProblem<'_>,
    params: &OmdParams,
    warm: Option<&DualVariables>,
) -> Result<(Vec<f64>, DualVariables, DualTelemetry), OmdError> {
    params.validate()?;
    let start = usable_warm(problem, warm).cloned().unwrap_or_else(|| problem.zero_duals());
    let (q, duals, outcome) = match params.solver {
        DualSolver::Newton => {
            let mut z = vec![start.lambda];
            z.extend_from_slice(&start.v);
            let (z, outcome) = newton::solve(problem, &z, params.dual_tol, params.dual_max_iters);
            let (q, duals) = newton::recover(problem, &z);
            (q, duals, outcome)
        }
        DualSolver::ProjectedGradient => {
            let (duals, outcome) = pgd::solve(problem, &start, params.dual_tol, params.dual_max_iters);
            (problem.primal(&duals), duals, outcome)
        }
    };
    if outcome.diverged || !outcome.residual.is_finite() {
        return Err(OmdError::EmptyFeasibleSet {
            residual: outcome.residual,
        });
    }
    let accepted = outcome.residual <= params.dual_tol
        || (outcome.stalled && outcome.residual <= STALLED_RESIDUAL.max(params.dual_tol));
    if !accepted {
        return Err(if outcome.residual > EMPTY_SET_RESIDUAL {
            OmdError::EmptyFeasibleSet {
                residual: outcome.residual,
            }
        } else {
            OmdError::DualDidNotConverge {
                iterations: outcome.iterations,
                residual: outcome.residual,
            }
        });
    }
    let telemetry = DualTelemetry {
        iterations: outcome.iterations,
        residual: outcome.residual,
        objective: outcome.objective,
        slack: problem.tau() - q.iter().sum::<f64>(),
        solver: params.solver,
    };
    Ok((q, duals, telemetry))
}

/// KL projection of `q_prime` onto the occupancy measures of `mdp` with total
/// mass at most `params.tau`.
pub fn project_known(
    q_prime: &OccupancyMeasure,
    mdp: &Mdp,
    params: &OmdParams,
    warm: Option<&DualVariables>,
) -> Result<Projection<OccupancyMeasure>, OmdError> {
    if q_prime.num_states() != mdp.num_states() || q_prime.num_actions() != mdp.num_actions() {
        return Err(SspError::ShapeMismatch {
            expected: mdp.num_states() * mdp.num_actions(),
            found: q_prime.values().len(),
        }
        .into());
    }
    let problem = DualProblem::new(Geometry::Known(mdp), q_prime.values(), params.tau);
    let (q, duals, telemetry) = solve_dual(&problem, params, warm)?;
    Ok(Projection {
        q: OccupancyMeasure::new(mdp.num_states(), mdp.num_actions(), q)?,
        duals,
        telemetry,
    })
}

/// KL projection of `q_prime` onto the extended occupancy measures whose
/// induced kernel lies in `conf`, with total mass at most `params.tau`.
pub fn project_extended(
    q_prime: &ExtendedOccupancyMeasure,
    conf: &ConfidenceSet,
    params: &OmdParams,
    warm: Option<&DualVariables>,
) -> Result<Projection<ExtendedOccupancyMeasure>, OmdError> {
    if q_prime.num_states() != conf.num_states() || q_prime.num_actions() != conf.num_actions() {
        return Err(SspError::ShapeMismatch {
            expected: conf.num_states() * conf.num_actions() * (conf.num_states() + 1),
            found: q_prime.values().len(),
        }
        .into());
    }
    let problem = DualProblem::new(Geometry::Extended(conf), q_prime.values(), params.tau);
    let (q, duals, telemetry) = solve_dual(&problem, params, warm)?;
    Ok(Projection {
        q: ExtendedOccupancyMeasure::new(conf.num_states(), conf.num_actions(), q)?,
        duals,
        telemetry,
    })
}
