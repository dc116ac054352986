//! Finite stochastic shortest path model: instances, policies, exact policy
//! evaluation, planning, and the occupancy-measure view of policies.

mod eval;
mod mdp;
mod occupancy;
mod planning;
mod policy;

use rand::Rng;
use thiserror::Error;

pub use eval::{evaluate_policy, hitting_times, proper_states, PolicyEvaluator};
pub use mdp::{validate_mdp, CostFunction, Mdp, MdpFile, ValidationReport, Violation, ROW_SUM_TOL};
pub use occupancy::{inner_product, occupancy_of_policy, policy_of_occupancy, OccupancyMeasure};
pub use planning::{fast_policy_and_diameter, value_iteration, FastPolicy, Plan, ViOptions};
pub use policy::{sample_index, CostToGo, HittingTimes, StateValues, StochasticPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SspError {
    #[error("model needs at least one state and one action")]
    EmptyModel,
    #[error("shape mismatch: expected {expected} entries, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("state {0} out of range")]
    StateOutOfRange(usize),
    #[error("action {0} out of range")]
    ActionOutOfRange(usize),
    #[error("cost {0} outside [0, 1]")]
    CostOutOfRange(f64),
    #[error("cost {cost} below declared minimum {c_min}")]
    BelowMinimumCost { cost: f64, c_min: f64 },
    #[error("planning requires strictly positive costs, found {0}")]
    NonPositiveCost(f64),
    #[error("policy row for state {0} is not a distribution")]
    InvalidPolicyRow(usize),
    #[error("occupancy entries must be finite and nonnegative")]
    NegativeOccupancy,
    #[error("policy is improper from state {0}")]
    ImproperAt(usize),
    #[error("singular Bellman system")]
    SingularSystem,
    #[error("value iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("invalid model: {0}")]
    Invalid(#[from] ValidationReport),
}

impl Mdp {
    /// Draws `s' ~ P(. | s, a)`; returns `self.goal()` on termination.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.row(s, a), rng)
    }
}
