//! Online mirror descent over occupancy measures for stochastic shortest path
//! problems whose costs change adversarially between episodes.
//!
//! * [`ssp`]: instances, exact policy evaluation, planning, occupancy measures.
//! * [`omd`]: the exponential-weights step and KL projections onto bounded-time
//!   occupancy sets, solved through their Lagrangian duals.
//! * [`confidence`]: visit counts, doubling epochs, Bernstein confidence sets and
//!   the optimistic fast policy.
//! * [`agents`]: SSP-O-REPS, its mid-episode switching variant, and the
//!   unknown-transition learner with forced exploration and diameter estimation.
//! * [`envlab`]: environment generators, counterexample fixtures and cost
//!   schedulers.
//! * [`harness`]: the episode loop, regret accounting, Monte-Carlo evaluation,
//!   sweeps and the on-disk formats.

pub mod agents;
pub mod confidence;
pub mod envlab;
pub mod harness;
pub mod omd;
pub mod rng;
pub mod ssp;
