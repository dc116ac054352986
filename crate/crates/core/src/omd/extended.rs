use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceSet;
use crate::ssp::{Mdp, OccupancyMeasure, SspError, StochasticPolicy};

/// Expected visit counts `q(s, a, s')` over `S x A x (S + goal)`, encoding a
/// policy together with a transition kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedOccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
}

impl ExtendedOccupancyMeasure {
    pub fn new(num_states: usize, num_actions: usize, q: Vec<f64>) -> Result<Self, SspError> {
        let expected = num_states * num_actions * (num_states + 1);
        if q.len() != expected {
            return Err(SspError::ShapeMismatch {
                expected,
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
            q: vec![value; num_states * num_actions * (num_states + 1)],
        }
    }

    /// `q(s, a) P(s' | s, a)`.
    pub fn lift(q: &OccupancyMeasure, mdp: &Mdp) -> Self {
        let n = mdp.num_states();
        let m = mdp.num_actions();
        let mut out = Vec::with_capacity(n * m * (n + 1));
        for s in 0..n {
            for a in 0..m {
                out.extend(mdp.row(s, a).iter().map(|p| q.get(s, a) * p));
            }
        }
        Self {
            num_states: n,
            num_actions: m,
            q: out,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn block(&self, s: usize, a: usize) -> &[f64] {
        let w = self.num_states + 1;
        let start = (s * self.num_actions + a) * w;
        &self.q[start..start + w]
    }

    pub fn get(&self, s: usize, a: usize, next: usize) -> f64 {
        self.block(s, a)[next]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    /// `q(s, a) = sum_{s'} q(s, a, s')`.
    pub fn pair_mass(&self, s: usize, a: usize) -> f64 {
        self.block(s, a).iter().sum()
    }

    pub fn state_mass(&self, s: usize) -> f64 {
        (0..self.num_actions).map(|a| self.pair_mass(s, a)).sum()
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    /// Sums out the successor.
    pub fn marginal(&self) -> OccupancyMeasure {
        let q = (0..self.num_states)
            .flat_map(|s| (0..self.num_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.pair_mass(s, a))
            .collect();
        OccupancyMeasure::new(self.num_states, self.num_actions, q).expect("nonnegative sums")
    }

    /// `P^q(s' | s, a) = q(s, a, s') / q(s, a)`; pairs with no mass get the
    /// uniform row over `S + goal`.
    pub fn induced_kernel(&self, initial_state: usize) -> Mdp {
        let w = self.num_states + 1;
        let mut kernel = Vec::with_capacity(self.q.len());
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.block(s, a);
                let mass: f64 = row.iter().sum();
                if mass > 0.0 {
                    kernel.extend(row.iter().map(|x| x / mass));
                } else {
                    kernel.extend(std::iter::repeat_n(1.0 / w as f64, w));
                }
            }
        }
        Mdp::new(self.num_states, self.num_actions, initial_state, kernel)
            .expect("shape preserved")
    }

    /// `pi^q(a | s) = q(s, a) / q(s)`, uniform where `q(s) = 0`.
    pub fn policy(&self) -> StochasticPolicy {
        crate::ssp::policy_of_occupancy(&self.marginal())
    }

    /// `sum_{a,s'} q(s,a,s') - sum_{s'',a''} q(s'',a'',s) - 1{s = s0}`.
    pub fn flow_imbalance(&self, initial_state: usize) -> Vec<f64> {
        let n = self.num_states;
        let mut r: Vec<f64> = (0..n).map(|s| self.state_mass(s)).collect();
        r[initial_state] -= 1.0;
        for s in 0..n {
            for a in 0..self.num_actions {
                for (next, x) in self.block(s, a)[..n].iter().enumerate() {
                    r[next] -= x;
                }
            }
        }
        r
    }

    pub fn flow_residual(&self, initial_state: usize) -> f64 {
        self.flow_imbalance(initial_state)
            .into_iter()
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest violation of `(P_bar - eps) q(s,a) <= q(s,a,s') <= (P_bar + eps) q(s,a)`,
    /// in units of mass.
    pub fn confidence_violation(&self, conf: &ConfidenceSet) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let mass = self.pair_mass(s, a);
                let p = conf.p_bar_row(s, a);
                let r = conf.radius_row(s, a);
                for (i, x) in self.block(s, a).iter().enumerate() {
                    worst = worst
                        .max(x - (p[i] + r[i]) * mass)
                        .max((p[i] - r[i]) * mass - x);
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssp::occupancy_of_policy;

    fn two_state() -> Mdp {
        Mdp::from_nested(
            2,
            2,
            0,
            &[
                vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 1.0]],
                vec![vec![0.2, 0.0, 0.8], vec![0.0, 0.0, 1.0]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn lift_preserves_flow_and_marginal() {
        let mdp = two_state();
        let pi = StochasticPolicy::uniform(2, 2);
        let q = occupancy_of_policy(&mdp, &pi).unwrap();
        let ext = ExtendedOccupancyMeasure::lift(&q, &mdp);
        assert!(ext.flow_residual(0) < 1e-12);
        for (x, y) in ext.marginal().values().iter().zip(q.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let kernel = ext.induced_kernel(0);
        assert!((kernel.prob(0, 0, 1) - 0.5).abs() < 1e-12);
        let singleton = ConfidenceSet::singleton(&mdp);
        assert!(ext.confidence_violation(&singleton) < 1e-12);
    }

    #[test]
    fn empty_pairs_get_uniform_rows() {
        let ext = ExtendedOccupancyMeasure::filled(1, 1, 0.0);
        let k = ext.induced_kernel(0);
        assert_eq!(k.row(0, 0), &[0.5, 0.5]);
    }
}
