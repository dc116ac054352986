use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceSet;
use crate::ssp::Mdp;

/// Entries of `q'` below this are treated as this inside logarithms.
pub const Q_FLOOR: f64 = 1e-300;

/// Multipliers of the projection program: `lambda` for the time budget, `v`
/// for the flow equations (the goal's multiplier is fixed at zero), and
/// `mu_plus`/`mu_minus` for the upper/lower confidence inequalities, indexed
/// `[s][a][s']` (empty for known transitions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVariables {
    pub lambda: f64,
    pub v: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
}

impl DualVariables {
    pub fn zeros_known(num_states: usize) -> Self {
        Self {
            lambda: 0.0,
            v: vec![0.0; num_states],
            mu_plus: Vec::new(),
            mu_minus: Vec::new(),
        }
    }

    pub fn zeros_extended(num_states: usize, num_actions: usize) -> Self {
        let len = num_states * num_actions * (num_states + 1);
        Self {
            lambda: 0.0,
            v: vec![0.0; num_states],
            mu_plus: vec![0.0; len],
            mu_minus: vec![0.0; len],
        }
    }

    /// `[lambda, v, mu_plus, mu_minus]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(1 + self.v.len() + 2 * self.mu_plus.len());
        z.push(self.lambda);
        z.extend_from_slice(&self.v);
        z.extend_from_slice(&self.mu_plus);
        z.extend_from_slice(&self.mu_minus);
        z
    }

    pub fn from_flat(z: &[f64], num_states: usize) -> Self {
        let rest = &z[1 + num_states..];
        let half = rest.len() / 2;
        Self {
            lambda: z[0],
            v: z[1..1 + num_states].to_vec(),
            mu_plus: rest[..half].to_vec(),
            mu_minus: rest[half..].to_vec(),
        }
    }
}

/// Which occupancy polytope the projection targets.
#[derive(Debug, Clone, Copy)]
pub enum Geometry<'a> {
    /// Flow constraints under a fixed kernel.
    Known(&'a Mdp),
    /// Extended flow constraints with the kernel ranging over a confidence set.
    Extended(&'a ConfidenceSet),
}

/// Negated Lagrangian dual of `min KL(q || q')` over a bounded-time occupancy
/// polytope, up to the constant `sum q'`:
///
/// `F = sum q'(.) exp(-lambda + B(.)) + lambda tau - v(s0)`
///
/// with `B(s,a) = v(s) - sum_{s'} P(s'|s,a) v(s')` for a known kernel and
/// `B(s,a,s') = v(s) - v(s') + mu-(s,a,s') - mu+(s,a,s') + sum_{s''} [P_bar (mu+ - mu-) + eps (mu+ + mu-)](s,a,s'')`
/// over a confidence set.
#[derive(Debug, Clone)]
pub struct DualProblem<'a> {
    pub(crate) geometry: Geometry<'a>,
    /// `ln max(q', Q_FLOOR)`, shaped like the primal variable.
    pub(crate) log_q: Vec<f64>,
    pub(crate) tau: f64,
    pub(crate) num_states: usize,
    pub(crate) num_actions: usize,
    pub(crate) initial_state: usize,
}

impl<'a> DualProblem<'a> {
    /// `q_prime` is `[s][a]` for [`Geometry::Known`] and `[s][a][s']` otherwise.
    pub fn new(geometry: Geometry<'a>, q_prime: &[f64], tau: f64) -> Self {
        let (n, m, s0) = match geometry {
            Geometry::Known(mdp) => (mdp.num_states(), mdp.num_actions(), mdp.initial_state()),
            Geometry::Extended(conf) => {
                (conf.num_states(), conf.num_actions(), conf.initial_state())
            }
        };
        let expected = match geometry {
            Geometry::Known(_) => n * m,
            Geometry::Extended(_) => n * m * (n + 1),
        };
        assert_eq!(q_prime.len(), expected, "q' shape");
        Self {
            geometry,
            log_q: q_prime.iter().map(|q| q.max(Q_FLOOR).ln()).collect(),
            tau,
            num_states: n,
            num_actions: m,
            initial_state: s0,
        }
    }

    pub fn geometry(&self) -> Geometry<'a> {
        self.geometry
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_extended(&self) -> bool {
        matches!(self.geometry, Geometry::Extended(_))
    }

    pub fn zero_duals(&self) -> DualVariables {
        match self.geometry {
            Geometry::Known(_) => DualVariables::zeros_known(self.num_states),
            Geometry::Extended(_) => DualVariables::zeros_extended(self.num_states, self.num_actions),
        }
    }

    /// Number of flat dual coordinates.
    pub fn dim(&self) -> usize {
        let n = self.num_states;
        match self.geometry {
            Geometry::Known(_) => 1 + n,
            Geometry::Extended(_) => 1 + n + 2 * n * self.num_actions * (n + 1),
        }
    }

    /// Exponents `-lambda + B` of the primal recovery, shaped like `q'`.
    fn exponents(&self, d: &DualVariables) -> Vec<f64> {
        let n = self.num_states;
        let m = self.num_actions;
        match self.geometry {
            Geometry::Known(mdp) => {
                let mut out = Vec::with_capacity(n * m);
                for s in 0..n {
                    for a in 0..m {
                        let pv: f64 = mdp.row(s, a)[..n].iter().zip(&d.v).map(|(p, v)| p * v).sum();
                        out.push(-d.lambda + d.v[s] - pv);
                    }
                }
                out
            }
            Geometry::Extended(conf) => {
                let w = n + 1;
                let mut out = Vec::with_capacity(n * m * w);
                for s in 0..n {
                    for a in 0..m {
                        let base = (s * m + a) * w;
                        let p = conf.p_bar_row(s, a);
                        let r = conf.radius_row(s, a);
                        let shift: f64 = (0..w)
                            .map(|i| {
                                let (mp, mm) = (d.mu_plus[base + i], d.mu_minus[base + i]);
                                p[i] * (mp - mm) + r[i] * (mp + mm)
                            })
                            .sum();
                        for next in 0..w {
                            let vn = if next < n { d.v[next] } else { 0.0 };
                            out.push(
                                -d.lambda + d.v[s] - vn + d.mu_minus[base + next]
                                    - d.mu_plus[base + next]
                                    + shift,
                            );
                        }
                    }
                }
                out
            }
        }
    }

    /// Primal point `q = q' exp(-lambda + B)` associated with `d`.
    pub fn primal(&self, d: &DualVariables) -> Vec<f64> {
        self.exponents(d)
            .into_iter()
            .zip(&self.log_q)
            .map(|(e, l)| (l + e).exp())
            .collect()
    }

    /// Objective and gradient (with the same layout as the duals).
    pub fn objective_and_gradient(&self, d: &DualVariables) -> (f64, DualVariables) {
        let q = self.primal(d);
        let n = self.num_states;
        let m = self.num_actions;
        let total: f64 = q.iter().sum();
        let f = total + d.lambda * self.tau - d.v[self.initial_state];

        let mut g = self.zero_duals();
        g.lambda = self.tau - total;
        g.v[self.initial_state] -= 1.0;
        match self.geometry {
            Geometry::Known(mdp) => {
                for s in 0..n {
                    for a in 0..m {
                        let x = q[s * m + a];
                        g.v[s] += x;
                        for (next, p) in mdp.row(s, a)[..n].iter().enumerate() {
                            g.v[next] -= x * p;
                        }
                    }
                }
            }
            Geometry::Extended(conf) => {
                let w = n + 1;
                for s in 0..n {
                    for a in 0..m {
                        let base = (s * m + a) * w;
                        let block = &q[base..base + w];
                        let mass: f64 = block.iter().sum();
                        g.v[s] += mass;
                        for next in 0..n {
                            g.v[next] -= block[next];
                        }
                        let p = conf.p_bar_row(s, a);
                        let r = conf.radius_row(s, a);
                        for i in 0..w {
                            g.mu_plus[base + i] = -block[i] + (p[i] + r[i]) * mass;
                            g.mu_minus[base + i] = block[i] - (p[i] - r[i]) * mass;
                        }
                    }
                }
            }
        }
        (f, g)
    }
}

/// Value and gradient of the negated dual at `duals`.
pub fn dual_objective_and_gradient(
    problem: &DualProblem<'_>,
    duals: &DualVariables,
) -> (f64, DualVariables) {
    problem.objective_and_gradient(duals)
}

/// Sup-norm of the gradient projected onto the feasible cone at `d`
/// (`lambda >= 0`, `mu >= 0`).
pub fn projected_gradient_norm(d: &DualVariables, g: &DualVariables) -> f64 {
    fn bounded(x: f64, gx: f64) -> f64 {
        (x - (x - gx).max(0.0)).abs()
    }
    let mut r = bounded(d.lambda, g.lambda);
    for gv in &g.v {
        r = r.max(gv.abs());
    }
    for (x, gx) in d.mu_plus.iter().zip(&g.mu_plus) {
        r = r.max(bounded(*x, *gx));
    }
    for (x, gx) in d.mu_minus.iter().zip(&g.mu_minus) {
        r = r.max(bounded(*x, *gx));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Mdp {
        Mdp::from_nested(
            2,
            2,
            0,
            &[
                vec![vec![0.1, 0.6, 0.3], vec![0.0, 0.2, 0.8]],
                vec![vec![0.3, 0.3, 0.4], vec![0.5, 0.0, 0.5]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn initialization_objective_is_pair_count() {
        let mdp = chain();
        let p = DualProblem::new(Geometry::Known(&mdp), &[1.0; 4], 5.0);
        let (f, _) = p.objective_and_gradient(&p.zero_duals());
        assert_eq!(f, 4.0);
    }

    fn check_fd(p: &DualProblem<'_>, d: &DualVariables) {
        let (_, g) = p.objective_and_gradient(d);
        let z = d.to_flat();
        let gz = g.to_flat();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fp = p.objective_and_gradient(&DualVariables::from_flat(&zp, p.num_states)).0;
            let fm = p.objective_and_gradient(&DualVariables::from_flat(&zm, p.num_states)).0;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - gz[i]).abs() <= 1e-4 * gz[i].abs().max(1.0),
                "coordinate {i}: fd {fd} vs {}",
                gz[i]
            );
        }
    }

    #[test]
    fn known_gradient_matches_differences() {
        let mdp = chain();
        let p = DualProblem::new(Geometry::Known(&mdp), &[0.5, 1.5, 0.7, 0.2], 4.0);
        let d = DualVariables {
            lambda: 0.3,
            v: vec![0.4, -0.2],
            mu_plus: vec![],
            mu_minus: vec![],
        };
        check_fd(&p, &d);
    }

    #[test]
    fn extended_gradient_matches_differences() {
        let mdp = chain();
        let conf = ConfidenceSet::singleton(&mdp).with_uniform_radius(0.1);
        let q: Vec<f64> = (0..12).map(|i| 0.1 + 0.05 * i as f64).collect();
        let p = DualProblem::new(Geometry::Extended(&conf), &q, 4.0);
        let mut d = p.zero_duals();
        d.lambda = 0.2;
        d.v = vec![0.3, -0.1];
        for (i, x) in d.mu_plus.iter_mut().enumerate() {
            *x = 0.01 * (i % 5) as f64;
        }
        for (i, x) in d.mu_minus.iter_mut().enumerate() {
            *x = 0.02 * (i % 3) as f64;
        }
        check_fd(&p, &d);
    }
}
