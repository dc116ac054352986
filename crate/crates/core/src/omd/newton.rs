//! Projected Newton method on `(lambda, v)` with the confidence multipliers
//! eliminated in closed form.
//!
//! For fixed `(lambda, v)` the minimum of the dual over `mu >= 0` separates by
//! `(s, a)`: it equals `exp(-lambda + v(s) + ln M(s, a))`, where `ln M` is the
//! negated KL distance from the weights `q'(s,a,.) e^{-v(.)}` to the slice of
//! the simplex cut out by the confidence bounds. Its maximizer `p(. | s, a)`
//! is the transition row of the primal solution, and by the envelope theorem
//! the reduced gradient and Hessian only need `p` and its sensitivity on the
//! entries strictly inside their bounds. Known transitions are the case
//! `p = P(. | s, a)` with no sensitivity.

use nalgebra::{DMatrix, DVector};

use super::box_simplex::{project, BoxSimplexSolution, Side};
use super::dual::{DualProblem, DualVariables, Geometry};
use super::SolveOutcome;

/// Multipliers on entries that must vanish (both bounds zero) are reported
/// as this instead of `+inf`.
pub(crate) const MU_CAP: f64 = 200.0;

// exp(700) is close to f64::MAX.
const MAX_EXPONENT: f64 = 700.0;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Iterations over which the residual must at least halve.
const STALL_WINDOW: usize = 100;

pub(crate) struct Reduced {
    pub f: f64,
    pub grad: Vec<f64>,
    pub hess: Option<DMatrix<f64>>,
}

/// Per-block data that does not depend on the duals.
pub(crate) struct Blocks {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Blocks {
    pub fn new(problem: &DualProblem<'_>) -> Self {
        match problem.geometry {
            Geometry::Known(_) => Self {
                lo: Vec::new(),
                hi: Vec::new(),
            },
            Geometry::Extended(conf) => {
                let mut lo = Vec::with_capacity(problem.log_q.len());
                let mut hi = Vec::with_capacity(problem.log_q.len());
                for s in 0..problem.num_states {
                    for a in 0..problem.num_actions {
                        let (l, h) = conf.bounds(s, a);
                        lo.extend(l);
                        hi.extend(h);
                    }
                }
                Self { lo, hi }
            }
        }
    }
}

fn block_solution(
    problem: &DualProblem<'_>,
    blocks: &Blocks,
    v: &[f64],
    s: usize,
    a: usize,
) -> BoxSimplexSolution {
    let n = problem.num_states;
    let w = n + 1;
    let base = (s * problem.num_actions + a) * w;
    let lw: Vec<f64> = (0..w)
        .map(|i| problem.log_q[base + i] - if i < n { v[i] } else { 0.0 })
        .collect();
    project(&lw, &blocks.lo[base..base + w], &blocks.hi[base..base + w])
}

/// Reduced objective at `z = [lambda, v]`; `None` when an exponent overflows.
pub(crate) fn reduced(
    problem: &DualProblem<'_>,
    blocks: &Blocks,
    z: &[f64],
    want_hess: bool,
) -> Option<Reduced> {
    let n = problem.num_states;
    let m = problem.num_actions;
    let lambda = z[0];
    let v = &z[1..];
    let dim = n + 1;
    let mut f = lambda * problem.tau - v[problem.initial_state];
    let mut grad = vec![0.0; dim];
    grad[0] = problem.tau;
    grad[1 + problem.initial_state] -= 1.0;
    let mut hess = want_hess.then(|| DMatrix::<f64>::zeros(dim, dim));
    let mut d = vec![0.0; dim];

    for s in 0..n {
        for a in 0..m {
            // p over S, plus covariance data on the free entries.
            let (log_mass, p_states, free): (f64, Vec<f64>, Option<(Vec<usize>, f64)>) =
                match problem.geometry {
                    Geometry::Known(mdp) => {
                        let row = &mdp.row(s, a)[..n];
                        let pv: f64 = row.iter().zip(v).map(|(p, v)| p * v).sum();
                        (problem.log_q[s * m + a] - pv, row.to_vec(), None)
                    }
                    Geometry::Extended(_) => {
                        let sol = block_solution(problem, blocks, v, s, a);
                        let free_idx: Vec<usize> =
                            (0..=n).filter(|&i| sol.side[i] == Side::Free).collect();
                        let free_mass: f64 = free_idx.iter().map(|&i| sol.p[i]).sum();
                        let states: Vec<usize> = free_idx.into_iter().filter(|&i| i < n).collect();
                        let mut p = sol.p;
                        p.truncate(n);
                        (sol.log_mass, p, Some((states, free_mass)))
                    }
                };
            let phi = -lambda + v[s] + log_mass;
            if !phi.is_finite() || phi > MAX_EXPONENT {
                return None;
            }
            let x = phi.exp();
            f += x;
            grad[0] -= x;
            grad[1 + s] += x;
            for (t, p) in p_states.iter().enumerate() {
                grad[1 + t] -= x * p;
            }
            if let Some(h) = hess.as_mut() {
                d[0] = -1.0;
                for t in 0..n {
                    d[1 + t] = -p_states[t];
                }
                d[1 + s] += 1.0;
                for i in 0..dim {
                    if d[i] == 0.0 {
                        continue;
                    }
                    let xi = x * d[i];
                    for j in 0..dim {
                        h[(i, j)] += xi * d[j];
                    }
                }
                if let Some((states, free_mass)) = &free {
                    if *free_mass > 0.0 {
                        for &i in states {
                            let pi = p_states[i];
                            h[(1 + i, 1 + i)] += x * pi;
                            for &j in states {
                                h[(1 + i, 1 + j)] -= x * pi * p_states[j] / free_mass;
                            }
                        }
                    }
                }
            }
        }
    }
    Some(Reduced {
        f,
        grad,
        hess,
    })
}

fn projected_residual(z: &[f64], g: &[f64]) -> f64 {
    let lam = (z[0] - (z[0] - g[0]).max(0.0)).abs();
    g[1..].iter().fold(lam, |r, x| r.max(x.abs()))
}

fn newton_direction(h: &DMatrix<f64>, g: &[f64], fix_lambda: bool) -> Vec<f64> {
    let dim = g.len();
    let idx: Vec<usize> = (if fix_lambda { 1 } else { 0 }..dim).collect();
    let k = idx.len();
    let scale = (0..dim).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
    let mut ridge = 1e-9 * scale;
    let mut out = vec![0.0; dim];
    for _ in 0..12 {
        let mut hf = DMatrix::<f64>::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                hf[(a, b)] = h[(i, j)];
            }
            hf[(a, a)] += ridge;
        }
        if let Some(chol) = hf.cholesky() {
            let rhs = DVector::from_iterator(k, idx.iter().map(|&i| -g[i]));
            let sol = chol.solve(&rhs);
            for (a, &i) in idx.iter().enumerate() {
                out[i] = sol[a];
            }
            if out.iter().all(|x| x.is_finite()) {
                return out;
            }
        }
        ridge *= 100.0;
    }
    // Fall back to steepest descent.
    for &i in &idx {
        out[i] = -g[i] / scale;
    }
    out
}

/// Minimizes the reduced dual from `start`. Returns `(lambda, v)` flattened.
pub(crate) fn solve(
    problem: &DualProblem<'_>,
    start: &[f64],
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, SolveOutcome) {
    let blocks = Blocks::new(problem);
    let mut z = start.to_vec();
    z[0] = z[0].max(0.0);
    let mut cur = match reduced(problem, &blocks, &z, true) {
        Some(r) => r,
        None => {
            z.iter_mut().for_each(|x| *x = 0.0);
            reduced(problem, &blocks, &z, true).expect("finite at the origin")
        }
    };
    let divergence = -1e9 * (1.0 + problem.tau + problem.log_q.iter().map(|l| l.exp()).sum::<f64>());
    let mut iterations = 0;
    let mut residual = projected_residual(&z, &cur.grad);
    let mut window_start = residual;
    let mut stalled = false;
    while residual > tol && iterations < max_iters {
        iterations += 1;
        if iterations % STALL_WINDOW == 0 {
            if residual > 0.5 * window_start {
                stalled = true;
                break;
            }
            window_start = residual;
        }
        if cur.f < divergence {
            return (
                z,
                SolveOutcome {
                    iterations,
                    residual,
                    objective: cur.f,
                    diverged: true,
                    stalled: false,
                },
            );
        }
        let fix_lambda = z[0] <= 0.0 && cur.grad[0] > 0.0;
        let dir = newton_direction(cur.hess.as_ref().expect("hessian requested"), &cur.grad, fix_lambda);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = z.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            trial[0] = trial[0].max(0.0);
            if let Some(r) = reduced(problem, &blocks, &trial, false) {
                let decrease: f64 = cur
                    .grad
                    .iter()
                    .zip(trial.iter().zip(&z))
                    .map(|(g, (t, x))| g * (t - x))
                    .sum();
                let armijo = r.f <= cur.f + ARMIJO * decrease;
                // Near the optimum the objective stops resolving progress;
                // accept steps that shrink the residual instead.
                let flat = (r.f - cur.f).abs() <= 1e-13 * (1.0 + cur.f.abs())
                    && projected_residual(&trial, &r.grad) < residual;
                if armijo || flat {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            stalled = true;
            break;
        };
        z = next;
        cur = reduced(problem, &blocks, &z, true).expect("accepted point is finite");
        residual = projected_residual(&z, &cur.grad);
    }
    (
        z,
        SolveOutcome {
            iterations,
            residual,
            objective: cur.f,
            diverged: false,
            stalled,
        },
    )
}

/// Primal point and full multipliers at a reduced solution `z`.
pub(crate) fn recover(problem: &DualProblem<'_>, z: &[f64]) -> (Vec<f64>, DualVariables) {
    let n = problem.num_states;
    let m = problem.num_actions;
    let lambda = z[0];
    let v = &z[1..];
    let mut duals = problem.zero_duals();
    duals.lambda = lambda;
    duals.v = v.to_vec();
    match problem.geometry {
        Geometry::Known(_) => (problem.primal(&duals), duals),
        Geometry::Extended(_) => {
            let blocks = Blocks::new(problem);
            let w = n + 1;
            let mut q = vec![0.0; n * m * w];
            for s in 0..n {
                for a in 0..m {
                    let base = (s * m + a) * w;
                    let sol = block_solution(problem, &blocks, v, s, a);
                    let x = (-lambda + v[s] + sol.log_mass).exp();
                    for i in 0..w {
                        q[base + i] = x * sol.p[i];
                        let lw = problem.log_q[base + i] - if i < n { v[i] } else { 0.0 };
                        let (lo, hi) = (blocks.lo[base + i], blocks.hi[base + i]);
                        let (plus, minus) = if lo >= hi {
                            if hi <= 0.0 {
                                (MU_CAP, 0.0)
                            } else {
                                let r = sol.t + lw - hi.ln();
                                (r.max(0.0), (-r).max(0.0))
                            }
                        } else {
                            match sol.side[i] {
                                Side::Free => (0.0, 0.0),
                                Side::Upper => ((sol.t + lw - hi.ln()).max(0.0), 0.0),
                                Side::Lower => (0.0, (lo.ln() - sol.t - lw).max(0.0)),
                            }
                        };
                        duals.mu_plus[base + i] = plus;
                        duals.mu_minus[base + i] = minus;
                    }
                }
            }
            (q, duals)
        }
    }
}
