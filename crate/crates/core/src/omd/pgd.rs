//! Projected gradient descent on the full dual, with Barzilai-Borwein step
//! sizes and Armijo backtracking. Slow but simple; kept as a cross-check.

use super::dual::{projected_gradient_norm, DualProblem, DualVariables};
use super::SolveOutcome;

const ARMIJO: f64 = 1e-4;

fn project(z: &mut [f64], num_states: usize) {
    z[0] = z[0].max(0.0);
    for x in &mut z[1 + num_states..] {
        *x = x.max(0.0);
    }
}

pub(crate) fn solve(
    problem: &DualProblem<'_>,
    start: &DualVariables,
    tol: f64,
    max_iters: usize,
) -> (DualVariables, SolveOutcome) {
    let n = problem.num_states;
    let eval = |z: &[f64]| {
        let d = DualVariables::from_flat(z, n);
        let (f, g) = problem.objective_and_gradient(&d);
        let r = projected_gradient_norm(&d, &g);
        (f, g.to_flat(), r)
    };
    let mut z = start.to_flat();
    project(&mut z, n);
    let (mut f, mut g, mut residual) = eval(&z);
    if !f.is_finite() {
        z = problem.zero_duals().to_flat();
        (f, g, residual) = eval(&z);
    }
    let divergence = -1e9 * (1.0 + problem.tau + problem.log_q.iter().map(|l| l.exp()).sum::<f64>());
    let mut alpha = 1.0 / (1.0 + g.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    let mut iterations = 0;
    while residual > tol && iterations < max_iters {
        iterations += 1;
        if f < divergence {
            return (
                DualVariables::from_flat(&z, n),
                SolveOutcome {
                    iterations,
                    residual,
                    objective: f,
                    diverged: true,
                    stalled: false,
                },
            );
        }
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = z.iter().zip(&g).map(|(x, gx)| x - step * gx).collect();
            project(&mut trial, n);
            let (tf, tg, tr) = eval(&trial);
            if tf.is_finite() {
                let decrease: f64 = g.iter().zip(trial.iter().zip(&z)).map(|(gx, (t, x))| gx * (t - x)).sum();
                let flat = (tf - f).abs() <= 1e-13 * (1.0 + f.abs()) && tr < residual;
                if tf <= f + ARMIJO * decrease || flat {
                    accepted = Some((trial, tf, tg, tr));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, tf, tg, tr)) = accepted else { break };
        let sy: f64 = trial
            .iter()
            .zip(&z)
            .zip(tg.iter().zip(&g))
            .map(|((a, b), (c, d))| (a - b) * (c - d))
            .sum();
        let ss: f64 = trial.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (step * 2.0).min(1e12) };
        z = trial;
        f = tf;
        g = tg;
        residual = tr;
    }
    (
        DualVariables::from_flat(&z, n),
        SolveOutcome {
            iterations,
            residual,
            objective: f,
            diverged: false,
            stalled: false,
        },
    )
}
