//! KL projection of a positive weight vector onto `{p : sum p = 1, lo <= p <= hi}`.
//!
//! The minimizer has the form `p_i = clip(exp(t + lw_i), lo_i, hi_i)` for a
//! scalar `t`; the map `t -> sum_i p_i` is continuous, nondecreasing and
//! piecewise smooth with breakpoints where an entry meets a bound, so `t` is
//! found exactly by locating the segment that crosses one.

/// Where an entry sits at the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub(crate) struct BoxSimplexSolution {
    pub p: Vec<f64>,
    pub t: f64,
    pub side: Vec<Side>,
    /// `-min_p sum p (ln p - lw)`, the log of the block's partition value.
    pub log_mass: f64,
}

fn clipped(t: f64, lw: f64, lo: f64, hi: f64) -> f64 {
    (t + lw).exp().clamp(lo, hi)
}

fn total(t: f64, lw: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..lw.len()).map(|i| clipped(t, lw[i], lo[i], hi[i])).sum()
}

/// Requires `0 <= lo <= hi <= 1` and `sum lo <= 1 <= sum hi`.
pub(crate) fn project(lw: &[f64], lo: &[f64], hi: &[f64]) -> BoxSimplexSolution {
    let k = lw.len();
    let mut breaks: Vec<f64> = Vec::with_capacity(2 * k);
    for i in 0..k {
        if lo[i] < hi[i] {
            if lo[i] > 0.0 {
                breaks.push(lo[i].ln() - lw[i]);
            }
            breaks.push(hi[i].ln() - lw[i]);
        }
    }
    breaks.retain(|b| b.is_finite());
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();

    // First breakpoint at which the total reaches one.
    let j = breaks.partition_point(|&b| total(b, lw, lo, hi) < 1.0);
    let left = if j == 0 { f64::NEG_INFINITY } else { breaks[j - 1] };
    let right = breaks.get(j).copied().unwrap_or(f64::INFINITY);

    let mut side = vec![Side::Free; k];
    let mut fixed_mass = 0.0;
    let mut free_lw: Vec<f64> = Vec::new();
    for i in 0..k {
        let at_lo = if lo[i] > 0.0 { lo[i].ln() - lw[i] } else { f64::NEG_INFINITY };
        let at_hi = hi[i].ln() - lw[i];
        if lo[i] >= hi[i] || right <= at_lo {
            side[i] = if lo[i] >= hi[i] && left >= at_hi {
                Side::Upper
            } else {
                Side::Lower
            };
            fixed_mass += lo[i];
        } else if left >= at_hi {
            side[i] = Side::Upper;
            fixed_mass += hi[i];
        } else {
            free_lw.push(lw[i]);
        }
    }

    let t = if free_lw.is_empty() {
        if right.is_finite() {
            right
        } else {
            left
        }
    } else {
        let rem = (1.0 - fixed_mass).max(f64::MIN_POSITIVE);
        let m = free_lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + free_lw.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        (rem.ln() - lse).clamp(left, right)
    };

    let p: Vec<f64> = (0..k)
        .map(|i| match side[i] {
            Side::Free => (t + lw[i]).exp(),
            Side::Lower => lo[i],
            Side::Upper => hi[i],
        })
        .collect();
    let log_mass = -p
        .iter()
        .zip(lw)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, l)| p * (p.ln() - l))
        .sum::<f64>();
    BoxSimplexSolution {
        p,
        t,
        side,
        log_mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kl(p: &[f64], lw: &[f64]) -> f64 {
        p.iter()
            .zip(lw)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, l)| p * (p.ln() - l))
            .sum()
    }

    #[test]
    fn unconstrained_box_gives_softmax() {
        let lw = [0.0, 1.0, 2.0];
        let sol = project(&lw, &[0.0; 3], &[1.0; 3]);
        let z: f64 = lw.iter().map(|l: &f64| l.exp()).sum();
        for i in 0..3 {
            assert!((sol.p[i] - lw[i].exp() / z).abs() < 1e-14);
        }
        assert!((sol.log_mass - z.ln()).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_binds() {
        let lw = [0.0, 3.0];
        let sol = project(&lw, &[0.0, 0.0], &[1.0, 0.6]);
        assert!((sol.p[1] - 0.6).abs() < 1e-15);
        assert!((sol.p[0] - 0.4).abs() < 1e-15);
        assert_eq!(sol.side[1], Side::Upper);
    }

    #[test]
    fn degenerate_box_is_fixed() {
        let sol = project(&[5.0, -3.0, 0.0], &[0.2, 0.8, 0.0], &[0.2, 0.8, 0.0]);
        assert_eq!(sol.p, vec![0.2, 0.8, 0.0]);
    }

    #[test]
    fn beats_grid_of_feasible_points() {
        // three entries: compare against a fine grid over the feasible simplex slice
        let lw = [0.3, -1.2, 0.9];
        let lo = [0.1, 0.25, 0.0];
        let hi = [0.5, 0.6, 0.4];
        let sol = project(&lw, &lo, &hi);
        assert!((sol.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = kl(&sol.p, &lw);
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = i as f64 / steps as f64;
                let b = j as f64 / steps as f64;
                let c = 1.0 - a - b;
                let p = [a, b, c];
                if (0..3).all(|k| p[k] >= lo[k] - 1e-12 && p[k] <= hi[k] + 1e-12) {
                    assert!(kl(&p, &lw) >= best - 1e-9, "{p:?}");
                }
            }
        }
    }
}
