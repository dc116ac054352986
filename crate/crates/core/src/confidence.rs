//! Visit counting with doubling epochs, Bernstein confidence sets over
//! transition kernels, known-state bookkeeping, and the optimistic fast policy.

use serde::{Deserialize, Serialize};

use crate::ssp::{
    fast_policy_and_diameter, hitting_times, Mdp, SspError, StateValues, StochasticPolicy,
    ViOptions,
};

/// Transition counts split into "before the current epoch" (`N`) and "during
/// the current epoch" (`n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitCounts {
    num_states: usize,
    num_actions: usize,
    initial_state: usize,
    before: Vec<u64>,
    before_next: Vec<u64>,
    during: Vec<u64>,
    during_next: Vec<u64>,
    epoch: u64,
}

impl VisitCounts {
    pub fn new(num_states: usize, num_actions: usize, initial_state: usize) -> Self {
        let sa = num_states * num_actions;
        let sas = sa * (num_states + 1);
        Self {
            num_states,
            num_actions,
            initial_state,
            before: vec![0; sa],
            before_next: vec![0; sas],
            during: vec![0; sa],
            during_next: vec![0; sas],
            epoch: 0,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn sa(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    fn sas(&self, s: usize, a: usize, next: usize) -> usize {
        self.sa(s, a) * (self.num_states + 1) + next
    }

    /// Visits to `(s, a)` before the current epoch.
    pub fn epoch_start(&self, s: usize, a: usize) -> u64 {
        self.before[self.sa(s, a)]
    }

    pub fn epoch_start_next(&self, s: usize, a: usize, next: usize) -> u64 {
        self.before_next[self.sas(s, a, next)]
    }

    /// Visits to `(s, a)` within the current epoch.
    pub fn in_epoch(&self, s: usize, a: usize) -> u64 {
        self.during[self.sa(s, a)]
    }

    pub fn lifetime(&self, s: usize, a: usize) -> u64 {
        self.epoch_start(s, a) + self.in_epoch(s, a)
    }

    /// Counts one transition. Returns `true` when the in-epoch count of
    /// `(s, a)` has caught up with its pre-epoch count, i.e. the pair's visits
    /// doubled and the epoch must end.
    pub fn record_transition(&mut self, s: usize, a: usize, next: usize) -> bool {
        let i = self.sa(s, a);
        let j = self.sas(s, a, next);
        self.during[i] += 1;
        self.during_next[j] += 1;
        self.during[i] >= self.before[i]
    }

    /// Folds the in-epoch counts into the pre-epoch counts.
    pub fn start_epoch(&mut self) {
        for (b, d) in self.before.iter_mut().zip(self.during.iter_mut()) {
            *b += std::mem::take(d);
        }
        for (b, d) in self.before_next.iter_mut().zip(self.during_next.iter_mut()) {
            *b += std::mem::take(d);
        }
        self.epoch += 1;
    }
}

/// Empirical kernel with per-entry Bernstein radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    num_states: usize,
    num_actions: usize,
    initial_state: usize,
    p_bar: Vec<f64>,
    radius: Vec<f64>,
    /// `A(s, a) = log(|S||A| N+ / delta) / N+`.
    bonus: Vec<f64>,
    delta: f64,
    epoch: u64,
}

/// `log(|S||A| n_plus / delta) / n_plus`.
pub fn bonus_term(num_states: usize, num_actions: usize, n_plus: u64, delta: f64) -> f64 {
    let n_plus = n_plus as f64;
    ((num_states * num_actions) as f64 * n_plus / delta).ln() / n_plus
}

/// `4 sqrt(p_bar A) + 28 A`.
pub fn bernstein_radius(p_bar: f64, bonus: f64) -> f64 {
    4.0 * (p_bar * bonus).sqrt() + 28.0 * bonus
}

impl ConfidenceSet {
    /// Assembles a set from explicit parts. `p_bar` and `radius` are indexed
    /// `[s][a][s']` (goal last); `bonus` is indexed `[s][a]`.
    pub fn from_parts(
        num_states: usize,
        num_actions: usize,
        initial_state: usize,
        p_bar: Vec<f64>,
        radius: Vec<f64>,
        bonus: Vec<f64>,
        delta: f64,
    ) -> Result<Self, SspError> {
        let sa = num_states * num_actions;
        let sas = sa * (num_states + 1);
        if p_bar.len() != sas || radius.len() != sas || bonus.len() != sa {
            return Err(SspError::ShapeMismatch {
                expected: sas,
                found: p_bar.len(),
            });
        }
        if initial_state >= num_states {
            return Err(SspError::StateOutOfRange(initial_state));
        }
        Ok(Self {
            num_states,
            num_actions,
            initial_state,
            p_bar,
            radius,
            bonus,
            delta,
            epoch: 0,
        })
    }

    /// The degenerate set `{P}`.
    pub fn singleton(mdp: &Mdp) -> Self {
        let sa = mdp.num_states() * mdp.num_actions();
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            initial_state: mdp.initial_state(),
            p_bar: mdp.kernel().to_vec(),
            radius: vec![0.0; mdp.kernel().len()],
            bonus: vec![0.0; sa],
            delta: 1.0,
            epoch: 0,
        }
    }

    /// Same centre, every radius replaced by `radius`.
    pub fn with_uniform_radius(mut self, radius: f64) -> Self {
        self.radius.iter_mut().for_each(|r| *r = radius);
        self
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn sas(&self, s: usize, a: usize) -> std::ops::Range<usize> {
        let w = self.num_states + 1;
        let start = (s * self.num_actions + a) * w;
        start..start + w
    }

    pub fn p_bar_row(&self, s: usize, a: usize) -> &[f64] {
        &self.p_bar[self.sas(s, a)]
    }

    pub fn radius_row(&self, s: usize, a: usize) -> &[f64] {
        &self.radius[self.sas(s, a)]
    }

    pub fn bonus(&self, s: usize, a: usize) -> f64 {
        self.bonus[s * self.num_actions + a]
    }

    /// Lower and upper bounds of `P(. | s, a)`, intersected with `[0, 1]`.
    pub fn bounds(&self, s: usize, a: usize) -> (Vec<f64>, Vec<f64>) {
        let p = self.p_bar_row(s, a);
        let r = self.radius_row(s, a);
        let lo = p.iter().zip(r).map(|(p, r)| (p - r).max(0.0)).collect();
        let hi = p.iter().zip(r).map(|(p, r)| (p + r).min(1.0)).collect();
        (lo, hi)
    }

    /// Whether `mdp`'s kernel satisfies `|P - P_bar| <= radius` everywhere.
    pub fn contains(&self, mdp: &Mdp) -> bool {
        self.max_violation(mdp) <= 0.0
    }

    /// Largest amount by which `mdp` leaves the set (nonpositive when inside).
    pub fn max_violation(&self, mdp: &Mdp) -> f64 {
        mdp.kernel()
            .iter()
            .zip(&self.p_bar)
            .zip(&self.radius)
            .map(|((p, c), r)| (p - c).abs() - r)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Kernel that moves every unit of slack toward the goal:
    /// `P~(s'|s,a) = max(0, P_bar - 28 A - 4 sqrt(P_bar A))` on states, the
    /// remainder on the goal.
    pub fn optimistic_kernel(&self) -> Mdp {
        let n = self.num_states;
        let mut kernel = Vec::with_capacity(self.p_bar.len());
        for s in 0..n {
            for a in 0..self.num_actions {
                let bonus = self.bonus(s, a);
                let row: Vec<f64> = self.p_bar_row(s, a)[..n]
                    .iter()
                    .map(|&p| (p - 28.0 * bonus - 4.0 * (p * bonus).sqrt()).max(0.0))
                    .collect();
                let to_goal = (1.0 - row.iter().sum::<f64>()).max(0.0);
                kernel.extend(row);
                kernel.push(to_goal);
            }
        }
        Mdp::new(n, self.num_actions, self.initial_state, kernel).expect("shape preserved")
    }
}

/// Confidence set of the current epoch, built from the pre-epoch counts.
/// Pairs never visited put all empirical mass on the goal.
pub fn build_confidence_set(counts: &VisitCounts, delta: f64) -> ConfidenceSet {
    let n = counts.num_states();
    let m = counts.num_actions();
    let w = n + 1;
    let mut p_bar = vec![0.0; n * m * w];
    let mut radius = vec![0.0; n * m * w];
    let mut bonus = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            let visits = counts.epoch_start(s, a);
            let n_plus = visits.max(1);
            let b = bonus_term(n, m, n_plus, delta);
            bonus[s * m + a] = b;
            for next in 0..w {
                let i = (s * m + a) * w + next;
                p_bar[i] = if visits == 0 {
                    if next == n {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    counts.epoch_start_next(s, a, next) as f64 / n_plus as f64
                };
                radius[i] = bernstein_radius(p_bar[i], b);
            }
        }
    }
    ConfidenceSet {
        num_states: n,
        num_actions: m,
        initial_state: counts.initial_state,
        p_bar,
        radius,
        bonus,
        delta,
        epoch: counts.epoch(),
    }
}

/// Fast policy under the optimistic kernel of a confidence set.
#[derive(Debug, Clone)]
pub struct OptimisticFast {
    pub policy: StochasticPolicy,
    pub kernel: Mdp,
    pub times: StateValues,
}

pub fn optimistic_fast(conf: &ConfidenceSet, opts: ViOptions) -> Result<OptimisticFast, SspError> {
    let kernel = conf.optimistic_kernel();
    let fast = fast_policy_and_diameter(&kernel, opts)?;
    let times = hitting_times(&kernel, &fast.policy)?;
    Ok(OptimisticFast {
        policy: fast.policy,
        kernel,
        times,
    })
}

/// Known-state threshold `alpha (D |S| / c_min^2) log(D |S| |A| / (delta c_min))`,
/// rounded up.
pub fn known_state_threshold(
    alpha: f64,
    diameter: f64,
    num_states: usize,
    num_actions: usize,
    c_min: f64,
    delta: f64,
) -> u64 {
    let s = num_states as f64;
    let a = num_actions as f64;
    let phi = alpha * (diameter * s / (c_min * c_min)) * (diameter * s * a / (delta * c_min)).ln();
    phi.max(1.0).ceil() as u64
}

/// Lifetime per-(state, action) play counts against a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownStateTracker {
    threshold: u64,
    num_actions: usize,
    counts: Vec<u64>,
}

impl KnownStateTracker {
    pub fn new(num_states: usize, num_actions: usize, threshold: u64) -> Self {
        Self {
            threshold,
            num_actions,
            counts: vec![0; num_states * num_actions],
        }
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn record(&mut self, s: usize, a: usize) {
        self.counts[s * self.num_actions + a] += 1;
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.num_actions + a]
    }

    fn row(&self, s: usize) -> &[u64] {
        &self.counts[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Every action of `s` played at least `threshold` times.
    pub fn is_known(&self, s: usize) -> bool {
        self.row(s).iter().all(|&c| c >= self.threshold)
    }

    /// Least played action in `s`, lowest index on ties.
    pub fn least_played_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &c) in row.iter().enumerate() {
            if c < row[best] {
                best = a;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_visit_triggers_doubling() {
        let mut c = VisitCounts::new(2, 2, 0);
        assert!(c.record_transition(0, 0, 1));
    }

    #[test]
    fn doubling_from_four() {
        let mut c = VisitCounts::new(1, 1, 0);
        for _ in 0..4 {
            c.record_transition(0, 0, 0);
        }
        c.start_epoch();
        assert_eq!(c.epoch_start(0, 0), 4);
        assert!(!c.record_transition(0, 0, 1));
        assert!(!c.record_transition(0, 0, 1));
        assert!(!c.record_transition(0, 0, 1));
        assert!(c.record_transition(0, 0, 1));
    }

    #[test]
    fn spread_visits_do_not_double_early() {
        let mut c = VisitCounts::new(4, 2, 0);
        for s in 0..4 {
            for a in 0..2 {
                for _ in 0..8 {
                    c.record_transition(s, a, 4);
                }
            }
        }
        c.start_epoch();
        for round in 0..8 {
            for s in 0..4 {
                for a in 0..2 {
                    let flag = c.record_transition(s, a, 4);
                    assert_eq!(flag, round == 7, "round {round} pair ({s},{a})");
                }
            }
        }
    }

    #[test]
    fn counts_are_consistent_across_epochs() {
        let mut c = VisitCounts::new(2, 1, 0);
        c.record_transition(0, 0, 1);
        c.record_transition(0, 0, 2);
        c.start_epoch();
        c.record_transition(0, 0, 2);
        assert_eq!(c.lifetime(0, 0), 3);
        assert_eq!(
            c.epoch_start_next(0, 0, 1) + c.epoch_start_next(0, 0, 2),
            c.epoch_start(0, 0)
        );
    }

    #[test]
    fn radius_formula_matches_hand_evaluation() {
        // |S||A| = 4, N+ = 100, delta = 0.1: A = ln(4000) / 100.
        let bonus = bonus_term(2, 2, 100, 0.1);
        assert!((bonus - 0.082_940_496_401_0).abs() < 1e-12);
        let r = bernstein_radius(0.5, bonus);
        assert!((r - 3.136_903_706_7).abs() < 1e-9, "{r}");
        assert!((r - 3.136_89).abs() < 1e-4);
    }

    #[test]
    fn unvisited_pairs_use_one_pseudo_count() {
        let c = VisitCounts::new(3, 2, 0);
        let conf = build_confidence_set(&c, 0.1);
        assert!((conf.bonus(0, 0) - bonus_term(3, 2, 1, 0.1)).abs() < 1e-15);
        assert_eq!(conf.p_bar_row(1, 1), &[0.0, 0.0, 0.0, 1.0]);
        // zero empirical probability leaves only the linear term
        assert!((conf.radius_row(0, 0)[0] - 28.0 * conf.bonus(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn optimistic_entry_matches_hand_evaluation() {
        // P_bar = 0.9 toward state 0, A = 0.01.
        let conf = ConfidenceSet::from_parts(
            1,
            1,
            0,
            vec![0.9, 0.1],
            vec![0.0, 0.0],
            vec![0.01],
            0.1,
        )
        .unwrap();
        let k = conf.optimistic_kernel();
        let expected = 0.9 - 0.28 - 4.0 * 0.009_f64.sqrt();
        assert!((k.prob(0, 0, 0) - expected).abs() < 1e-12);
        assert!((k.prob(0, 0, 0) - 0.240_53).abs() < 1e-5);
        assert!((k.prob(0, 0, 1) - (1.0 - expected)).abs() < 1e-12);
    }

    #[test]
    fn full_clipping_sends_everything_to_goal() {
        let conf = ConfidenceSet::from_parts(
            2,
            1,
            0,
            vec![0.0, 1.0, 0.0, 0.0, 0.5, 0.5],
            vec![0.0; 6],
            vec![1.0, 1.0],
            0.1,
        )
        .unwrap();
        let opt = optimistic_fast(&conf, ViOptions::default()).unwrap();
        assert_eq!(opt.kernel.prob(0, 0, 2), 1.0);
        assert_eq!(opt.times.get(0), Some(1.0));
        assert_eq!(opt.times.get(1), Some(1.0));
    }

    #[test]
    fn tracker_known_and_least_played() {
        let mut t = KnownStateTracker::new(1, 2, 3);
        for _ in 0..3 {
            t.record(0, 0);
        }
        for _ in 0..2 {
            t.record(0, 1);
        }
        assert!(!t.is_known(0));
        assert_eq!(t.least_played_action(0), 1);
        t.record(0, 1);
        assert!(t.is_known(0));

        let mut tie = KnownStateTracker::new(1, 2, 3);
        tie.record(0, 0);
        tie.record(0, 1);
        tie.record(0, 0);
        tie.record(0, 1);
        assert_eq!(tie.least_played_action(0), 0);
    }

    #[test]
    fn radius_shrinks_with_more_data() {
        let mut last = f64::INFINITY;
        for n in [1u64, 2, 5, 10, 100, 1000, 10_000] {
            let r = bernstein_radius(0.3, bonus_term(5, 2, n, 0.1));
            assert!(r <= last);
            last = r;
        }
    }
}
