use std::collections::VecDeque;

use proptest::prelude::*;
use rand::Rng;
use ssp_omd::envlab::{fixture_a1, fixture_a2, make_chain, make_gridworld, make_random_ssp, GRID_MOVES};
use ssp_omd::harness::{monte_carlo_eval, random_full_support_policy};
use ssp_omd::rng::experiment_rng;
use ssp_omd::ssp::{
    evaluate_policy, fast_policy_and_diameter, hitting_times, inner_product, occupancy_of_policy,
    policy_of_occupancy, validate_mdp, value_iteration, CostFunction, Mdp, OccupancyMeasure,
    SspError, StochasticPolicy, ViOptions, Violation,
};

fn chain3() -> Mdp {
    make_chain(3).unwrap().mdp
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn chain_is_valid() {
    assert!(validate_mdp(&chain3()).is_ok());
}

#[test]
fn short_row_is_not_stochastic() {
    let mdp = Mdp::new(1, 1, 0, vec![0.0, 0.9]).unwrap();
    let report = validate_mdp(&mdp).unwrap_err();
    assert!(matches!(report.violations[0], Violation::RowNotStochastic { state: 0, action: 0, .. }));
}

#[test]
fn absorbing_state_is_reported() {
    // state 1 loops on itself under both actions
    let mdp = Mdp::from_nested(
        2,
        2,
        0,
        &[
            vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 1.0]],
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
        ],
    )
    .unwrap();
    let report = validate_mdp(&mdp).unwrap_err();
    assert_eq!(report.violations, vec![Violation::GoalUnreachableFrom(1)]);
}

#[test]
fn instance_file_round_trip() {
    let mdp = make_random_ssp(4, 3, 9, 0.1).unwrap().mdp;
    let text = serde_json::to_string(&mdp).unwrap();
    let file: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(file["transitions"].as_array().unwrap().len(), 4);
    assert_eq!(file["transitions"][0][0].as_array().unwrap().len(), 5);
    let back: Mdp = serde_json::from_str(&text).unwrap();
    assert_eq!(back, mdp);
}

#[test]
fn malformed_shape_is_rejected() {
    let bad = r#"{"num_states": 2, "num_actions": 1, "initial_state": 0, "transitions": [[[0, 1]], [[0, 0, 1]]]}"#;
    assert!(serde_json::from_str::<Mdp>(bad).is_err());
}

#[test]
fn combination_lock_uniform_cost() {
    for (n, m, want) in [(2, 2, 6.0), (3, 2, 14.0), (2, 3, 12.0)] {
        let env = fixture_a1(n, m, 0).unwrap();
        let unit = CostFunction::constant(n, m, 1.0).unwrap();
        let j = evaluate_policy(&env.mdp, &StochasticPolicy::uniform(n, m), &unit).unwrap();
        assert!((j.get(0).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn chain_values_and_times() {
    let mdp = chain3();
    let unit = CostFunction::constant(3, 1, 1.0).unwrap();
    let pi = StochasticPolicy::uniform(3, 1);
    let j = evaluate_policy(&mdp, &pi, &unit).unwrap();
    let t = hitting_times(&mdp, &pi).unwrap();
    for (s, want) in [3.0, 2.0, 1.0].into_iter().enumerate() {
        assert_eq!(j.get(s), Some(want));
        assert_eq!(t.get(s), Some(want));
    }
}

#[test]
fn evaluation_matches_monte_carlo() {
    let mdp = make_random_ssp(5, 2, 21, 0.05).unwrap().mdp;
    let mut rng = experiment_rng(21);
    let pi = random_full_support_policy(5, 2, &mut rng);
    let cost = CostFunction::new(5, 2, (0..10).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
    let j = evaluate_policy(&mdp, &pi, &cost).unwrap().get(0).unwrap();
    let mc = monte_carlo_eval(&mdp, &pi, &cost, 100_000, 3, 1_000_000).unwrap();
    assert!((mc.mean - j).abs() <= 3.0 * mc.stderr.unwrap(), "{} vs {j}", mc.mean);
}

#[test]
fn improper_states_are_infinite() {
    // action 1 of state 0 loops forever
    let mdp = Mdp::from_nested(1, 2, 0, &[vec![vec![0.0, 1.0], vec![1.0, 0.0]]]).unwrap();
    let looping = StochasticPolicy::deterministic(2, &[1]).unwrap();
    let t = hitting_times(&mdp, &looping).unwrap();
    assert_eq!(t.get(0), None);
    assert!(matches!(t.require(0), Err(SspError::ImproperAt(0))));
    assert!(occupancy_of_policy(&mdp, &looping).is_err());
}

#[test]
fn two_action_fixture_times() {
    let env = fixture_a2(10.0, 0.1).unwrap();
    let t1 = hitting_times(&env.mdp, &StochasticPolicy::deterministic(2, &[0]).unwrap()).unwrap();
    let t2 = hitting_times(&env.mdp, &StochasticPolicy::deterministic(2, &[1]).unwrap()).unwrap();
    assert!((t1.get(0).unwrap() - 10.0).abs() < 1e-9);
    assert!((t2.get(0).unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn value_iteration_on_chain() {
    let plan = value_iteration(&chain3(), &CostFunction::constant(3, 1, 1.0).unwrap(), ViOptions::default()).unwrap();
    assert!(close(&plan.values, &[3.0, 2.0, 1.0], 1e-9));
    assert!(plan.policy.is_deterministic());
}

#[test]
fn value_iteration_picks_cheap_slow_action() {
    let env = fixture_a2(10.0, 0.1).unwrap();
    let cost = CostFunction::new(1, 2, vec![1.0, 0.1]).unwrap();
    let plan = value_iteration(&env.mdp, &cost, ViOptions::default()).unwrap();
    assert_eq!(plan.policy.mode(0), 1);
    assert!((plan.values[0] - 5.0).abs() < 1e-8);
    let costly = CostFunction::new(1, 2, vec![1.0, 0.3]).unwrap();
    let plan = value_iteration(&env.mdp, &costly, ViOptions::default()).unwrap();
    assert_eq!(plan.policy.mode(0), 0);
    assert!((plan.values[0] - 10.0).abs() < 1e-8);
}

#[test]
fn value_iteration_is_self_consistent_on_gridworld() {
    let mdp = make_gridworld(4, 4, 0.1).unwrap().mdp;
    let mut rng = experiment_rng(8);
    let cost = CostFunction::new(15, 4, (0..60).map(|_| rng.random_range(0.05..=1.0)).collect()).unwrap();
    let opts = ViOptions::default();
    let plan = value_iteration(&mdp, &cost, opts).unwrap();
    let j = evaluate_policy(&mdp, &plan.policy, &cost).unwrap();
    for s in 0..15 {
        assert!((j.get(s).unwrap() - plan.values[s]).abs() <= 1e-8);
    }
    // no random proper policy does better
    for _ in 0..100 {
        let pi = random_full_support_policy(15, 4, &mut rng);
        let v = evaluate_policy(&mdp, &pi, &cost).unwrap().get(0).unwrap();
        assert!(plan.values[0] <= v + 1e-9);
    }
}

#[test]
fn zero_cost_planning_is_rejected() {
    let cost = CostFunction::zeros(3, 1);
    assert!(matches!(
        value_iteration(&chain3(), &cost, ViOptions::default()),
        Err(SspError::NonPositiveCost(_))
    ));
}

#[test]
fn fast_policy_of_two_action_fixture() {
    let env = fixture_a2(10.0, 0.1).unwrap();
    let fast = fast_policy_and_diameter(&env.mdp, ViOptions::default()).unwrap();
    assert!((fast.diameter - 10.0).abs() < 1e-8);
    assert_eq!(fast.policy.mode(0), 0);
    let chain = fast_policy_and_diameter(&chain3(), ViOptions::default()).unwrap();
    assert!((chain.diameter - 3.0).abs() < 1e-12);
}

/// Breadth-first distance to the goal cell of a deterministic grid.
fn bfs_diameter(w: usize, h: usize) -> f64 {
    let goal = w * h - 1;
    let mut dist = vec![usize::MAX; w * h];
    dist[goal] = 0;
    let mut queue = VecDeque::from([goal]);
    while let Some(c) = queue.pop_front() {
        let (r, col) = ((c / w) as isize, (c % w) as isize);
        for (dr, dc) in GRID_MOVES {
            let (nr, nc) = (r + dr, col + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let n = nr as usize * w + nc as usize;
            if dist[n] == usize::MAX {
                dist[n] = dist[c] + 1;
                queue.push_back(n);
            }
        }
    }
    dist.into_iter().max().unwrap() as f64
}

#[test]
fn deterministic_grid_diameter_matches_bfs() {
    for (w, h) in [(4, 4), (3, 5), (2, 2), (6, 1)] {
        let mdp = make_gridworld(w, h, 0.0).unwrap().mdp;
        let fast = fast_policy_and_diameter(&mdp, ViOptions::default()).unwrap();
        assert!((fast.diameter - bfs_diameter(w, h)).abs() < 1e-9, "{w}x{h}");
    }
}

#[test]
fn occupancy_examples() {
    let q = occupancy_of_policy(&chain3(), &StochasticPolicy::uniform(3, 1)).unwrap();
    assert!(close(q.values(), &[1.0, 1.0, 1.0], 1e-12));
    let coin = Mdp::new(1, 1, 0, vec![0.5, 0.5]).unwrap();
    let q = occupancy_of_policy(&coin, &StochasticPolicy::uniform(1, 1)).unwrap();
    assert!((q.get(0, 0) - 2.0).abs() < 1e-12);
}

#[test]
fn policy_of_occupancy_examples() {
    let q = OccupancyMeasure::new(2, 2, vec![0.3, 0.1, 0.0, 0.0]).unwrap();
    let pi = policy_of_occupancy(&q);
    assert!(close(pi.row(0), &[0.75, 0.25], 1e-12));
    assert_eq!(pi.row(1), &[0.5, 0.5]);
}

#[test]
fn inner_product_examples() {
    let q = OccupancyMeasure::filled(2, 2, 1.0);
    assert_eq!(inner_product(&q, &CostFunction::constant(2, 2, 1.0).unwrap()).unwrap(), 4.0);
    assert_eq!(inner_product(&q, &CostFunction::zeros(2, 2)).unwrap(), 0.0);
    assert!(inner_product(&q, &CostFunction::zeros(2, 3)).is_err());
}

#[test]
fn five_state_occupancy_cross_checks() {
    let mdp = make_random_ssp(5, 3, 4, 0.05).unwrap().mdp;
    let mut rng = experiment_rng(4);
    let pi = random_full_support_policy(5, 3, &mut rng);
    let q = occupancy_of_policy(&mdp, &pi).unwrap();
    let t = hitting_times(&mdp, &pi).unwrap().get(0).unwrap();
    assert!((q.total() - t).abs() <= 1e-8);
    let cost = CostFunction::new(5, 3, (0..15).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
    let j = evaluate_policy(&mdp, &pi, &cost).unwrap().get(0).unwrap();
    assert!((inner_product(&q, &cost).unwrap() - j).abs() <= 1e-8);
}

#[test]
fn sampling_follows_the_kernel() {
    let coin = Mdp::new(1, 1, 0, vec![0.25, 0.75]).unwrap();
    let mut rng = experiment_rng(0);
    let goal = (0..40_000).filter(|_| coin.sample_next(0, 0, &mut rng) == 1).count();
    assert!((goal as f64 / 40_000.0 - 0.75).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_policies_satisfy_occupancy_identities(seed in 0u64..10_000, n in 1usize..7, m in 1usize..4) {
        let mdp = make_random_ssp(n, m, seed, 0.05).unwrap().mdp;
        let mut rng = experiment_rng(seed);
        let pi = random_full_support_policy(n, m, &mut rng);
        let cost = CostFunction::new(n, m, (0..n * m).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
        let q = occupancy_of_policy(&mdp, &pi).unwrap();
        prop_assert!(q.flow_residual(&mdp) <= 1e-8);
        let j = evaluate_policy(&mdp, &pi, &cost).unwrap().get(0).unwrap();
        prop_assert!((inner_product(&q, &cost).unwrap() - j).abs() <= 1e-6);
        let unit = CostFunction::constant(n, m, 1.0).unwrap();
        prop_assert_eq!(hitting_times(&mdp, &pi).unwrap(), evaluate_policy(&mdp, &pi, &unit).unwrap());
        let back = occupancy_of_policy(&mdp, &policy_of_occupancy(&q)).unwrap();
        prop_assert!(close(back.values(), q.values(), 1e-6));
    }

    #[test]
    fn value_iteration_dominates_random_policies(seed in 0u64..10_000) {
        let mdp = make_random_ssp(4, 3, seed, 0.05).unwrap().mdp;
        let mut rng = experiment_rng(seed);
        let cost = CostFunction::new(4, 3, (0..12).map(|_| rng.random_range(0.05..=1.0)).collect()).unwrap();
        let plan = value_iteration(&mdp, &cost, ViOptions::default()).unwrap();
        prop_assert!(plan.policy.is_deterministic());
        for _ in 0..20 {
            let pi = random_full_support_policy(4, 3, &mut rng);
            let v = evaluate_policy(&mdp, &pi, &cost).unwrap();
            for s in 0..4 {
                prop_assert!(plan.values[s] <= v.get(s).unwrap() + 1e-9);
            }
        }
    }
}
