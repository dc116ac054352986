use ssp_omd::agents::{AgentConfig, AgentKind};
use ssp_omd::envlab::{fixture_a2, make_chain, make_gridworld, make_random_ssp, CostScheduler, ScheduleKind};
use ssp_omd::harness::{
    best_in_hindsight, execute_run, monte_carlo_eval, random_full_support_policy, replay_run, run_experiment,
    run_sweep, total_cost_via_occupancy, write_episode_csv, CellStatus, HarnessError, RunConfig, RunOptions,
    SweepGrid, EPISODE_CSV_HEADER,
};
use ssp_omd::rng::experiment_rng;
use ssp_omd::ssp::{evaluate_policy, value_iteration, CostFunction, StochasticPolicy, ViOptions};

fn random_costs(n: usize, m: usize, k: usize, seed: u64) -> Vec<CostFunction> {
    use rand::Rng;
    let mut rng = experiment_rng(seed);
    (0..k)
        .map(|_| CostFunction::new(n, m, (0..n * m).map(|_| rng.random_range(0.1..=1.0)).collect()).unwrap())
        .collect()
}

#[test]
fn single_policy_instance_has_no_regret() {
    let env = make_chain(3).unwrap();
    for kind in [AgentKind::Oreps, AgentKind::Oreps2, AgentKind::Oreps3] {
        let cfg = AgentConfig {
            agent: kind,
            ..Default::default()
        };
        let out = run_experiment(&env, &cfg, 8, 2, RunOptions::default()).unwrap();
        for e in &out.log.episodes {
            assert_eq!(e.length, 3);
            assert_eq!(e.realized_cost, 3.0);
            assert!((e.jstar_k - 3.0).abs() < 1e-12);
        }
        assert!(out.report.regret.abs() < 1e-9);
    }
}

#[test]
fn zero_episodes_rejected() {
    let env = make_chain(2).unwrap();
    assert!(matches!(
        run_experiment(&env, &AgentConfig::default(), 0, 0, RunOptions::default()),
        Err(HarnessError::ZeroEpisodes)
    ));
}

#[test]
fn identical_seeds_give_identical_logs() {
    let env = make_gridworld(3, 3, 0.2).unwrap();
    let sched = CostScheduler::new(8, 4, Some(0.1), ScheduleKind::SeededRandom { seed: 3 }).unwrap();
    let env = env.with_scheduler(sched).unwrap();
    let opts = RunOptions {
        record_steps: true,
        ..Default::default()
    };
    for kind in [AgentKind::Oreps2, AgentKind::Oreps3] {
        let cfg = AgentConfig {
            agent: kind,
            c_min: 0.1,
            known_threshold: Some(3),
            ..Default::default()
        };
        let a = run_experiment(&env, &cfg, 30, 9, opts).unwrap();
        let b = run_experiment(&env, &cfg, 30, 9, opts).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.report, b.report);
        let dir = tempfile::tempdir().unwrap();
        write_episode_csv(&dir.path().join("a.csv"), &a.log.episodes).unwrap();
        write_episode_csv(&dir.path().join("b.csv"), &b.log.episodes).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a.csv")).unwrap(),
            std::fs::read(dir.path().join("b.csv")).unwrap()
        );
        let c = run_experiment(&env, &cfg, 30, 10, opts).unwrap();
        assert_ne!(a.log.steps, c.log.steps);
    }
}

#[test]
fn hindsight_on_the_two_action_fixture() {
    let env = fixture_a2(10.0, 0.1).unwrap();
    let costs = vec![env.scheduler.next(1).unwrap(); 20];
    let h = best_in_hindsight(&env.mdp, &costs, ViOptions::default()).unwrap();
    assert_eq!(h.policy.mode(0), 1);
    for j in &h.per_episode {
        assert!((j - 5.0).abs() < 1e-9);
    }
    assert!((h.total - 100.0).abs() < 1e-7);
}

#[test]
fn constant_costs_reduce_to_value_iteration() {
    let mdp = make_random_ssp(6, 3, 2, 0.05).unwrap().mdp;
    let c = random_costs(6, 3, 1, 2).remove(0);
    let h = best_in_hindsight(&mdp, &vec![c.clone(); 4], ViOptions::default()).unwrap();
    let plan = value_iteration(&mdp, &c, ViOptions::default()).unwrap();
    assert_eq!(h.policy, plan.policy);
}

#[test]
fn hindsight_beats_random_policies() {
    let mdp = make_random_ssp(5, 3, 14, 0.05).unwrap().mdp;
    let costs = random_costs(5, 3, 3, 14);
    let h = best_in_hindsight(&mdp, &costs, ViOptions::default()).unwrap();
    let mut rng = experiment_rng(99);
    for _ in 0..200 {
        let pi = random_full_support_policy(5, 3, &mut rng);
        let total: f64 = costs
            .iter()
            .map(|c| evaluate_policy(&mdp, &pi, c).unwrap().get(0).unwrap())
            .sum();
        assert!(h.total <= total + 1e-9);
    }
    // deterministic policies too
    for code in 0..243usize {
        let actions: Vec<usize> = (0..5).map(|i| (code / 3usize.pow(i as u32)) % 3).collect();
        let pi = StochasticPolicy::deterministic(3, &actions).unwrap();
        let values: Vec<Option<f64>> = costs.iter().map(|c| evaluate_policy(&mdp, &pi, c).unwrap().get(0)).collect();
        if values.iter().all(Option::is_some) {
            assert!(h.total <= values.iter().map(|v| v.unwrap()).sum::<f64>() + 1e-9);
        }
    }
}

#[test]
fn hindsight_linearity() {
    let mdp = make_random_ssp(7, 2, 3, 0.05).unwrap().mdp;
    let costs = random_costs(7, 2, 25, 3);
    let h = best_in_hindsight(&mdp, &costs, ViOptions::default()).unwrap();
    let via_q = total_cost_via_occupancy(&mdp, &h.policy, &costs).unwrap();
    assert!((via_q - h.total).abs() <= 1e-6);
}

#[test]
fn monte_carlo_oracle() {
    let chain = make_chain(3).unwrap();
    let unit = CostFunction::constant(3, 1, 1.0).unwrap();
    let pi = StochasticPolicy::uniform(3, 1);
    let est = monte_carlo_eval(&chain.mdp, &pi, &unit, 100, 0, 1000).unwrap();
    assert_eq!(est.mean, 3.0);
    assert_eq!(est.stderr, Some(0.0));
    assert_eq!(monte_carlo_eval(&chain.mdp, &pi, &unit, 1, 0, 1000).unwrap().stderr, None);
    assert!(matches!(
        monte_carlo_eval(&chain.mdp, &pi, &unit, 0, 0, 1000),
        Err(HarnessError::ZeroRollouts)
    ));

    let a2 = fixture_a2(10.0, 0.1).unwrap();
    let a1 = StochasticPolicy::deterministic(2, &[0]).unwrap();
    let unit = CostFunction::constant(1, 2, 1.0).unwrap();
    let est = monte_carlo_eval(&a2.mdp, &a1, &unit, 100_000, 7, 1_000_000).unwrap();
    let se = est.stderr.unwrap();
    assert!((est.mean - 10.0).abs() <= 3.0 * se, "{} +- {se}", est.mean);
    assert!(matches!(
        monte_carlo_eval(&a2.mdp, &a1, &unit, 1000, 7, 2),
        Err(HarnessError::StepCapExceeded { cap: 2, .. })
    ));
}

#[test]
fn regret_identity_from_step_logs() {
    let env = make_gridworld(3, 3, 0.1).unwrap();
    let sched = CostScheduler::random_alternating(8, 4, 0.2, 1).unwrap();
    let env = env.with_scheduler(sched).unwrap();
    let opts = RunOptions {
        record_steps: true,
        ..Default::default()
    };
    for (kind, eps) in [(AgentKind::Oreps, 0.0), (AgentKind::Oreps2, 0.3), (AgentKind::Oreps3, 0.0)] {
        let cfg = AgentConfig {
            agent: kind,
            c_min: 0.2,
            epsilon_perturb: eps,
            known_threshold: Some(2),
            ..Default::default()
        };
        let out = run_experiment(&env, &cfg, 40, 4, opts).unwrap();
        let steps = out.log.steps.as_ref().unwrap();
        let (mut cost, mut jstar) = (0.0, 0.0);
        for (ep, rec) in steps.iter().zip(&out.log.episodes) {
            let mut realized = 0.0;
            for s in ep {
                realized += s.cost;
            }
            assert_eq!(realized, rec.realized_cost);
            assert_eq!(ep.len() as u64, rec.length);
            assert!(rec.realized_cost <= rec.length as f64);
            assert!(rec.length >= 1);
            cost += realized;
            jstar += rec.jstar_k;
            assert!((rec.cum_regret - (cost - jstar)).abs() <= 1e-9);
        }
        assert_eq!(cost - jstar, out.report.regret);
        assert_eq!(out.log.episodes.last().unwrap().cum_regret, out.report.regret);
        assert_eq!(out.log.total_steps, steps.iter().map(|e| e.len() as u64).sum::<u64>());
    }
}

#[test]
fn step_cap_is_enforced() {
    let env = make_gridworld(3, 3, 0.0).unwrap();
    let opts = RunOptions {
        step_cap: 2,
        ..Default::default()
    };
    assert!(matches!(
        run_experiment(&env, &AgentConfig::default(), 3, 0, opts),
        Err(HarnessError::StepCapExceeded { episode: 1, cap: 2 })
    ));
}

#[test]
fn sweep_rows_and_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let grid = SweepGrid {
        env: "builtin:chain:2".into(),
        schedule: None,
        agents: vec![AgentConfig::default()],
        episodes: vec![1000, 4000],
        seeds: (0..5).collect(),
        step_cap: 100,
    };
    let mut cells = grid.cells();
    assert_eq!(cells.len(), 10);
    let manifest = run_sweep(&cells, dir.path()).unwrap();
    assert_eq!(manifest.succeeded(), 10);
    for cell in &manifest.cells {
        let csv = std::fs::read_to_string(dir.path().join(cell.episodes_csv.as_ref().unwrap())).unwrap();
        assert_eq!(csv.lines().next().unwrap(), EPISODE_CSV_HEADER.join(","));
        assert_eq!(csv.lines().count() as u64, cell.episodes + 1);
    }

    cells[3].step_cap = 1;
    let dir = tempfile::tempdir().unwrap();
    let manifest = run_sweep(&cells, dir.path()).unwrap();
    assert_eq!(manifest.succeeded(), 9);
    assert_eq!(manifest.cells[3].status, CellStatus::Failed);
    assert!(manifest.cells[3].error.as_ref().unwrap().contains("step"));
    assert!(dir.path().join("manifest.json").exists());

    assert!(matches!(run_sweep(&[], dir.path()), Err(HarnessError::EmptyGrid)));
}

#[test]
fn written_runs_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(
        "builtin:random:4,2,5,0.1",
        AgentConfig {
            agent: AgentKind::Oreps3,
            known_threshold: Some(2),
            ..Default::default()
        },
        25,
        6,
    );
    cfg.schedule = Some("random:0.1".into());
    let summary = execute_run(&cfg, dir.path()).unwrap();
    for f in ["episodes.csv", "summary.json", "events.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let replayed = replay_run(dir.path()).unwrap();
    assert_eq!(replayed.report, summary.report);
    // a tampered table no longer replays
    let path = dir.path().join("episodes.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\n1,", "\n1,9", 1)).unwrap();
    assert!(matches!(replay_run(dir.path()), Err(HarnessError::ReplayMismatch(_))));
}
