use super::*;

fn small(extra: &[&str]) -> Experiment {
    let text = r#"
m = 2
horizon = 200
replications = 4
seed = 11
points_per_decade = 5

[thresholds]
l = -0.5
u = 1.0
L = -0.5
U = 1.0

[generator]
kind = "iid-bounded"
half_width = 1.0
intercept = true
"#;
    let overrides: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    Experiment::new(parse_config_str(text, &overrides).unwrap()).unwrap()
}

#[test]
fn grid_is_log_spaced_and_ends_at_horizon() {
    assert_eq!(log_grid(1, 10), vec![1]);
    assert_eq!(log_grid(10, 1), vec![1, 10]);
    assert_eq!(log_grid(150, 1), vec![1, 10, 100, 150]);
    let g = log_grid(10_000, 50);
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*g.last().unwrap(), 10_000);
    assert!(g.len() <= 201);
}

#[test]
fn one_step_one_replication() {
    let exp = small(&["horizon=1", "replications=1"]);
    let out = run_replication(&exp, 0).unwrap();
    assert_eq!(out.err_alg1.len(), 1);
    assert_eq!(out.fisher[0][0].n, 1);
}

#[test]
fn errors_sum_over_columns() {
    let exp = small(&["p=3"]);
    let out = run_replication(&exp, 2).unwrap();
    let data = exp.dataset(2);
    let mut total = 0.0;
    for j in 0..3 {
        let mut est = TwoStepEstimator::new(&exp.estimator).unwrap();
        for (k, phi) in data.phis.iter().enumerate() {
            let th = exp.config.thresholds.at(k);
            let obs = CensoredObservation::classify(data.outputs[k][j], th).unwrap();
            est.update(phi, &obs, th, &exp.estimator).unwrap();
        }
        total += (&est.step2.theta_hat - exp.theta.column(j)).norm_squared();
    }
    assert!((out.err_alg1.last().unwrap() - total).abs() <= 1e-12 * total.max(1.0));
    assert!((out.final_alg1.norm_squared() - total).abs() <= 1e-12 * total.max(1.0));
}

#[test]
fn replications_do_not_depend_on_each_other() {
    let exp = small(&[]);
    let direct = run_replication(&exp, 3).unwrap();
    let after_others: Vec<_> = (0..4).map(|r| run_replication(&exp, r).unwrap()).collect();
    assert_eq!(direct.err_alg1, after_others[3].err_alg1);
    assert_ne!(after_others[2].err_alg1, after_others[3].err_alg1);
}

#[test]
fn deterministic_generator_shares_signals() {
    let exp = small(&[
        "generator = { kind = \"deterministic\", sequence = [[1.0, 0.5], [1.0, -0.5], [0.2, 1.0]] }",
        "replications=3",
    ]);
    let a = exp.dataset(0);
    let b = exp.dataset(1);
    assert_eq!(a.phis, b.phis);
    assert_ne!(a.outputs, b.outputs);
}

#[test]
fn parallel_matches_sequential() {
    let exp = small(&["baselines=[\"step1-only\", \"nls\"]"]);
    let seq = run_experiment(&exp, 1).unwrap();
    let par = run_experiment(&exp, 3).unwrap();
    assert_eq!(seq.curves.to_csv(), par.curves.to_csv());
    assert!(seq.curves.to_csv().starts_with("k,err_alg1,mse_alg1,crb,err_step1,mse_step1,err_nls\n"));
}

#[test]
fn crb_curve_is_positive() {
    let exp = small(&["replications=6"]);
    let res = run_experiment(&exp, 1).unwrap();
    assert!(res.curves.crb.iter().all(|&c| c > 0.0));
    assert!(res.curves.mse_alg1.iter().all(|&c| c >= 0.0));
    let kv = res.report(&exp);
    assert!(kv.iter().any(|(k, _)| k == "efficiency_ratio_alg1"));
}

#[test]
fn feedback_draw_rejects_stuck_coordinates() {
    let text = r#"
m = 10
p = 10
horizon = 10
replications = 1
seed = 1

[thresholds]
l = 0.0
u = 15.0
L = 0.0
U = 15.0

[generator]
kind = "feedback"
"#;
    let exp = Experiment::new(parse_config_str(text, &[]).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    assert!(excited(&exp.theta, &exp.config, &exp.noise, 0.02, &mut rng));
    assert!(exp.theta.column_iter().all(|c| c.norm() <= 2.0 + 1e-12));
    let accept_all = parse_config_str(text, &["theta = { kind = \"uniform\", min_interior_fraction = 0.0 }".into()]).unwrap();
    assert_eq!(Experiment::new(accept_all).unwrap().theta_draws, 1);
}

#[test]
fn monte_carlo_delta_of_fixed_signals_is_exact() {
    let exp = small(&["generator = { kind = \"deterministic\", sequence = [[1.0, 0.0], [0.0, 1.0]] }"]);
    let est = monte_carlo_delta(&exp, 1).unwrap();
    assert_eq!(est.len(), 1);
    assert!(est[0].std_error.amax() == 0.0);
    let data = exp.dataset(0);
    let mut acc = FisherAccumulator::new(2);
    for (k, phi) in data.phis.iter().enumerate() {
        acc.accumulate(phi, phi.dot(&exp.theta.column(0)), exp.config.thresholds.at(k), &exp.noise);
    }
    assert!((&est[0].mean - &acc.lambda_sum).amax() <= 1e-12 * acc.lambda_sum.amax());
}
