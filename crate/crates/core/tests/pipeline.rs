use edgeslice::harness::{parse_config, Experiment};

fn small() -> Experiment {
    Experiment::new(parse_config(r#"{"regions": 2, "horizon": 5, "short_slots": 4, "warmup": 12}"#).unwrap())
}

#[test]
fn registries_list_every_strategy() {
    let exp = small();
    let mut policies = exp.policies.names();
    policies.sort_unstable();
    assert_eq!(
        policies,
        ["auction", "greedy", "hybrid", "max_transaction", "oracle", "random", "sliceoff"]
    );
    let mut predictors = exp.predictors.names();
    predictors.sort_unstable();
    assert_eq!(predictors, ["attention", "moving_average", "perfect", "persistence"]);
    assert_eq!(exp.policies.predictor_for("sliceoff").unwrap(), "attention");
    assert_eq!(exp.policies.predictor_for("oracle").unwrap(), "perfect");
    assert_eq!(exp.policies.predictor_for("greedy").unwrap(), "persistence");
}

#[test]
fn untrained_policies_run_cleanly() {
    let mut exp = small();
    for tag in ["greedy", "max_transaction", "auction", "random", "oracle"] {
        let r = exp.run(tag, 4).unwrap();
        assert_eq!(r.rows.len(), 5, "{tag}");
        assert_eq!((r.violations, r.policy_errors), (0, 0), "{tag}");
        assert!(r.totals.hit_rate >= 0.0 && r.totals.hit_rate <= 1.0);
        let profit: f64 = r.rows.iter().map(|row| row.profit).sum();
        assert!((profit - r.totals.profit).abs() < 1e-6);
    }
}

#[test]
fn compare_groups_runs_by_policy() {
    let mut exp = small();
    let tags = vec!["greedy".to_string(), "oracle".to_string()];
    let c = exp.compare(&tags, &[1, 2, 3]).unwrap();
    assert_eq!(c.runs.len(), 6);
    assert_eq!(c.policy("greedy").unwrap().seeds, vec![1, 2, 3]);
    let mean = c.runs[..3].iter().map(|r| r.totals.profit).sum::<f64>() / 3.0;
    assert!((c.policy("greedy").unwrap().profit - mean).abs() < 1e-9);
    assert_eq!(c.policy("oracle").unwrap().predictor, "perfect");
}

#[test]
fn same_seed_same_report() {
    let mut exp = small();
    assert_eq!(exp.run("random", 9).unwrap(), exp.run("random", 9).unwrap());
    assert_ne!(exp.run("random", 9).unwrap().totals, exp.run("random", 10).unwrap().totals);
}
