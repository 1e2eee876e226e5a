use truncsurv::harness::{run_scenario, summarize_estimator, Estimate, HarnessOptions, IterationResult};
use truncsurv::{CalibratedScenario, Estimator, SimScenario};

fn run(scenario: SimScenario, seed: u64, n: usize) -> Vec<IterationResult> {
    let cal = CalibratedScenario::new(scenario).unwrap();
    let opts = HarnessOptions {
        n_iterations: n,
        bootstrap_resamples: 0,
        ..HarnessOptions::default()
    };
    run_scenario(&cal, seed, &opts).unwrap()
}

fn point(r: &IterationResult, e: Estimator) -> Option<f64> {
    match r.estimates.get(&e) {
        Some(Estimate::Ok { estimate, .. }) => Some(*estimate),
        _ => None,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn without_confounding_weighting_matches_risk_set_adjustment() {
    let scenario = SimScenario {
        beta_z: 0.0,
        ..SimScenario::default()
    };
    let results = run(scenario, 31_000, 200);
    let diffs: Vec<f64> = results
        .iter()
        .filter_map(|r| {
            let a = point(r, Estimator::MarginalAdjusted)?;
            let w = point(r, Estimator::MarginalWeighted)?;
            Some((a.ln() - w.ln()).abs())
        })
        .collect();
    assert!(diffs.len() >= 190);
    let m = median(diffs);
    assert!(m < 0.02, "median |log difference| {m}");
}

#[test]
fn weighted_cox_is_unbiased_and_calibrated_at_the_headline_scenario() {
    let results = run(SimScenario::default(), 32_000, 1000);
    let weighted = summarize_estimator(&results, Estimator::MarginalWeighted).unwrap();
    let adjusted = summarize_estimator(&results, Estimator::ConditionalAdjusted).unwrap();
    println!(
        "weighted marginal: rb {:+.4} coverage {:?}; adjusted conditional: rb {:+.4} coverage {:?}",
        weighted.relative_bias, weighted.coverage, adjusted.relative_bias, adjusted.coverage
    );
    let calibrated = |c: Option<f64>| c.is_some_and(|c| (0.93..=0.97).contains(&c));
    assert!(
        weighted.relative_bias.abs() < 0.03,
        "weighted relative bias {}",
        weighted.relative_bias
    );
    assert!(
        calibrated(weighted.coverage),
        "weighted coverage {:?}",
        weighted.coverage
    );
    assert!(
        calibrated(adjusted.coverage),
        "adjusted conditional coverage {:?}",
        adjusted.coverage
    );
}

#[test]
fn naive_marginal_bias_grows_with_truncation() {
    let targets = [0.3, 0.4, 0.5, 0.6, 0.7];
    let summaries: Vec<_> = targets
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let scenario = SimScenario {
                target_truncation: t,
                ..SimScenario::default()
            };
            let results = run(scenario, 33_000 + 1000 * k as u64, 200);
            summarize_estimator(&results, Estimator::MarginalNaive).unwrap()
        })
        .collect();
    for (pair, t) in summaries.windows(2).zip(targets.windows(2)) {
        let (heavier, lighter) = (&pair[0], &pair[1]);
        let se = heavier.relative_bias_mc_se.hypot(lighter.relative_bias_mc_se);
        assert!(
            lighter.relative_bias <= heavier.relative_bias + 2.0 * se,
            "retained {} -> {}: bias {} then {} (se {se})",
            t[0],
            t[1],
            heavier.relative_bias,
            lighter.relative_bias
        );
    }
}

#[test]
fn weighted_median_beats_adjusted_median_in_most_replications() {
    let results = run(SimScenario::default(), 34_000, 200);
    let (mut wins, mut total) = (0usize, 0usize);
    for r in &results {
        let (Some(truth), Some(w), Some(a)) = (
            r.truth.rw_median,
            point(r, Estimator::MedianWeighted),
            point(r, Estimator::MedianAdjusted),
        ) else {
            continue;
        };
        total += 1;
        if (w - truth).abs() < (a - truth).abs() {
            wins += 1;
        }
    }
    let share = wins as f64 / total as f64;
    println!("weighted median closer in {wins} of {total}");
    assert!(total >= 190);
    assert!(share >= 0.8, "weighted median closer in {share:.3} of replications");
}
