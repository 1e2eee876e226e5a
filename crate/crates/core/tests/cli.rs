use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use truncsurv::io::csv::write_cohort_csv;
use truncsurv::io::report::report_plots;
use truncsurv::{generate_iteration, AnalysisReport, Arm, CalibratedScenario, Cohort, SimScenario, SurvivalRecord};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_truncsurv"))
        .args(args)
        .output()
        .unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn schema(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(repo_file(&format!("docs/{name}"))).unwrap()).unwrap()
}

fn assert_valid(schema: &Value, instance: &Value) {
    let validator = jsonschema::validator_for(schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn write_csv(cohort: &Cohort, path: &Path) {
    write_cohort_csv(cohort, std::fs::File::create(path).unwrap()).unwrap();
}

/// Truncated and reference CSVs from one simulated iteration.
fn simulated_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let cal = CalibratedScenario::new(SimScenario::default()).unwrap();
    let data = generate_iteration(&cal, 5).unwrap();
    let t = dir.join("truncated.csv");
    let r = dir.join("reference.csv");
    write_csv(&data.truncated.filter(|r| r.arm == Arm::Truncated).unwrap(), &t);
    write_csv(&data.truncated.filter(|r| r.arm == Arm::Reference).unwrap(), &r);
    (t, r)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_output_matches_schema_and_plots_derive_from_it() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, r) = simulated_inputs(tmp.path());
    let out = tmp.path().join("out");
    let res = bin(&[
        "analyze",
        "--truncated",
        s(&t),
        "--reference",
        s(&r),
        "--confounders",
        "z1,z2",
        "--seed",
        "3",
        "--bootstrap-n",
        "60",
        "--plots",
        "--out",
        s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let json = read_json(&out.join("analysis.json"));
    assert_valid(&schema("report.schema.json"), &json);
    assert_eq!(json["provenance"]["seed"], 3);
    assert_eq!(json["provenance"]["seed_generated"], false);

    let report: AnalysisReport = serde_json::from_value(json).unwrap();
    for km in [&report.naive_km, &report.adjusted_km, &report.weighted_km] {
        if let (Some(m), Some(ci)) = (km.median, km.median_ci.as_ref()) {
            assert!(ci.lower <= m && m <= ci.upper);
        }
    }
    for (name, svg) in report_plots(&report) {
        assert_eq!(std::fs::read_to_string(out.join(&name)).unwrap(), svg, "{name}");
    }
}

#[test]
fn analyze_without_seed_records_a_generated_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, r) = simulated_inputs(tmp.path());
    let out = tmp.path().join("out");
    let res = bin(&[
        "analyze",
        "--truncated",
        s(&t),
        "--reference",
        s(&r),
        "--confounders",
        "z1",
        "--bootstrap-n",
        "20",
        "--out",
        s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let json = read_json(&out.join("analysis.json"));
    assert_eq!(json["provenance"]["seed_generated"], true);
    assert!(json["provenance"]["seed"].is_u64());
}

#[test]
fn missing_confounder_column_is_a_data_error_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, r) = simulated_inputs(tmp.path());
    let out = tmp.path().join("out");
    let res = bin(&[
        "analyze",
        "--truncated",
        s(&t),
        "--reference",
        s(&r),
        "--confounders",
        "z1,z9",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("z9"));
    assert!(!out.join("analysis.json").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(bin(&["km", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn out_of_range_target_names_the_offending_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "version = 1\n[grid]\ntarget_truncation = [0.5, 1.5]\n").unwrap();
    let res = bin(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("grid.target_truncation[1]"));
}

#[test]
fn monotone_likelihood_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let records = (1..=6)
        .map(|k| SurvivalRecord::new(0.0, f64::from(k), true).with_covariates(vec![f64::from(k)]))
        .collect();
    let input = tmp.path().join("sep.csv");
    write_csv(&Cohort::new(records, vec!["z1".into()], true).unwrap(), &input);
    let res = bin(&[
        "cox",
        "--input",
        s(&input),
        "--terms",
        "z1",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn single_estimator_subcommands_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, r) = simulated_inputs(tmp.path());
    let out = tmp.path().join("out");
    let o = s(&out);
    let runs: [(&[&str], &str); 5] = [
        (&["km", "--input", s(&t), "--naive"], "km.json"),
        (&["cox", "--input", s(&t), "--terms", "z1,z2"], "cox.json"),
        (
            &[
                "test-truncation",
                "--input",
                s(&t),
                "--conditional",
                "--confounders",
                "z1,z2",
            ],
            "test_truncation.json",
        ),
        (
            &[
                "weights",
                "--truncated",
                s(&t),
                "--reference",
                s(&r),
                "--confounders",
                "z1,z2",
            ],
            "weights.json",
        ),
        (
            &[
                "balance",
                "--truncated",
                s(&t),
                "--reference",
                s(&r),
                "--confounders",
                "z1,z2",
            ],
            "balance.json",
        ),
    ];
    for (args, file) in runs {
        let mut full = args.to_vec();
        full.extend(["--seed", "2", "--out", o]);
        let res = bin(&full);
        assert!(
            res.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
        let json = read_json(&out.join(file));
        assert_eq!(json["provenance"]["seed"], 2, "{file}");
    }
    let res = bin(&["km", "--input", s(&t), "--format", "csv", "--out", o]);
    assert!(res.status.success());
    let csv = std::fs::read_to_string(out.join("km.csv")).unwrap();
    assert!(csv.starts_with("time,survival,at_risk,events,lower,upper"));
}

#[test]
fn default_grid_writes_every_scenario_and_a_valid_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let shipped = std::fs::read_to_string(repo_file("configs/default.toml")).unwrap();
    let reduced = shipped
        .replace("iterations = 1000", "iterations = 2")
        .replace("bootstrap_resamples = 200", "bootstrap_resamples = 10");
    assert_ne!(reduced, shipped);
    let cfg = tmp.path().join("grid.toml");
    std::fs::write(&cfg, reduced).unwrap();
    let out = tmp.path().join("out");
    let res = bin(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let scenario_files = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name().to_string_lossy().into_owned();
            n.starts_with("scenario_") && n.ends_with(".json")
        })
        .count();
    assert_eq!(scenario_files, 63);

    let summary = read_json(&out.join("summary.json"));
    let schema = schema("summary.schema.json");
    assert_valid(&schema, &summary);
    let scenarios = summary["scenarios"].as_array().unwrap();
    assert_eq!(scenarios.len(), 63);
    let unachievable = scenarios
        .iter()
        .filter(|s| s["outcome"]["status"] == "unachievable")
        .count();
    assert_eq!(unachievable, 18);

    let mut single = schema.clone();
    single["$ref"] = Value::String("#/$defs/scenario_result".into());
    for key in ["type", "properties", "required", "additionalProperties"] {
        single.as_object_mut().unwrap().remove(key);
    }
    assert_valid(&single, &read_json(&out.join("scenario_000.json")));
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let indices: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(indices.len(), 63);
}
