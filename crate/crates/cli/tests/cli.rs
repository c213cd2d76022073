use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use hvs_core::report::{parse_csv_artifact, parse_json_artifact, schema};
use hvs_core::synth::{numeric_id, uniform_categories, PlantSpec};
use serde_json::Value;

fn hvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvs"))
        .args(args)
        .env_remove("HVS_OUTPUT_DIR")
        .env_remove("HVS_THREADS")
        .output()
        .expect("binary runs")
}

fn small_spec(seed: u64) -> PlantSpec {
    let mut spec = PlantSpec::standard(seed);
    spec.n_companies = 14;
    spec.n_years = 8;
    spec.categories = uniform_categories(3, 5, 2, 1);
    spec.support = vec![(numeric_id("c01", 0), 1.0), (numeric_id("c03", 2), -0.8)];
    spec.collinear = Vec::new();
    spec
}

fn write_spec(dir: &Path, spec: &PlantSpec) -> String {
    let p = dir.join("spec_in.json");
    fs::write(&p, serde_json::to_string(spec).unwrap()).unwrap();
    p.display().to_string()
}

fn synth_into(dir: &Path, extra: &[&str]) {
    let spec = write_spec(dir, &small_spec(4));
    let out = dir.join("in").display().to_string();
    let mut args = vec!["synth", "--spec", &spec, "--output-dir", &out];
    args.extend_from_slice(extra);
    let o = hvs(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn run_into(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let panel = dir.join("in/panel.csv").display().to_string();
    let hier = dir.join("in/hierarchy.json").display().to_string();
    let out = dir.join(out).display().to_string();
    let mut args = vec!["run", "--panel", &panel, "--hierarchy", &hier, "--output-dir", &out, "--seed", "11"];
    args.extend_from_slice(extra);
    hvs(&args)
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn synth_output_feeds_a_full_run_whose_artifacts_parse() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &[]);
    let factors = dir.path().join("factors.csv");
    let rows: String = (2010..2018).map(|y| format!("{y},{}\n", ((y * 7919) % 13) as f64 / 10.0)).collect();
    fs::write(&factors, format!("year,market\n{rows}")).unwrap();
    let factors = factors.display().to_string();
    let o = run_into(
        dir.path(),
        "out",
        &["--temporal", "--cross-sectional", "--window-years", "4", "--factors", &factors],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let read = |n: &str| fs::read_to_string(out.join(n)).unwrap();

    let csvs = [
        ("importance.csv", schema::IMPORTANCE),
        ("benchmark.csv", schema::BENCHMARK),
        ("boxcox.csv", schema::BOX_COX),
        ("validation_temporal.csv", schema::VALIDATION),
        ("validation_temporal_pairs.csv", schema::PAIRS),
        ("validation_cross_sectional.csv", schema::VALIDATION),
        ("validation_cross_sectional_obs.csv", schema::VALIDATION_OBS),
        ("fig_category_fit.csv", schema::FIG_CATEGORY),
        ("fig_step_comparison.csv", schema::FIG_STEPS),
        ("factors.csv", schema::FACTORS),
    ];
    let mut hashes = Vec::new();
    for (name, s) in csvs {
        let (h, _, rows) = parse_csv_artifact(&read(name), s).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(h.seed, 11);
        assert!(!rows.is_empty(), "{name} is empty");
        hashes.push(h.config_hash);
    }
    for (name, s) in [
        ("preprocess_log.json", schema::PREPROCESS),
        ("hvs_result.json", schema::RESULT),
        ("importance_pie.json", schema::PIE),
        ("benchmark_detail.json", schema::BENCHMARK_DETAIL),
        ("validation_temporal_folds.json", schema::FOLDS),
    ] {
        let env = parse_json_artifact::<Value>(&read(name), s).unwrap_or_else(|e| panic!("{name}: {e}"));
        hashes.push(env.config_hash);
    }
    hashes.dedup();
    assert_eq!(hashes.len(), 1);

    let pie = parse_json_artifact::<Value>(&read("importance_pie.json"), schema::PIE).unwrap();
    let total: f64 = pie.body["slices"].as_array().unwrap().iter().map(|s| s["pct"].as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-9);
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &[]);
    for out in ["a", "b"] {
        assert!(run_into(dir.path(), out, &["--cross-sectional"]).status.success());
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        let a = fs::read(dir.path().join("a").join(&n)).unwrap();
        let b = fs::read(dir.path().join("b").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_hvs"))
        .args(["synth", "--preset", "null"])
        .env("HVS_OUTPUT_DIR", &target)
        .env("HVS_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("panel.csv").is_file());
}

#[test]
fn negative_noise_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(1);
    spec.noise_sd = -1.0;
    let p = write_spec(dir.path(), &spec);
    let out = dir.path().join("o").display().to_string();
    let o = hvs(&["synth", "--spec", &p, "--output-dir", &out]);
    assert_eq!(o.status.code(), Some(2));
    let err = error_json(&o);
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"].as_str().unwrap().contains("noise_sd"));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();
    let o = hvs(&["run", "--panel", "/nonexistent/p.csv", "--hierarchy", "/nonexistent/h.json", "--output-dir", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["exit_code"], 2);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &[]);
    fs::write(dir.path().join("taken"), "").unwrap();
    let o = run_into(dir.path(), "taken", &["--no-benchmarks", "--no-box-cox"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_json(&o)["exit_code"], 1);
}

#[test]
fn returns_response_keeps_fewer_variables_than_log_volatility() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &PlantSpec::standard(2));
    let input = dir.path().join("in").display().to_string();
    assert!(hvs(&["synth", "--spec", &spec, "--output-dir", &input, "--returns"]).status.success());
    let mut counts = Vec::new();
    for (mode, out) in [("log-volatility", "vol"), ("returns", "ret")] {
        let returns = dir.path().join("in/returns.csv").display().to_string();
        let o = run_into(
            dir.path(),
            out,
            &["--returns", &returns, "--response", mode, "--no-benchmarks", "--no-box-cox"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(dir.path().join(out).join("hvs_result.json")).unwrap();
        let env = parse_json_artifact::<Value>(&text, schema::RESULT).unwrap();
        counts.push(env.body["step2"]["selected"].as_array().unwrap().len());
    }
    assert!(counts[1] * 3 < counts[0], "{counts:?}");
}

#[test]
fn sector_scale_synth_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();
    let t = Instant::now();
    let o = hvs(&["synth", "--preset", "sector-scale", "--output-dir", &out]);
    assert!(o.status.success());
    assert!(t.elapsed().as_secs_f64() < 10.0);
}
