use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use stalloc_bench::report::{validate_comparison_json, validate_report_json, Comparison, StatsReport};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stalloc-bench")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stalloc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn run_report_round_trips_through_validator() {
    let out = scratch("run.json");
    let o = bench(&["run", "--workload", "batchchurn", "--objects", "500", "--rounds", "3", "--backend", "sim", "--json"]
        .iter()
        .copied()
        .chain([out.to_str().unwrap()])
        .collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    validate_report_json(&v).unwrap();
    let report: StatsReport = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(serde_json::to_value(&report).unwrap(), v);
    assert_eq!(report.events, 3000);
    assert!(report.timing.is_some());
}

#[test]
fn compare_json_validates_and_identical_configs_are_near_one() {
    let o = bench(&[
        "compare", "--workload", "mixedsmall", "--objects", "2000", "--rounds", "20", "--config", "single:sim", "--config",
        "single:sim", "--repeat", "1", "--json", "-",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    validate_comparison_json(&v).unwrap();
    let cmp: Comparison = serde_json::from_value(v).unwrap();
    assert_eq!(cmp.ratios[1].memory_ratio, Some(1.0));
    assert!(cmp.ratios[1].speedup.unwrap() > 0.0);
}

#[test]
fn validator_rejects_broken_reports() {
    let o = bench(&["run", "--workload", "uniform", "--backend", "sim", "--no-timing", "--json", "-"]);
    assert!(o.status.success());
    let good: Value = serde_json::from_slice(&o.stdout).unwrap();
    validate_report_json(&good).unwrap();
    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("peak_live");
    assert!(validate_report_json(&missing).is_err());
    let mut inconsistent = good.clone();
    inconsistent["free_events"] = Value::from(0);
    assert!(validate_report_json(&inconsistent).is_err());
    let mut over = good;
    over["peak_live"] = Value::from(u64::MAX);
    assert!(validate_report_json(&over).is_err());
}

#[test]
fn injected_fault_exits_with_corruption_code() {
    for policy in ["single", "triple"] {
        let o = bench(&[
            "run", "--workload", "mixedsmall", "--objects", "500", "--rounds", "4", "--backend", "sim", "--policy", policy,
            "--no-timing", "--inject-fault", "300",
        ]);
        assert_eq!(o.status.code(), Some(2), "{policy}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("corruption"));
    }
}

#[test]
fn malformed_and_illegal_traces_exit_with_parse_code() {
    for (name, text) in [("bad-op.tr", "a 0 8\nx 0\n"), ("dead-free.tr", "f 7\n"), ("no-size.tr", "a 1\n")] {
        let path = scratch(name);
        std::fs::write(&path, text).unwrap();
        let o = bench(&["run", "--trace", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(3), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("line"), "{name}");
    }
}

#[test]
fn missing_trace_file_is_a_plain_failure() {
    let o = bench(&["run", "--trace", "/nonexistent/trace.tr"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn hand_written_trace_runs() {
    let path = scratch("ok.tr");
    std::fs::write(&path, "# comment\na 0 33\n\na 1 5000\nr 0 100\nf 1\nf 0\n").unwrap();
    let o = bench(&["run", "--trace", path.to_str().unwrap(), "--backend", "sim", "--no-timing", "--json", "-"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["events"], 5);
    assert_eq!(v["final_bytes_live"], 0);
}

#[test]
fn dump_classes_subcommand_and_flag_agree() {
    let a = bench(&["dump-classes"]);
    let b = bench(&["--dump-classes"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let classes = v["classes"].as_array().unwrap();
    assert_eq!(classes[4]["block_size"], 40);
    assert_eq!(classes[0]["page_type"], "small");
}

#[test]
fn gen_output_replays_like_the_workload() {
    let path = scratch("gen.tr");
    let g = bench(&["gen", "--workload", "batchchurn", "--seed", "5", "--objects", "300", "--rounds", "2", "--out", path.to_str().unwrap()]);
    assert!(g.status.success());
    let common = ["--backend", "sim", "--no-timing", "--json", "-"];
    let from_file = bench(&[&["run", "--trace", path.to_str().unwrap()][..], &common].concat());
    let direct = bench(&[&["run", "--workload", "batchchurn", "--seed", "5", "--objects", "300", "--rounds", "2"][..], &common].concat());
    let mut a: Value = serde_json::from_slice(&from_file.stdout).unwrap();
    let mut b: Value = serde_json::from_slice(&direct.stdout).unwrap();
    a.as_object_mut().unwrap().remove("source");
    b.as_object_mut().unwrap().remove("source");
    assert_eq!(a, b);
}
