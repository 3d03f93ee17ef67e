use std::path::{Path, PathBuf};
use std::process::Command as Process;

use consensus_core::dynamics::Trajectory;
use consensus_lab::output::read_csv;
use consensus_lab::{emit, execute, parse_config, run_scenario, Artifacts, Command, Format, Overrides};
use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn two_agent_config(dir: &Path, var_p: bool) -> String {
    write(dir, "pair.txt", "0 0.3\n0.7 0\n");
    format!(
        r#"
[scenario]
name = "pair"
seed = 1
[source]
kind = "matrix_file"
path = "pair.txt"
[initial]
kind = "list"
values = [1.0, 0.0]
[integration]
dt = 0.01
t_end = 2.0
var_p = {var_p}
[output]
dir = "{}"
"#,
        dir.join("out").display()
    )
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_consensus-lab"))
}

#[test]
fn two_agents_give_seven_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let config = parse_config(&two_agent_config(tmp.path(), false), "pair", tmp.path().into()).unwrap();
    run_scenario(Command::Simulate, config, &Overrides::default()).unwrap();
    let table = read_csv(&tmp.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(
        table.header,
        ["t", "y_1", "y_2", "weighted_mean", "var_v", "min_state", "max_state"]
    );
    assert_eq!(table.rows.len(), 201);

    let config = parse_config(&two_agent_config(tmp.path(), true), "pair", tmp.path().into()).unwrap();
    run_scenario(Command::Simulate, config, &Overrides::default()).unwrap();
    let table = read_csv(&tmp.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(table.header.len(), 8);
    assert_eq!(table.header[5], "var_P");
}

#[test]
fn empty_trajectory_writes_header_and_nulls() {
    let tmp = tempfile::tempdir().unwrap();
    let mut summary = serde_json::Map::new();
    summary.insert("fitted_slope".into(), Value::Null);
    summary.insert("s_A2".into(), Value::Null);
    let artifacts = Artifacts {
        summary: Value::Object(summary),
        n: 3,
        trajectory: Some(Trajectory::default()),
        class_trajectories: Vec::new(),
        tables: Vec::new(),
    };
    emit(&artifacts, tmp.path(), &[Format::Csv, Format::Json, Format::Svg], 0, "empty").unwrap();
    let text = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(text, "t,y_1,y_2,y_3,weighted_mean,var_v,min_state,max_state\n");
    let json: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert!(json["fitted_slope"].is_null());
    assert!(std::fs::read_to_string(tmp.path().join("states.svg")).unwrap().contains("</svg>"));
}

#[test]
fn csv_round_trip_reproduces_monitors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = parse_config(&two_agent_config(tmp.path(), true), "pair", tmp.path().into()).unwrap();
    let artifacts = execute(Command::Simulate, &config).unwrap();
    let traj = artifacts.trajectory.as_ref().unwrap();
    emit(&artifacts, tmp.path(), &[Format::Csv], 0, "pair").unwrap();
    let table = read_csv(&tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(table.rows.len(), traj.len());
    let col = |name: &str| table.column(name).unwrap();
    for (k, m) in traj.monitors.iter().enumerate() {
        assert_eq!(col("t")[k], traj.times[k]);
        assert_eq!(col("y_1")[k], traj.states[k][0]);
        assert_eq!(col("weighted_mean")[k], m.weighted_mean);
        assert_eq!(col("var_v")[k], m.var_v);
        assert_eq!(col("var_P")[k], m.var_p.unwrap());
        assert_eq!(col("min_state")[k], m.min_state);
        assert_eq!(col("max_state")[k], m.max_state);
    }
}

fn random_config(dir: &Path, out: &str) -> String {
    format!(
        r#"
[scenario]
name = "fc"
seed = 99
[source]
kind = "fully_connected"
n = 12
[integration]
dt = 0.005
t_end = 1.0
[output]
dir = "{}"
"#,
        dir.join(out).display()
    )
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let path = write(tmp.path(), &format!("{out}.toml"), &random_config(tmp.path(), out));
        let status = bin().args(["simulate", "--config"]).arg(&path).output().unwrap().status;
        assert!(status.success());
    }
    for file in ["trajectory.csv", "summary.json", "states.svg", "variance.svg"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn seed_is_recorded_and_overridable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = parse_config(&random_config(tmp.path(), "x"), "fc", tmp.path().into()).unwrap();
    let base = execute(Command::Analyze, &config).unwrap().summary;
    assert_eq!(base["seed"], 99);
    assert!(base["rng"].as_str().unwrap().contains("ChaCha8"));
    let overrides = Overrides {
        seed: Some(5),
        ..Default::default()
    };
    let (other, _) = run_scenario(Command::Analyze, config, &overrides).unwrap();
    assert_eq!(other.summary["seed"], 5);
    assert_ne!(other.summary["v"], base["v"]);
    assert!(other.summary["runtime"].is_null());
}

#[test]
fn runtime_recorded_only_on_request() {
    let tmp = tempfile::tempdir().unwrap();
    let config = parse_config(&random_config(tmp.path(), "x"), "fc", tmp.path().into()).unwrap();
    let overrides = Overrides {
        record_runtime: true,
        ..Default::default()
    };
    let (artifacts, _) = run_scenario(Command::Analyze, config, &overrides).unwrap();
    assert!(artifacts.summary["runtime"].as_f64().unwrap() >= 0.0);
}

fn exit_code(args: &[&str], config: &Path) -> i32 {
    let out = bin().args(args).arg("--config").arg(config).output().unwrap();
    out.status.code().unwrap()
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.join("out").display().to_string();
    let matrix_config = |file: &str| {
        format!(
            "[scenario]\nname = \"m\"\n[source]\nkind = \"matrix_file\"\npath = \"{file}\"\n[integration]\ndt = 0.01\nt_end = 1.0\n[output]\ndir = \"{out}\"\n"
        )
    };

    let ok = write(dir, "ok.toml", &two_agent_config(dir, true));
    assert_eq!(exit_code(&["simulate"], &ok), 0);

    let bad = write(dir, "bad.toml", "[scenario]\nname = \"x\"\n[source]\nkind = \"ring\"\n");
    assert_eq!(exit_code(&["simulate"], &bad), 2);

    // Agent 2 listens to agent 1, nobody listens to agent 2.
    write(dir, "chain.txt", "0 0\n1 0\n");
    let chain = write(dir, "chain.toml", &matrix_config("chain.txt"));
    assert_eq!(exit_code(&["analyze"], &chain), 3);
    assert_eq!(exit_code(&["simulate"], &chain), 3);

    write(dir, "weak.txt", "0 1 0\n1 0 1\n0 1e-300 0\n");
    let weak = write(dir, "weak.toml", &matrix_config("weak.txt"));
    assert_eq!(exit_code(&["analyze"], &weak), 4);

    let missing = write(dir, "missing.toml", &matrix_config("nowhere.txt"));
    assert_eq!(exit_code(&["analyze"], &missing), 5);
    assert_eq!(exit_code(&["analyze"], &dir.join("no_such_config.toml")), 5);

    write(dir, "blocker", "not a directory");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&ok)
        .arg("--out")
        .arg(dir.join("blocker/sub"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(5));
}

#[test]
fn unstable_step_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write(tmp.path(), "ok.toml", &two_agent_config(tmp.path(), false));
    let out = bin().args(["simulate", "--dt", "5", "--config"]).arg(&ok).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stability"));
}

#[test]
fn blocks_scenario_reports_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "[scenario]\nname = \"b\"\nseed = 3\n[source]\nkind = \"blocks\"\nn = 9\nblocks = 3\n[integration]\ndt = 0.01\nt_end = 5.0\n[output]\ndir = \"{}\"\n",
        tmp.path().join("out").display()
    );
    let config = parse_config(&text, "b", tmp.path().into()).unwrap();
    let (artifacts, files) = run_scenario(Command::Simulate, config.clone(), &Overrides::default()).unwrap();
    let s = &artifacts.summary;
    assert_eq!(s["is_strongly_connected"], false);
    assert_eq!(s["component_count"], 3);
    assert_eq!(s["classes"].as_array().unwrap().len(), 3);
    assert!(s["consensus_value"].is_null());
    assert!(files.iter().any(|f| f.ends_with("class_3.csv")));
    let analyzed = execute(Command::Analyze, &config).unwrap().summary;
    assert_eq!(analyzed["classes"].as_array().unwrap().len(), 3);

    let alpha = Overrides {
        alpha: Some(1.0),
        ..Default::default()
    };
    let err = run_scenario(Command::Simulate, config, &alpha).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn discrete_and_kernel_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "[scenario]\nname = \"k\"\n[source]\nkind = \"kernel\"\nname = \"periodic_skew\"\nn = 16\n[initial]\nkind = \"node_coordinate\"\n[discrete]\nsteps = 100\n[kernel]\nn_list = [8, 16, 32]\n[output]\ndir = \"{}\"\n",
        tmp.path().join("out").display()
    );
    let config = parse_config(&text, "k", tmp.path().into()).unwrap();
    let (k, files) = run_scenario(Command::Kernel, config.clone(), &Overrides::default()).unwrap();
    assert_eq!(k.summary["constant_s"]["passed"], true);
    assert_eq!(k.summary["refinement"].as_array().unwrap().len(), 3);
    assert!(files.iter().any(|f| f.ends_with("refinement.csv")));

    let d = execute(Command::Discrete, &config).unwrap().summary;
    assert!((d["stability_product"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(d["rho_star"].as_f64().unwrap() < 1.0);

    let not_kernel = parse_config(
        "[scenario]\nname = \"r\"\n[source]\nkind = \"ring\"\nn = 4\n",
        "r",
        tmp.path().into(),
    )
    .unwrap();
    assert_eq!(execute(Command::Kernel, &not_kernel).unwrap_err().exit_code(), 2);
}

#[test]
fn batch_runs_each_scenario_into_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.toml", &random_config(tmp.path(), "ignored").replace("\"fc\"", "\"first\""));
    let b = write(tmp.path(), "b.toml", &random_config(tmp.path(), "ignored").replace("\"fc\"", "\"second\""));
    let root = tmp.path().join("batch");
    let status = bin().arg("batch").arg(&a).arg(&b).arg("--out").arg(&root).output().unwrap().status;
    assert!(status.success());
    for name in ["first", "second"] {
        assert!(root.join(name).join("summary.json").exists());
    }
}

#[test]
fn format_flag_limits_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(tmp.path(), "c.toml", &random_config(tmp.path(), "only_json"));
    let status = bin()
        .args(["simulate", "--format", "json", "--config"])
        .arg(&path)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let files: Vec<_> = std::fs::read_dir(tmp.path().join("only_json")).unwrap().collect();
    assert_eq!(files.len(), 1);
}
