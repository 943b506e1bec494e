use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bridgekit::checkpoint::Checkpoint;
use bridgekit::config::{checkpoint_start_points, RunConfig};
use bridgekit::data::EndpointDistribution;
use bridgekit::io::format_sig9;
use bridgekit::net::{Activation, DriftNetwork};
use bridgekit::sim::Direction;

fn bridgekit(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bridgekit"));
    cmd.args(args).env_remove("BRIDGEKIT_SEED");
    if let Some(s) = seed {
        cmd.env("BRIDGEKIT_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn point_mass_config(out_dir: &Path, instantiation: &str, sigma: f64) -> String {
    format!(
        r#"{{
  "uba": {{
    "instantiation": "{instantiation}",
    "outer_iters": 2,
    "inner_steps": 30,
    "batch_size": 16,
    "diffusion": {{ "sigma": {sigma}, "sigma_ref": 1.0, "dim": 1 }},
    "net": {{ "hidden": [8] }},
    "train_n": 64,
    "eval_n": 32,
    "sim_steps_eval": 20,
    "pool_n": 64,
    "sim_steps_train": 10,
    "seed": 3
  }},
  "source": {{ "kind": "point_mass", "point": [0.0] }},
  "target": {{ "kind": "point_mass", "point": [1.0] }},
  "output_dir": "{}",
  "export": {{ "sample_times": [0.5, 1.0], "trajectories": 2 }}
}}"#,
        out_dir.display()
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "run.json", &point_mass_config(&out, "ot_cfm", 0.0));
    let o = bridgekit(&["run", &cfg], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iteration,name,value,std_error\n"));
    assert!(metrics.lines().count() > 1);
    for f in ["samples_t0.5.csv", "samples_t1.csv", "trajectories.csv", "checkpoint"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn runs_are_byte_identical_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let cfg = write_config(dir.path(), &format!("{name}.json"), &point_mass_config(&out, "imf", 1.0));
        let o = bridgekit(&["run", &cfg, "--threads", "1"], seed);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = read("a", None);
    let b = read("b", None);
    assert_eq!(a, b);
    let c = read("c", Some("3"));
    assert_eq!(a, c);
    let d = read("d", Some("4"));
    assert_ne!(a, d);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let cfg = write_config(dir.path(), &format!("t{threads}.json"), &point_mass_config(&out, "imf", 1.0));
        let o = bridgekit(&["run", &cfg, "--threads", threads], None);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(fs::read(out.join("samples_t1.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "bad.json", &point_mass_config(&out, "imf", 0.0));
    let o = bridgekit(&["run", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("σ-consistency"), "{}", stderr(&o));
    assert!(!out.exists());

    let cfg = write_config(dir.path(), "broken.json", "{ \"uba\": ");
    assert_eq!(bridgekit(&["run", &cfg], None).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(bridgekit(&["run", missing.to_str().unwrap()], None).status.code(), Some(2));

    let cfg = write_config(dir.path(), "ok.json", &point_mass_config(&out, "ot_cfm", 0.0));
    assert_eq!(bridgekit(&["run", &cfg], Some("minus one")).status.code(), Some(2));
}

#[test]
fn sampling_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "run.json", &point_mass_config(&out, "ot_cfm", 0.0));
    assert!(bridgekit(&["run", &cfg], None).status.success());
    let ck = out.join("checkpoint");
    let ck = ck.to_str().unwrap();

    let empty = dir.path().join("empty.csv");
    let o = bridgekit(&["sample", ck, "--n", "0", "--direction", "fwd", "--out", empty.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&empty).unwrap(), "x_0\n");

    let full = dir.path().join("full.csv");
    let o = bridgekit(&["sample", ck, "--n", "25", "--out", full.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&full).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.lines().skip(1).all(|l| l.parse::<f64>().unwrap().is_finite()));

    let rev = dir.path().join("rev.csv");
    let o = bridgekit(&["sample", ck, "--n", "5", "--direction", "rev", "--out", rev.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reverse"));
}

#[test]
fn zero_drift_checkpoint_returns_its_source_samples() {
    let dir = tempfile::tempdir().unwrap();
    let text = point_mass_config(&dir.path().join("unused"), "ot_cfm", 0.0);
    let mut config = RunConfig::from_json(&text).unwrap();
    config.source = EndpointDistribution::standard_normal(1);
    let ck = Checkpoint {
        config,
        forward: DriftNetwork::zeros(1, &[4], Activation::Silu),
        reverse: None,
    };
    let path = dir.path().join("zero.ckpt");
    ck.save(&path).unwrap();
    let out = dir.path().join("zero.csv");
    let o = bridgekit(&["sample", path.to_str().unwrap(), "--n", "40", "--out", out.to_str().unwrap()], Some("9"));
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = checkpoint_start_points(&ck, 40, Direction::Forward, 9).unwrap();
    let want: Vec<String> = expected.points().column(0).iter().map(|&v| format_sig9(v)).collect();
    let got: Vec<String> = fs::read_to_string(&out).unwrap().lines().skip(1).map(str::to_string).collect();
    assert_eq!(got, want);
}

#[test]
fn datasets_are_written_with_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("moons.csv");
    let o = bridgekit(&["datasets", "--kind", "two-moons", "--n", "100", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("x_0,x_1"));
    assert_eq!(text.lines().count(), 101);
    let again = dir.path().join("again.csv");
    bridgekit(&["datasets", "--kind", "two-moons", "--n", "100", "--out", again.to_str().unwrap()], None);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    let bad = bridgekit(&["datasets", "--kind", "spiral", "--n", "3", "--out", "x.csv"], None);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fast_check_passes() {
    let o = bridgekit(&["check", "--fast"], None);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
