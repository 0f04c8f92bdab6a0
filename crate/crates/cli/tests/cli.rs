use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn betacrit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betacrit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BETACRIT_PROBE__K_PROBE")
        .output()
        .expect("failed to launch betacrit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trajectory_csv_has_provenance_and_exact_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["toy", "unimodal", "--set", "toy.steps=50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("toy_unimodal_seed0.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# betacrit "));
    let hash_line = lines.iter().find(|l| l.starts_with("# config_hash: ")).unwrap();
    let hash = hash_line.trim_start_matches("# config_hash: ");
    assert_eq!(hash.len(), 64);
    let header = lines.iter().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(*header, "step,log_beta,log_beta_c,log_ratio,nc1,order_parameter");
    assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 51);

    let summary = json(&dir.path().join("toy_unimodal_summary.json"));
    assert_eq!(summary["config_hash"], hash);
    assert!(fs::read_to_string(dir.path().join("run_config.toml")).unwrap().contains(hash));
    let svg = fs::read_to_string(dir.path().join("toy_unimodal_seed0.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn unknown_config_key_is_named_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[probe]\nk_probe = 4\nlearning_rate = 0.1\n").unwrap();
    let o = betacrit(dir.path(), &["--config", cfg.to_str().unwrap(), "calibrate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("probe.learning_rate"), "{}", stderr(&o));
}

#[test]
fn unknown_section_and_wrong_type_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["calibrate", "--set", "nosuch.key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosuch.key"));
    let o = betacrit(dir.path(), &["calibrate", "--set", "calibrate.k=two"]);
    assert_eq!(o.status.code(), Some(2));
    let o = betacrit(dir.path(), &["calibrate", "--preset", "missing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn layering_order_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[sde]\ndt = 0.02\nsteps = 10\n").unwrap();
    let run = |extra: &[&str], env: Option<(&str, &str)>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_betacrit"));
        cmd.args(["--preset", "appendix-d3", "--config", cfg.to_str().unwrap()]).args(extra).arg("config");
        if let Some((k, v)) = env {
            cmd.env(k, v);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let base = run(&[], None);
    // Preset supplies modes, the file overrides dt.
    assert!(base.contains("sde.modes = 200\n"));
    assert!(base.contains("sde.dt = 0.02\n"));
    let env = run(&[], Some(("BETACRIT_SDE__STEPS", "20")));
    assert!(env.contains("sde.steps = 20\n"));
    let flag = run(&["--set", "sde.steps=30"], Some(("BETACRIT_SDE__STEPS", "20")));
    assert!(flag.contains("sde.steps = 30\n"));
    let hash = |s: &str| s.lines().last().unwrap().to_string();
    assert_eq!(hash(&base), hash(&run(&[], None)));
    assert_ne!(hash(&base), hash(&env));
}

#[test]
fn recorded_config_reproduces_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["escape", "fit", "--set", "escape.weighting=\"unit\""]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recorded = dir.path().join("run_config.toml");
    let first = json(&dir.path().join("escape_fit.json"))["config_hash"].clone();
    let again = tempfile::tempdir().unwrap();
    let o = betacrit(again.path(), &["--config", recorded.to_str().unwrap(), "escape", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&again.path().join("escape_fit.json"))["config_hash"], first);
}

#[test]
fn bundled_escape_table_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["escape", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("escape_fit.json"));
    let fit = &v["result"]["fit"];
    assert!((fit["power_law"]["intercept"].as_f64().unwrap() - 9.11).abs() < 0.01);
    assert!((fit["power_law"]["slope"].as_f64().unwrap() + 1.225).abs() < 0.005);
    assert!((fit["delta_aic"].as_f64().unwrap() - 19.26).abs() < 0.1);
}

#[test]
fn escape_fit_reads_levels_file() {
    let dir = tempfile::tempdir().unwrap();
    let levels = dir.path().join("levels.csv");
    // τ = 100 γ^-2 exactly, with a censored control.
    fs::write(
        &levels,
        "# hand-made\ngamma,tau_mean,tau_std,n_seeds,censored\n0,,,3,true\n0.5,400,40,3,false\n1,100,10,3,false\n2,25,2.5,3,false\n",
    )
    .unwrap();
    let o = betacrit(dir.path(), &["escape", "fit", "--input", levels.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("escape_fit.json"));
    let p = v["result"]["power_law_exponent"].as_f64().unwrap();
    assert!((p - 2.0).abs() < 1e-9, "exponent {p}");
}

#[test]
fn sweep_without_fittable_levels_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["escape", "sweep", "--set", "escape.gammas=[0.0]"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: no model fit"));
    let v = json(&dir.path().join("escape_summary.json"));
    assert!(v["result"]["fit"].is_null());
    assert_eq!(v["result"]["levels"][0]["n_escaped"], 0);
    let obs = fs::read_to_string(dir.path().join("escape_observations.csv")).unwrap();
    assert!(obs.contains("gamma,seed,tau,horizon,censored"));
}

#[test]
fn numerical_failure_exits_3_and_keeps_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["toy", "endogenous", "--set", "endogenous.encoder_lr=5.0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(dir.path().join("toy_endogenous_seed0.partial.csv").exists());
}

#[test]
fn io_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = betacrit(dir.path(), &["classify", "--input", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = betacrit(&blocker.join("sub"), &["escape", "fit"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn validation_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // The coupled simulator needs at least two spatial dimensions.
    let o = betacrit(dir.path(), &["sde", "coupled"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = betacrit(dir.path(), &["sde", "pitchfork", "--set", "sde.dt=10.0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = betacrit(dir.path(), &["toy", "bimodal", "--seeds", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn classify_exemplars_and_a_written_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["classify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("classification.json"));
    for item in v["result"].as_array().unwrap() {
        assert_eq!(item["class"], item["expected"], "{item}");
    }

    // A log written by one command is valid input to another.
    let o = betacrit(dir.path(), &["toy", "endogenous", "--set", "endogenous.steps=400"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = dir.path().join("toy_endogenous_seed0.csv");
    let o = betacrit(dir.path(), &["classify", "--input", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("classification.json"));
    assert!(v["result"][0]["class"].is_string());
}

#[test]
fn parallel_seeds_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["toy", "bimodal", "--seed", "3", "--seeds", "3", "--set", "toy.steps=300"];
    assert!(betacrit(a.path(), &args).status.success());
    assert!(betacrit(b.path(), &args).status.success());
    for seed in 3..6 {
        let name = format!("toy_bimodal_seed{seed}.csv");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    let v = json(&a.path().join("toy_bimodal_summary.json"));
    let seeds: Vec<u64> = v["result"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![3, 4, 5]);
}

#[test]
fn coupled_preset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["sde", "coupled", "--preset", "appendix-d3", "--set", "sde.steps=400"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("sde_coupled_summary.json"));
    assert!(v["result"]["prediction"]["expected_cosine"].is_number());
    let table = fs::read_to_string(dir.path().join("sde_coupled_seed0.csv")).unwrap();
    let rows = table.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 201);
}

#[test]
fn identity_covariance_calibrates_to_unit_beta_c() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["calibrate", "--set", "calibrate.source=\"identity\"", "--set", "data.n=400"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("calibrate_summary.json"));
    let row = &v["result"][0];
    assert_eq!(format!("{:.4}", row["beta_c_analytic"].as_f64().unwrap()), "1.0000");
    assert!(row["max_abs_error"].as_f64().unwrap() <= 1e-4);
    assert!(row["hessian_max_entry_gap"].as_f64().unwrap() <= 1e-4);
    assert!(fs::read_to_string(dir.path().join("calibrate_scan_seed0.svg")).unwrap().contains("<polyline"));
}

#[test]
fn endogenous_summary_reports_a_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["toy", "endogenous", "--set", "endogenous.steps=300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("toy_endogenous_summary.json"));
    assert!(v["result"][0]["delta0"].as_f64().unwrap() < 0.0);
    assert!(v["result"][0]["crossing_step"].is_u64());
}

#[test]
fn reverse_summary_tracks_beta_c() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["toy", "reverse"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("toy_reverse_summary.json"));
    let err = v["result"][0]["reverse_tracking_error"].as_f64().unwrap();
    assert!(err <= 0.04, "tracking error {err}");
}

#[test]
fn degenerate_hierarchy_second_event_is_the_cluster_split() {
    // With coincident sub-clusters each super-cluster is one isotropic blob,
    // which still splits at its own 1/σ²; the second event tracks that.
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["toy", "hierarchy", "--set", "hierarchy.sub_spacing=0.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("toy_hierarchy_summary.json"));
    let r = &v["result"][0];
    let bc2 = r["beta_c2"].as_f64().unwrap();
    assert!((bc2 - 4.0).abs() < 0.4, "within-cluster β_c {bc2}");
    if let Some(ratio) = r["second_event_ratio"].as_f64() {
        assert!((ratio - 1.0).abs() <= 0.35);
    }
}

#[test]
fn constant_nc1_is_no_arc() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from("step,log_beta,log_beta_c,log_ratio,nc1,order_parameter\n");
    for i in 0..40 {
        text.push_str(&format!("{i},,,{},0.5,\n", -1.0 + 0.05 * i as f64));
    }
    fs::write(&path, text).unwrap();
    let o = betacrit(dir.path(), &["classify", "--input", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("classification.json"))["result"][0]["class"], "no_arc");
}

#[test]
fn missing_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "step,log_ratio,order_parameter\n0,-1,0.1\n").unwrap();
    let o = betacrit(dir.path(), &["classify", "--input", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing column"), "{}", stderr(&o));
}

#[test]
fn synthetic_delayed_escape_is_recognised() {
    let dir = tempfile::tempdir().unwrap();
    let o = betacrit(dir.path(), &["classify", "--synthesize", "delayed_escape", "--seeds", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("classification.json"));
    for item in v["result"].as_array().unwrap() {
        assert_eq!(item["class"], "delayed_escape", "{item}");
    }
    assert!(dir.path().join("synthetic_delayed_escape_seed2.csv").exists());
    let o = betacrit(dir.path(), &["classify", "--synthesize", "zigzag"]);
    assert_eq!(o.status.code(), Some(2));
}
