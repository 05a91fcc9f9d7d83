use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_neurostrike"));
    for var in ["WORKERS", "SEED", "SCALE", "OUT", "STIMULUS", "ATTACK"] {
        c.env_remove(format!("NEUROSTRIKE_{var}"));
    }
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = bin().output().unwrap();
    assert_eq!(code(&o), 1);
    let text = String::from_utf8_lossy(&o.stderr) + String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_flag_exits_1_with_usage() {
    let o = bin().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
}

#[test]
fn run_jam_cell_writes_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "run", "--stimulus", "flash", "--attack", "JAM", "--window", "600:700", "--fraction", "0.25",
            "--scale", "0.001", "--repetitions", "2", "--out", "out",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let exp = tmp.path().join("out/flash_JAM_600-700_25");
    for f in ["manifest.json", "impact_report.csv", "impact_report.json", "spikes_baseline.csv", "spikes_rep00.csv", "spikes_rep01.csv"] {
        assert!(exp.join(f).is_file(), "{f}");
    }
    let m = manifest(&exp);
    assert_eq!(m["runs"].as_array().unwrap().len(), 3);
    assert!(stdout(&o).contains("interval 6"));
}

#[test]
fn attack_files_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("type_attack.txt"), "FLO\n").unwrap();
    fs::write(tmp.path().join("FLO_attributes.txt"), "t_attack_ms=1300\ntarget_fraction=0.25\n").unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "run", "--type-attack-file", "type_attack.txt", "--fraction", "0.5", "--scale", "0.001",
            "--repetitions", "1", "--no-spikes", "--out", "out",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&tmp.path().join("out/flash_FLO_1300_50"));
    assert_eq!(m["config"]["attack"]["timing"]["t_attack"], 1300.0);
    assert_eq!(m["config"]["attack"]["target_fraction"], 0.5);
    assert!(!tmp.path().join("out/flash_FLO_1300_50/spikes_baseline.csv").exists());
}

#[test]
fn config_file_keys_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "topology": {"source": "path", "path": "unused"},
        "stimulus": {"family": "movie"},
        "attack": {"timing": {"kind": "JAM", "t0": 400.0, "t1": 500.0}, "target_fraction": 0.5, "selection_seed": 0},
        "repetitions": 1,
        "output_dir": "from_file"
    });
    // --scale replaces the file's topology source.
    fs::write(tmp.path().join("exp.json"), cfg.to_string()).unwrap();
    let o = run_in(tmp.path(), &["run", "--config", "exp.json", "--scale", "0.001", "--seed", "4", "--out", "flagged"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&tmp.path().join("flagged/movie_JAM_400-500_50"));
    assert_eq!(m["config"]["base_seed"], 4);
    assert!(!tmp.path().join("from_file").exists());
}

#[test]
fn environment_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(tmp.path())
        .env("NEUROSTRIKE_SCALE", "0.001")
        .env("NEUROSTRIKE_OUT", "envout")
        .args(["run", "--attack", "FLO", "--instant", "625", "--repetitions", "1", "--no-spikes"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&tmp.path().join("envout/flash_FLO_625_25"));
    assert_eq!(m["n_neurons"], 231);
}

#[test]
fn configuration_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--attack", "FLO", "--instant", "625.1", "--scale", "0.001"][..],
        &["run", "--attack", "JAM", "--window", "700:600", "--scale", "0.001"],
        &["run", "--attack", "JAM", "--scale", "0.001"],
        &["run", "--attack", "XYZ", "--scale", "0.001"],
        &["run", "--stimulus", "noise", "--scale", "0.001"],
        &["run", "--scale", "2"],
        &["run", "--config", "missing.json"],
    ] {
        let o = run_in(tmp.path(), args);
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn runtime_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), "").unwrap();
    let o = run_in(
        tmp.path(),
        &["run", "--attack", "FLO", "--instant", "625", "--scale", "0.001", "--repetitions", "1", "--out", "blocker"],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn report_recomputes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(
        tmp.path(),
        &["run", "--attack", "FLO", "--instant", "625", "--scale", "0.001", "--repetitions", "2", "--out", "out"],
    );
    assert_eq!(code(&o), 0);
    let exp = tmp.path().join("out/flash_FLO_625_25");
    let before = fs::read(exp.join("impact_report.csv")).unwrap();
    fs::remove_file(exp.join("impact_report.csv")).unwrap();
    let o = run_in(tmp.path(), &["report", "out/flash_FLO_625_25"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(exp.join("impact_report.csv")).unwrap(), before);
    assert_eq!(code(&run_in(tmp.path(), &["report", "."])), 1);
}

#[test]
fn topology_and_stimulus_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(tmp.path(), &["topology", "build", "--n-neurons", "50", "--out", "topo"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["neurons.csv", "synapses.csv", "topology.json"] {
        assert!(tmp.path().join("topo").join(f).is_file());
    }
    let o = run_in(tmp.path(), &["stimulus", "gen", "--stimulus", "gratings", "--scale", "0.001", "--out", "stim"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("stim"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 3, "{names:?}");
    assert!(names[0].starts_with("bkg_trial_") && names[1] == "lgn_trial_9.csv" && names[2] == "timeline.json");
    let o = run_in(tmp.path(), &["stimulus", "gen", "--stimulus", "flash", "--bkg-trial", "3", "--out", "bad"]);
    assert_eq!(code(&o), 1);

    let o = run_in(
        tmp.path(),
        &["run", "--topology", "topo", "--attack", "JAM", "--window", "600:700", "--repetitions", "1", "--out", "out"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&tmp.path().join("out/flash_JAM_600-700_25"))["n_neurons"], 50);
}

#[test]
fn small_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "grid", "--scale", "0.001", "--repetitions", "1", "--stimuli", "flash", "--fractions", "0.5",
            "--no-spikes", "--out", "g",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(tmp.path().join("g/grid_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);
}
