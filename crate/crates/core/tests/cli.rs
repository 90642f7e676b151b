use std::path::Path;
use std::process::{Command, Output};

fn synergy(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synergy"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn scripted_checkpoint_evaluates_to_full_success() {
    let dir = tempfile::tempdir().unwrap();
    let o = synergy(&["scripted", "--out", "scripted.json"], dir.path());
    assert!(o.status.success());
    let o = synergy(
        &[
            "eval",
            "--checkpoint",
            "scripted.json",
            "--env",
            "bar-lift",
            "--episodes",
            "20",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 1.0);
}

#[test]
fn eval_on_the_wrong_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synergy(&["scripted", "--out", "p.json"], dir.path()).status.success());
    let o = synergy(&["eval", "--checkpoint", "p.json", "--env", "soccer"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pretrain_writes_model_dataset_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = synergy(
        &[
            "pretrain",
            "--env",
            "block-push",
            "--agent",
            "1",
            "--samples",
            "200",
            "--epochs",
            "2",
            "--out",
            "m.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("validation mse"));
    for f in ["m.json", "m.dataset.csv", "m.summary.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn train_then_plot_from_a_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "out_dir = \"runs\"\nmethods = [\"r2\", \"random\"]\nseeds = [0, 1]\n\n[env]\nname = \"reach\"\nn_agents = 2\n\n[train]\nworkers = 2\ntotal_env_steps = 40\npretrain_samples = 200\n";
    std::fs::write(dir.path().join("spec.toml"), spec).unwrap();
    let o = synergy(&["train", "spec.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 4);
    assert!(dir.path().join("runs/r2/lambda-10/seed-1/metrics.csv").exists());

    let o = synergy(&["plot", "runs", "--out", "plots"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("plots/reach-n2.svg").exists());
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing spec file: I/O.
    assert_eq!(synergy(&["train", "nope.toml"], dir.path()).status.code(), Some(1));
    // Unknown field: configuration.
    std::fs::write(
        dir.path().join("bad.toml"),
        "out_dir = \"r\"\nmethods = [\"r2\"]\nbogus = 1\n[env]\nname = \"reach\"\n",
    )
    .unwrap();
    assert_eq!(synergy(&["train", "bad.toml"], dir.path()).status.code(), Some(2));
    // Too many agents for the task.
    let o = synergy(
        &[
            "pretrain",
            "--env",
            "bar-lift",
            "--agents",
            "3",
            "--agent",
            "0",
            "--samples",
            "10",
            "--out",
            "m.json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    // Unparseable arguments.
    assert_eq!(synergy(&["eval"], dir.path()).status.code(), Some(2));
}

#[test]
fn shipped_experiment_specs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = synergy::harness::ExperimentSpec::from_toml(&std::fs::read_to_string(&path).unwrap());
        assert!(spec.is_ok(), "{}: {:?}", path.display(), spec.err());
        n += 1;
    }
    assert_eq!(n, 3);
}
