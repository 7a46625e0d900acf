use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 2] = ["--set", "model.hidden=[8,8]"];

fn ebmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebmlab"))
        .args(args)
        .env_remove("EBMLAB_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn params(path: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&read(path)).unwrap();
    v["parameters"].clone()
}

/// Trains an untrained-but-valid unconditional energy model with 0 steps.
fn fresh_checkpoint(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("fresh");
    let o = ebmlab(&["train", "--steps", "0", "--out", s(&out), SMALL[0], SMALL[1]]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("checkpoint.json")
}

#[test]
fn zero_step_training_keeps_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ebmlab(&["train", "--loss", "delta", "--task", "conditional", "--steps", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(params(&out.join("init.json")), params(&out.join("checkpoint.json")));
    for f in ["config.json", "metrics.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = ebmlab(&[
        "train", "--task", "conditional", "--loss", "nce", "--steps", "120", "--seed", "3", "--threads", "1",
        "--set", "train.eval_every=40", "--set", "train.checkpoint_every=40", "--set", "train.lr=1e-3",
        SMALL[0], SMALL[1], "--out", s(&a),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = a.join("config.json");
    let o = ebmlab(&["train", "--config", s(&cfg), "--out", s(&b), "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.csv",
        "checkpoint.json",
        "init.json",
        "checkpoints/checkpoint_000040.json",
        "checkpoints/checkpoint_000120.json",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(read(a.join("metrics.csv")).lines().count(), 1 + 4);
}

#[test]
fn resume_continues_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let args = ["--set", "train.eval_every=25", "--set", "train.checkpoint_every=25", SMALL[0], SMALL[1]];
    let mut a = vec!["train", "--steps", "50", "--out", s(&full)];
    a.extend(args);
    assert_eq!(code(&ebmlab(&a)), 0);
    let resumed = dir.path().join("resumed");
    let ck = full.join("checkpoints/checkpoint_000025.json");
    let mut a = vec!["train", "--steps", "50", "--out", s(&resumed), "--resume", s(&ck)];
    a.extend(args);
    let o = ebmlab(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(full.join("checkpoint.json")), read(resumed.join("checkpoint.json")));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = ebmlab(&["train", "--loss", "nce", "--score-path", "predictive", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("score_path"));

    assert_eq!(code(&ebmlab(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&ebmlab(&["frobnicate"])), 2);
    let o = ebmlab(&["train", "--set", "train.lr_typo=1", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.lr_typo"));
    let o = ebmlab(&["train", "--set", "train.batch=0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch"));
    assert_eq!(code(&ebmlab(&["train", "--config", "/no/such/config.json"])), 2);

    let missing = dir.path().join("missing.json");
    for cmd in ["sample", "eval"] {
        let o = ebmlab(&[cmd, "--checkpoint", s(&missing), "--out", s(&out)]);
        assert_eq!(code(&o), 2, "{cmd}");
    }
}

#[test]
fn help_lists_every_flag() {
    let common = ["--config", "--set", "--seed", "--out", "--threads"];
    let specific: [(&str, &[&str]); 4] = [
        ("train", &["--loss", "--score-path", "--task", "--steps", "--lr", "--resume"]),
        ("sample", &["--checkpoint", "--method", "--steps", "--rho", "--alpha", "--beta", "--sigma", "--input", "--n", "--trajectory"]),
        ("eval", &["--checkpoint", "--suite", "--draws", "--steps", "--rho"]),
        ("gradcheck", &["--checkpoint", "--h", "--tol"]),
    ];
    for (cmd, flags) in specific {
        let o = ebmlab(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8_lossy(&o.stdout);
        for f in common.iter().chain(flags) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn zero_step_langevin_returns_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fresh_checkpoint(dir.path());
    let input = dir.path().join("in.csv");
    std::fs::write(&input, "y_0,y_1\n0.5,-1.25\n3,0.1\n-2,2\n").unwrap();
    let out = dir.path().join("s");
    let o = ebmlab(&["sample", "--checkpoint", s(&ck), "--method", "langevin", "--steps", "0", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(out.join("samples.csv")), read(&input));
}

#[test]
fn unit_denoise_file_matches_langevin_file() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fresh_checkpoint(dir.path());
    let lang = dir.path().join("lang");
    let den = dir.path().join("den");
    let common = ["--checkpoint", s(&ck), "--steps", "30", "--rho", "0.05", "--n", "50", "--trajectory"];
    let mut a = vec!["sample", "--method", "langevin", "--out", s(&lang)];
    a.extend(common);
    assert_eq!(code(&ebmlab(&a)), 0);
    let mut a = vec!["sample", "--method", "denoise", "--alpha", "1", "--beta", "0.05", "--sigma", "0", "--out", s(&den)];
    a.extend(common);
    let o = ebmlab(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["samples.csv", "trajectory.csv"] {
        assert_eq!(read(lang.join(f)), read(den.join(f)), "{f}");
    }
    assert_eq!(read(lang.join("samples.csv")).lines().count(), 51);
}

#[test]
fn one_step_refines_each_input_row_once() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("delta");
    let o = ebmlab(&["train", "--loss", "delta", "--task", "conditional", "--steps", "0", "--out", s(&run), SMALL[0], SMALL[1]]);
    assert_eq!(code(&o), 0);
    let out = dir.path().join("s");
    let o = ebmlab(&[
        "sample", "--checkpoint", s(&run.join("checkpoint.json")), "--method", "one-step", "--n", "7",
        "--set", "data.kind=conditional", "--set", "sample.init=base", "--trajectory", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let samples = read(out.join("samples.csv"));
    assert_eq!(samples.lines().next(), Some("x_0,x_1,y_0,y_1"));
    assert_eq!(samples.lines().count(), 8);
    // initial and refined iterate per chain
    assert_eq!(read(out.join("trajectory.csv")).lines().count(), 1 + 2 * 7);
}

#[test]
fn eval_suites_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fresh_checkpoint(dir.path());
    let out = dir.path().join("e");
    let o = ebmlab(&["eval", "--checkpoint", s(&ck), "--suite", "gradcheck,hutchinson", "--draws", "10000", "--out", s(&out), SMALL[0], SMALL[1]]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    assert!(report["metrics"]["hutchinson_abs_z"]["value"].as_f64().unwrap() <= 3.0);
    assert_eq!(report["metrics"]["loss_grad_rel_error"]["passed"], true);

    // an untrained model misses the score-field threshold
    let o = ebmlab(&["eval", "--checkpoint", s(&ck), "--suite", "score-field", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("score_mse_ratio"));
    assert!(out.join("score_field.csv").is_file());

    // step-sweep needs conditional data
    let o = ebmlab(&["eval", "--checkpoint", s(&ck), "--suite", "step-sweep", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn step_sweep_mirrors_the_step_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("delta");
    let o = ebmlab(&["train", "--loss", "delta", "--task", "conditional", "--steps", "300", "--lr", "1e-3", "--out", s(&run), SMALL[0], SMALL[1]]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("sweep");
    let o = ebmlab(&[
        "eval", "--checkpoint", s(&run.join("checkpoint.json")), "--suite", "step-sweep", "--steps", "0,1,10,50,100",
        "--set", "data.kind=conditional", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    for k in ["mse_step_000", "mse_step_001", "mse_step_010", "mse_step_050", "mse_step_100"] {
        assert!(report["metrics"].get(k).is_some(), "{k}");
    }
    assert_eq!(report["metrics"]["one_step_beats_initialisation"]["value"], 1.0);
}

#[test]
fn gradcheck_on_a_fresh_initialisation_passes() {
    let dir = tempfile::tempdir().unwrap();
    for loss in ["ssm", "sm", "nce", "delta", "fm"] {
        let out = dir.path().join(loss);
        let o = ebmlab(&["gradcheck", "--set", &format!("train.loss={loss}"), "--set", "data.kind=conditional", "--out", s(&out), SMALL[0], SMALL[1]]);
        assert_eq!(code(&o), 0, "{loss}: {}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_abort_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebmlab(&[
        "train", "--steps", "50", "--lr", "1e12", "--set", "train.optimizer=sgd", "--set", "train.loss=sm",
        "--set", "model.activation=softplus", SMALL[0], SMALL[1], "--out", s(&dir.path().join("boom")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn output_directory_comes_from_the_environment_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_ebmlab"))
        .args(["train", "--steps", "0", SMALL[0], SMALL[1]])
        .env("EBMLAB_OUT", &env_out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_out.join("checkpoint.json").is_file());
    let cfg: serde_json::Value = serde_json::from_str(&read(env_out.join("config.json"))).unwrap();
    assert_eq!(cfg["out"], s(&env_out));
}
