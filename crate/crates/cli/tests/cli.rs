use std::path::Path;
use std::process::{Command, Output};

fn m2ppo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m2ppo")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TRAIN_TOML: &str = "\
n_steps = 32
n_actors = 4
n_minibatches = 4
epochs = 2
total_steps = 256
train_levels = [101]
checkpoint_every = 1
";

const EVAL_TOML: &str = "\
levels = [101, 1]
episodes_per_level = 6
max_total_steps = 60
train_levels = [101]
";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.toml"), TRAIN_TOML).unwrap();
    std::fs::write(dir.path().join("eval.toml"), EVAL_TOML).unwrap();
    dir
}

#[test]
fn validate_pack_reports_each_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = m2ppo(&["validate-pack"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 13);

    let levels = env!("CARGO_MANIFEST_DIR").to_string() + "/../core/levels/pack";
    let o = m2ppo(&["validate-pack", &levels], dir.path());
    assert!(o.status.success());

    std::fs::write(dir.path().join("good.txt"), include_str!("../../core/levels/desk/mini.txt")).unwrap();
    std::fs::write(dir.path().join("bad.txt"), "id 5\nmoves 0\n").unwrap();
    let o = m2ppo(&["validate-pack", "."], dir.path());
    assert!(!o.status.success());
    let out = stdout(&o);
    assert!(out.contains("FAIL ./bad.txt"), "{out}");
    assert!(out.contains("PASS ./good.txt"), "{out}");
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn inspect_level_replays_actions() {
    let dir = tempfile::tempdir().unwrap();
    let level = env!("CARGO_MANIFEST_DIR").to_string() + "/../core/levels/desk/mini.txt";
    std::fs::write(dir.path().join("acts.txt"), "# first a cell outside the board\n0\n2 4\n").unwrap();
    let o = m2ppo(&["inspect-level", &level, "--actions-file", "acts.txt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("level 101"));
    assert!(out.contains("step 1 action 0 (0,0) valid false collected 0 completed false reward -0.5"));
    assert!(out.contains("step 2 action 30 (2,4)"));

    std::fs::write(dir.path().join("bad.txt"), "7 7 7\n").unwrap();
    let o = m2ppo(&["inspect-level", &level, "--actions-file", "bad.txt"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: actions line 1"));
}

#[test]
fn errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--config", "missing.toml"],
        vec!["eval", "--checkpoint", "missing.ckpt"],
        vec!["report", "."],
        vec!["baseline", "--levels", "4242"],
    ] {
        let o = m2ppo(&args, dir.path());
        assert!(!o.status.success(), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn train_eval_report_round_trip() {
    let dir = setup();
    let p = dir.path();
    let o = m2ppo(&["train", "--config", "train.toml", "--out-dir", "run"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(p.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(p.join("run/final.ckpt").exists());
    assert!(p.join("run/config.toml").exists());

    // extend the same run by one more update
    let o = m2ppo(
        &["train", "--checkpoint", "run/final.ckpt", "--out-dir", "run", "--total-steps", "384"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(p.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let o = m2ppo(&["eval", "--checkpoint", "run/final.ckpt", "--config", "eval.toml", "--out-dir", "ev"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let completion = std::fs::read_to_string(p.join("ev/completion.csv")).unwrap();
    assert_eq!(completion.lines().next().unwrap(), "level,seen,final,random");
    assert_eq!(completion.lines().count(), 3);
    for f in ["eval_report.json", "competence.csv", "histogram.csv"] {
        assert!(p.join("ev").join(f).exists(), "{f}");
    }

    std::fs::write(p.join("human.csv"), "level,completion\n1,0.75\n101,0.5\n").unwrap();
    let o = m2ppo(&["report", "ev", "--human-csv", "human.csv", "--out-dir", "merged"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let merged = std::fs::read_to_string(p.join("merged/completion.csv")).unwrap();
    assert!(merged.starts_with("level,seen,final,random,human\n"), "{merged}");
}

#[test]
fn baseline_writes_random_only() {
    let dir = setup();
    let o = m2ppo(&["baseline", "--config", "eval.toml", "--levels", "101", "--out-dir", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("random level 101"));
    assert!(dir.path().join("b/baseline_report.json").exists());
}
