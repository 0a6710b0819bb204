use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
seed = 4

[train]
episodes_per_update = 2
total_updates = 3

[train.world]
n_robots = 3
n_goals = 3
arena_half_width = 2.0
max_steps = 15
max_action = 0.2
goal_obs = 2
robot_obs = 1

[train.policy]
hidden = [4]
order = 1

[eval]
episodes = 3
"#;

fn gpg(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gpg"));
    cmd.args(args).env_remove("GPG_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("GPG_OUT_DIR", dir);
    }
    cmd.output().expect("gpg runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Train the tiny config into `<dir>/<name>` and return the checkpoint path.
fn train_tiny(dir: &TempDir, name: &str) -> PathBuf {
    let cfg = write(dir, "tiny.toml", TINY);
    let out = dir.path().join(name);
    let o = gpg(&["train", s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("checkpoint.toml")
}

/// The tiny world scaled up to `n` robots, with extra top-level text.
fn large_config(n: usize, extra: &str) -> String {
    TINY.replace("n_robots = 3", &format!("n_robots = {n}"))
        .replace("n_goals = 3", &format!("n_goals = {n}"))
        .replace("arena_half_width = 2.0", "arena_half_width = 4.0")
        + extra
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let run = ck.parent().unwrap();
    let checkpoint = fs::read_to_string(&ck).unwrap();
    assert!(checkpoint.starts_with("# gpg checkpoint v1\n"));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("# gpg train-log v1\n"));
    assert_eq!(log.lines().count(), 2 + 3);
    let manifest = fs::read_to_string(run.join("manifest.toml")).unwrap();
    assert!(manifest.starts_with("# gpg manifest v1\n"));
    for key in [
        "command = \"train\"",
        "seed = 4",
        "config_sha256",
        "started",
        "finished",
    ] {
        assert!(manifest.contains(key), "{key} missing from\n{manifest}");
    }
    assert!(manifest.contains("file = \"checkpoint.toml\""));
    assert!(manifest.contains("file = \"train_log.csv\""));
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let a = train_tiny(&dir, "a");
    let b = train_tiny(&dir, "b");
    for name in ["checkpoint.toml", "train_log.csv"] {
        let fa = fs::read(a.with_file_name(name)).unwrap();
        let fb = fs::read(b.with_file_name(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs");
    }
}

#[test]
fn malformed_config_exits_1_without_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "bad.toml",
        "seed = 1\n[train.world]\ncoverage_radius = -0.5\n",
    );
    let out = dir.path().join("never");
    let o = gpg(&["train", s(&cfg), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("train.world.coverage_radius"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bad.toml", "seed = 1\n[train]\nlearning_rat = 0.1\n");
    let o = gpg(&["train", s(&cfg), "--out", s(&dir.path().join("x"))], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn seed_comes_from_flag_or_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "noseed.toml", &TINY.replace("seed = 4", ""));
    let out = dir.path().join("x");
    let o = gpg(&["train", s(&cfg), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));
    assert!(!out.exists());

    let o = gpg(&["train", s(&cfg), "--out", s(&out), "--seed", "9"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 9"));
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "tiny.toml", TINY);
    let env_dir = dir.path().join("from_env");
    let o = gpg(&["train", s(&cfg)], Some(&env_dir));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("checkpoint.toml").exists());

    let flag_dir = dir.path().join("from_flag");
    let o = gpg(&["train", s(&cfg), "--out", s(&flag_dir)], Some(&env_dir));
    assert!(o.status.success());
    assert!(flag_dir.join("manifest.toml").exists());
}

#[test]
fn eval_prints_report_and_dumps_trajectories() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let cfg = dir.path().join("tiny.toml");
    let out = dir.path().join("eval");
    let o = gpg(&["eval", s(&ck), s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("episodes = 3"));
    assert!(text.contains("coverage_rate = "));

    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("# gpg trajectories v1"));
    assert_eq!(lines.next(), Some("episode,step,robot,x,y,reward,covered"));
    assert!(lines.count() >= 3 * 3);
    let goals = fs::read_to_string(out.join("goals.csv")).unwrap();
    assert_eq!(goals.lines().count(), 2 + 3 * 3);
    assert!(fs::read_to_string(out.join("eval_report.txt"))
        .unwrap()
        .starts_with("# gpg eval-report v1\n"));
}

#[test]
fn eval_with_zero_episodes_is_empty() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let cfg = dir.path().join("tiny.toml");
    let o = gpg(
        &[
            "eval",
            s(&ck),
            s(&cfg),
            "--episodes",
            "0",
            "--out",
            s(&dir.path().join("e")),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("episodes = 0"));
    assert!(stdout(&o).contains("coverage_rate = nan"));
}

#[test]
fn eval_rejects_other_sensing() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let cfg = write(
        &dir,
        "wide.toml",
        &TINY.replace("goal_obs = 2", "goal_obs = 3"),
    );
    let o = gpg(
        &["eval", s(&ck), s(&cfg), "--out", s(&dir.path().join("e"))],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("features"), "{}", stderr(&o));
}

#[test]
fn transfer_to_a_larger_swarm() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let cfg = write(&dir, "large.toml", &large_config(10, ""));
    let out = dir.path().join("t");
    let o = gpg(
        &[
            "transfer",
            s(&ck),
            s(&cfg),
            "--formation",
            "circle:2.5",
            "--out",
            s(&out),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("transfer_report.txt").exists());
    let goals = fs::read_to_string(out.join("goals.csv")).unwrap();
    assert_eq!(goals.lines().count(), 2 + 3 * 10);
}

#[test]
fn transfer_rejects_other_topology() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let extra = "\n[train.graph]\nconstruction = { kind = \"k_nearest\", k = 2 }\n";
    let cfg = write(&dir, "large.toml", &large_config(10, extra));
    let o = gpg(
        &[
            "transfer",
            s(&ck),
            s(&cfg),
            "--out",
            s(&dir.path().join("t")),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("topology"), "{}", stderr(&o));
}

#[test]
fn explicit_formation_with_wrong_goal_count() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let extra = "\n[eval.formation]\nkind = \"explicit\"\ngoals = [[0.0, 0.0], [1.0, 1.0]]\n";
    let cfg = write(
        &dir,
        "large.toml",
        &(large_config(10, "").replace("[eval]\nepisodes = 3\n", "") + extra),
    );
    let o = gpg(
        &[
            "transfer",
            s(&ck),
            s(&cfg),
            "--out",
            s(&dir.path().join("t")),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("eval.formation"), "{}", stderr(&o));
}

const FORMATIONS: &str = r#"
[[formations]]
name = "F1"
formation = { kind = "circle", radius = 0.8 }

[[formations]]
name = "F2"
formation = { kind = "circle", radius = 1.2 }

[[formations]]
name = "F3"
formation = { kind = "circle", radius = 1.6 }
"#;

#[test]
fn compare_writes_one_row_per_formation() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let cfg = write(&dir, "cmp.toml", &format!("{TINY}{FORMATIONS}"));
    let out = dir.path().join("c");
    let o = gpg(&["compare", s(&ck), s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# gpg comparison v1");
    assert_eq!(
        lines[1],
        "formation,n_robots,capt_time_s,gpg_time_s,gap_s,gpg_coverage"
    );
    assert_eq!(lines.len(), 5);
    for (row, name) in lines[2..].iter().zip(["F1", "F2", "F3"]) {
        assert!(row.starts_with(&format!("{name},3,")), "{row}");
    }

    let o = gpg(
        &[
            "compare",
            s(&ck),
            s(&cfg),
            "--formations",
            "F2",
            "--out",
            s(&out),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("F2,"));
}

#[test]
fn compare_rejects_obstacles() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let text = format!("{TINY}{FORMATIONS}").replace(
        "robot_obs = 1\n",
        "robot_obs = 1\nobstacle_obs = 0\nobstacles = [{ center = [1.5, 1.5], radius = 0.2 }]\n",
    );
    let cfg = write(&dir, "cmp.toml", &text);
    let out = dir.path().join("c");
    let o = gpg(&["compare", s(&ck), s(&cfg), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("obstacles"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn inputs_are_not_modified() {
    let dir = TempDir::new().unwrap();
    let ck = train_tiny(&dir, "run");
    let cfg = write(&dir, "cmp.toml", &format!("{TINY}{FORMATIONS}"));
    let before = (fs::read(&ck).unwrap(), fs::read(&cfg).unwrap());
    let out = dir.path().join("o");
    assert!(gpg(&["eval", s(&ck), s(&cfg), "--out", s(&out)], None)
        .status
        .success());
    assert!(gpg(&["compare", s(&ck), s(&cfg), "--out", s(&out)], None)
        .status
        .success());
    assert_eq!(before, (fs::read(&ck).unwrap(), fs::read(&cfg).unwrap()));
}

#[test]
fn missing_checkpoint_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "tiny.toml", TINY);
    let o = gpg(
        &[
            "eval",
            s(&dir.path().join("nope.toml")),
            s(&cfg),
            "--out",
            s(&dir.path().join("e")),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
}
