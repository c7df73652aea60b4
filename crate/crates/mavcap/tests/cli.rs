use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mavcap::checkpoint;

fn mavcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mavcap")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMOKE_TRAIN: &str = "
seed = 3
[ppo]
hidden = 16
num_envs = 2
steps_per_env = 32
minibatch_size = 32
epochs_per_batch = 1
iterations = 2
eval_interval = 2
eval_episodes = 2
";

const SHORT_RL_EVAL: &str = "
seed = 5
[env]
max_steps = 40
[scenario]
trials = 6
methods = [\"rl\"]
jitter = [0.5, 0.5, 0.5]
";

#[test]
fn plan_writes_the_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "plan.toml", "[scenario]\nstarts = [[0.0, 0.0, 2.0]]\ntrials = 1\n");
    let out = dir.path().join("out");
    let o = mavcap(&["plan", "--config", s(&cfg), "--out", s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "config.echo",
        "solution.json",
        "trajectories/plan_000_mav.csv",
        "trajectories/plan_000_ball.csv",
        "trajectories/exec_000_mav.csv",
        "trajectories/exec_000_ball.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol[0]["feasible"], true);
    assert_eq!(sol[0]["execution"]["success"], true);
    let ball = fs::read_to_string(out.join("trajectories/plan_000_ball.csv")).unwrap();
    assert_eq!(ball.lines().next().unwrap(), "t,px,py,pz,vx,vy,vz,w_b");
    assert_eq!(ball.lines().count(), 1 + 21);
    let mav = fs::read_to_string(out.join("trajectories/plan_000_mav.csv")).unwrap();
    assert_eq!(mav.lines().count(), 1 + 21);
    // the launch state carries no control
    assert!(mav.lines().last().unwrap().ends_with(",,,,"));
}

#[test]
fn infeasible_plan_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[top]\nmax_time = 0.02\nmax_replans = 0\n[scenario]\nstarts = [[-5.0, 0.0, 4.0]]\ntrials = 1\n",
    );
    let out = dir.path().join("out");
    let o = mavcap(&["plan", "--config", s(&cfg), "--out", s(&out), "--threads", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"));
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol[0]["feasible"], false);
}

#[test]
fn missing_config_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mavcap(&["plan", "--config", s(&dir.path().join("absent.toml")), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn replan_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "plan.toml",
        "[top]\nreplan_period = 0.3\n[scenario]\nstarts = [[0.0, 0.0, 6.0]]\ntrials = 1\n",
    );
    let out = dir.path().join("out");
    let o = mavcap(&["plan", "--config", s(&cfg), "--out", s(&out), "--replan", "0.1", "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = mavcap::RunConfig::from_toml(&fs::read_to_string(out.join("config.echo")).unwrap()).unwrap();
    assert_eq!(echo.top.replan_period, 0.1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "[ppo]\nlearning_rte = 0.1\n");
    let o = mavcap(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rte"), "{}", stderr(&o));
}

#[test]
fn occupied_output_directory_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", SMOKE_TRAIN);
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let o = mavcap(&["train", "--config", s(&cfg), "--out", s(&out), "--threads", "1"]);
    assert!(!o.status.success());
    assert!(out.join("keep.txt").exists());
    let o = mavcap(&["train", "--config", s(&cfg), "--out", s(&out), "--threads", "1", "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("keep.txt").exists());
    assert!(out.join("log.csv").is_file());
}

#[test]
fn smoke_train_checkpoint_feeds_eval_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = write(dir.path(), "train.toml", SMOKE_TRAIN);
    let run = dir.path().join("run");
    let o = mavcap(&["train", "--config", s(&train_cfg), "--out", s(&run), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("iteration,env_steps,mean_reward,episodes,eval_success,"));
    let ckpt = run.join("checkpoints/final.ckpt");
    assert!(run.join("checkpoints/iter_00002.ckpt").is_file());
    assert_eq!(checkpoint::load(&ckpt).unwrap().hidden(), 16);

    let eval_cfg = write(dir.path(), "eval.toml", SHORT_RL_EVAL);
    let (a, b) = (dir.path().join("eval_a"), dir.path().join("eval_b"));
    for (out, seed) in [(&a, "5"), (&b, "6")] {
        let o = mavcap(&[
            "eval",
            "--config",
            s(&eval_cfg),
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(out),
            "--seed",
            seed,
            "--threads",
            "1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(fs::read_to_string(out.join("trials.csv")).unwrap().lines().count(), 7);
        assert!(out.join("summary.json").is_file());
    }

    let stats = dir.path().join("stats");
    let o = mavcap(&[
        "stats",
        s(&a.join("trials.csv")),
        s(&b.join("trials.csv")),
        "--out",
        s(&stats),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(stats.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trials"], 12);
    assert_eq!(summary["methods"][0]["method"], "rl");
    assert!(stats.join("distributions.csv").is_file());
}

#[test]
fn eval_rows_match_the_trial_count() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let net = mavcap_core::ppo::PolicyNet::zeros(8).unwrap();
    checkpoint::save(&net, &ckpt).unwrap();
    let cfg = write(dir.path(), "eval.toml", "[env]\nmax_steps = 5\n[scenario]\nmethods = [\"rl\"]\n");
    let out = dir.path().join("out");
    let o = mavcap(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--trials", "300", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("trials.csv")).unwrap().lines().count(), 301);
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let mut bytes = checkpoint::encode(&mavcap_core::ppo::PolicyNet::zeros(8).unwrap());
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(&ckpt, bytes).unwrap();
    let cfg = write(dir.path(), "eval.toml", SHORT_RL_EVAL);
    let out = dir.path().join("out");
    let o = mavcap(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn eval_without_checkpoint_explains_itself() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "eval.toml", SHORT_RL_EVAL);
    let o = mavcap(&["eval", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--checkpoint"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_step_logs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    checkpoint::save(&mavcap_core::ppo::PolicyNet::zeros(8).unwrap(), &ckpt).unwrap();
    let cfg = write(
        dir.path(),
        "sim.toml",
        "[env]\nmax_steps = 30\n[scenario]\nstarts = [[0.0, 0.0, 6.0]]\ntrials = 1\nmethods = [\"top\", \"rl\"]\n",
    );
    let out = dir.path().join("out");
    let o = mavcap(&["simulate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rl = fs::read_to_string(out.join("trajectories/rl_000.csv")).unwrap();
    assert!(rl.starts_with("step,t,px,py,pz,"));
    assert_eq!(rl.lines().count(), 31);
    assert!(out.join("trajectories/top_000.csv").is_file());
    assert!(out.join("trajectories/top_000_ball.csv").is_file());
    let eps: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("episodes.json")).unwrap()).unwrap();
    assert_eq!(eps.as_array().unwrap().len(), 2);
    assert_eq!(eps[0]["outcome"], "captured");
    assert_eq!(eps[1]["outcome"], "timeout");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = write(dir.path(), "train.toml", SMOKE_TRAIN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mavcap(&["train", "--config", s(&train_cfg), "--out", s(out), "--threads", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["log.csv", "checkpoints/final.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
