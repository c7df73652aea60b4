use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use approx::relative_eq;
use mavcap::RayonExecutor;
use mavcap_core::ballistics::{propagate_ball, BallParams, BallState};
use mavcap_core::dynamics::{integrate_step, ControlInput, Integrator, MavParams, MavState, Vec3};
use mavcap_core::env::{compute_reward, CaptureEnv, EpisodeConfig, Physics};
use mavcap_core::harness::{median, run_trial, MissCorrelations, Scenario, TrialMethod, TrialRecord};
use mavcap_core::launcher::{ball_initial_state, launch_kinematics, LauncherParams};
use mavcap_core::optim::SolveStatus;
use mavcap_core::planner::{solve, ExecutionOptions, PlanProblem, PlanSolution, TopConfig};
use mavcap_core::ppo::{evaluate, loss_and_grad, train, EnvWorker, Executor, PolicyNet, TrainConfig};
use mavcap_core::target::TargetMotion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    lines: Vec<String>,
    failed: usize,
}

impl Report {
    fn check(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        let line = format!("criterion {n:2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        // written past the test harness capture so the report always shows
        let _ = writeln!(std::io::stderr(), "{line}");
        self.lines.push(line);
        self.failed += usize::from(!ok);
    }
}

fn problem(start: Vec3, target: TargetMotion) -> PlanProblem {
    PlanProblem::new(
        MavState::at_rest(start),
        0.0,
        target,
        MavParams::default(),
        LauncherParams::default(),
        BallParams::default(),
        TopConfig::default(),
    )
    .unwrap()
}

fn scenario_one_starts() -> [Vec3; 3] {
    [Vec3::new(-5.0, 0.0, 4.0), Vec3::new(0.0, 0.0, 6.0), Vec3::new(0.0, 0.0, 2.0)]
}

// 1e-5 m over 1 s with dt = 0.01
fn physics_oracles() -> (bool, String) {
    let mav = MavParams::default();
    let p0 = Vec3::new(1.0, -2.0, 30.0);
    let v0 = Vec3::new(0.5, 0.25, 3.0);
    let mut x = MavState::at_rest(p0);
    x.v = v0;
    let free = ControlInput::new(0.0, Vec3::zeros());
    for _ in 0..100 {
        x = integrate_step(&x, &free, 0.01, &mav, Integrator::Rk4).unwrap();
    }
    let parabola = |g: Vec3, t: f64| p0 + v0 * t + g * (0.5 * t * t);
    let mav_err = (x.p - parabola(mav.gravity, 1.0)).norm();

    let ball = BallParams::vacuum();
    let b0 = BallState {
        p: p0,
        v: v0,
        spin: 1988.8,
        axis: Vec3::y(),
    };
    let traj = propagate_ball(&b0, 1.0, 0.01, &ball, Integrator::Rk4).unwrap();
    let ball_err = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| (s.p - parabola(ball.gravity, *t)).norm())
        .fold(0.0, f64::max);
    (
        mav_err <= 1e-5 && ball_err <= 1e-5,
        format!("mav error {mav_err:.2e} m, ball error {ball_err:.2e} m (tol 1e-5)"),
    )
}

// 30-digit evaluation of the wheel contact chain for the default launcher
fn launcher_chain() -> (bool, String) {
    let k = launch_kinematics(&LauncherParams::default()).unwrap();
    let pairs = [
        ("roll distance", k.roll_distance, 0.027367864366808017),
        ("roll angle", k.roll_angle, 1.00162398594272),
        ("contact time", k.contact_time, 1.1850086021415604e-3),
        ("v_launch", k.v_launch, 23.095076539823015),
        ("spin", k.spin, 1988.8145247267041),
    ];
    let worst = pairs.iter().map(|(_, a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    let ok = pairs.iter().all(|(_, a, b)| relative_eq!(*a, *b, max_relative = 1e-9, epsilon = 0.0));
    (
        ok,
        format!("v_launch {:.9} m/s, spin {:.6} rad/s, worst relative error {worst:.1e} (tol 1e-9)", k.v_launch, k.spin),
    )
}

fn top_feasibility() -> (bool, String, Vec<(PlanProblem, PlanSolution)>) {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut solved = Vec::new();
    for s in scenario_one_starts() {
        let prob = problem(s, TargetMotion::default());
        let plan = solve(&prob, None);
        let t_c = plan.t1 + plan.t2;
        ok &= plan.status == SolveStatus::Converged && plan.terminal_miss <= 0.1 && t_c < 5.0;
        parts.push(format!("{:?}: {:?} miss {:.3} t_c {:.3}", [s.x, s.y, s.z], plan.status, plan.terminal_miss, t_c));
        solved.push((prob, plan));
    }
    (ok, parts.join("; ") + " (miss <= 0.1 m, t_c < 5 s)", solved)
}

fn self_consistency(solved: &[(PlanProblem, PlanSolution)]) -> (bool, String) {
    let mut failures = Vec::new();
    for (i, (prob, plan)) in solved.iter().enumerate() {
        let dt = plan.t1 / prob.config.n1 as f64;
        let mut x = prob.x0;
        let parity = plan.controls.iter().enumerate().all(|(k, u)| {
            x = integrate_step(&x, u, dt, &prob.mav, Integrator::Euler).unwrap();
            plan.mav_traj[k + 1] == x
        });
        let handoff = plan.ball_traj.states[0] == ball_initial_state(plan.launch_state(), &prob.launcher, &prob.launch);
        let h = &plan.stats.merit_history;
        let monotone = !h.is_empty() && h.windows(2).all(|w| w[1] <= w[0]);
        if !(parity && handoff && monotone) {
            failures.push(format!("plan {i}: parity {parity} hand-off {handoff} merit {monotone}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} plans reproduce bit-exactly by Euler, release state matches, merit non-increasing", solved.len())
    } else {
        failures.join("; ")
    };
    (failures.is_empty(), detail)
}

fn gradient_check() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = PolicyNet::init(64, -0.5, [0.0; 4], &mut rng).unwrap();
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let mut old = net.clone();
    old.params_mut().iter_mut().for_each(|p| *p += rng.random_range(-0.01..0.01));
    let cfg = TrainConfig {
        value_clip: 10.0,
        ..TrainConfig::default()
    };
    let env = CaptureEnv::new(EpisodeConfig::default(), Physics::default()).unwrap();
    let (mut batch, _) = EnvWorker::new(env, 6).collect(&old, 256, &cfg).unwrap();
    batch.compute_advantages(cfg.gamma, cfg.gae_lambda);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (_, grad) = loss_and_grad(&net, &batch, &idx, &cfg);
    let loss = |n: &PolicyNet| loss_and_grad(n, &batch, &idx, &cfg).0.total;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let i = rng.random_range(0..grad.len());
        let h = 1e-6;
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    (worst <= 1e-4, format!("10 parameters, worst relative error {worst:.1e} (tol 1e-4)"))
}

fn rl_learning(exec: &RayonExecutor) -> (bool, String, PolicyNet) {
    let cfg = TrainConfig::default();
    let env = EpisodeConfig::default();
    let physics = Physics::default();
    let start = Instant::now();
    let (net, log) = train(&cfg, &env, &physics, exec).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let first = log.iter().find_map(|l| l.eval_success).unwrap_or(f64::NAN);
    let report = evaluate(&net, &env, &physics, 100, 2024, exec).unwrap();
    let ok = report.success_rate >= 0.7 && minutes <= 30.0;
    (
        ok,
        format!(
            "{} iterations in {minutes:.1} min on {} thread(s), first eval {first:.2}, final {:.2} over 100 episodes (need >= 0.70 within 30 min)",
            cfg.iterations,
            exec.threads(),
            report.success_rate
        ),
        net,
    )
}

fn reward_properties() -> (bool, String) {
    let cfg = EpisodeConfig::default();
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    let mut worst_identity: f64 = 0.0;
    let mut max_total = f64::NEG_INFINITY;
    for _ in 0..100_000 {
        let mut u = |r: f64| rng.random_range(-r..r);
        let q = nalgebra::Quaternion::new(u(1.0), u(1.0), u(1.0), u(1.0));
        let mut x = MavState::at_rest(Vec3::new(u(10.0), u(10.0), u(5.0) + 4.0));
        x.q = nalgebra::UnitQuaternion::from_quaternion(q).into_inner();
        x.v = Vec3::new(u(10.0), u(10.0), u(10.0));
        x.w = Vec3::new(u(10.0), u(10.0), u(10.0));
        let target = TargetMotion::Static {
            position: Vec3::new(u(5.0), u(5.0), u(3.0) + 4.0),
        };
        let r = compute_reward(&x, &target, 0.0, &physics, &cfg);
        let in_range = (1.0 / 2.5..=0.5).contains(&r.r_d)
            && r.r_b > 0.0
            && r.r_b <= 1.0
            && r.r_w > 0.0
            && r.r_w <= 1.0
            && (0.0..=1.0).contains(&r.r_a)
            && r.r_total <= 1.5 + 1e-9;
        violations += usize::from(!in_range);
        let identity = r.r_a * r.r_d * (r.r_b + r.r_w) + r.r_d;
        worst_identity = worst_identity.max((identity - r.r_total).abs());
        max_total = max_total.max(r.r_total);
    }
    (
        violations == 0 && worst_identity == 0.0,
        format!("1e5 states, {violations} range violations, max r_total {max_total:.4}, identity error {worst_identity:.1e}"),
    )
}

fn trials(method: &TrialMethod<'_>, scenario: &Scenario, seed: u64, exec: &RayonExecutor) -> Vec<TrialRecord> {
    let physics = Physics::default();
    let mut setups = scenario.setups(seed);
    exec.map(&mut setups, |s| run_trial(method, s, &physics))
}

fn top_method() -> TrialMethod<'static> {
    let config = TopConfig::default();
    TrialMethod::Top {
        config,
        execution: ExecutionOptions::closed_loop(config.tracking),
    }
}

fn miss_trends(exec: &RayonExecutor) -> (bool, String) {
    let mut records = Vec::new();
    for (scenario, seed) in [(Scenario::constant_velocity(), 8), (Scenario::circular(), 9)] {
        let scenario = Scenario { trials: 25, ..scenario };
        records.extend(trials(&top_method(), &scenario, seed, exec));
    }
    let refs: Vec<&TrialRecord> = records.iter().collect();
    let c = MissCorrelations::of(&refs);
    let launched = records.iter().filter(|r| r.launch.is_some()).count();
    let fmt = |x: Option<f64>| x.map_or("n/a".into(), |x| format!("{x:+.3}"));
    (
        c.all_positive(),
        format!(
            "TOP, {} moving-target trials ({launched} launched): spearman(miss, distance) {}, speed {}, flight time {} (all > 0)",
            records.len(),
            fmt(c.relative_distance),
            fmt(c.relative_speed),
            fmt(c.flight_time)
        ),
    )
}

fn method_contrast(net: &PolicyNet, exec: &RayonExecutor) -> (bool, String) {
    let scenario = Scenario {
        trials: 30,
        jitter: Vec3::new(0.5, 0.5, 0.5),
        ..Scenario::static_target()
    };
    let rl = TrialMethod::Rl {
        policy: net,
        env: EpisodeConfig::default(),
    };
    let top = trials(&top_method(), &scenario, 10, exec);
    let rl = trials(&rl, &scenario, 10, exec);
    let rate = |r: &[TrialRecord]| median(&r.iter().filter_map(|t| t.launch.map(|l| l.angular_rate)).collect::<Vec<_>>());
    let capture = |r: &[TrialRecord]| median(&r.iter().filter_map(|t| t.capture_time).collect::<Vec<_>>());
    let (rate_top, rate_rl, cap_top, cap_rl) = (rate(&top), rate(&rl), capture(&top), capture(&rl));
    let ok = matches!((rate_rl, rate_top), (Some(a), Some(b)) if a < b) && matches!((cap_top, cap_rl), (Some(a), Some(b)) if a < b);
    let fmt = |x: Option<f64>| x.map_or("n/a".into(), |x| format!("{x:.3}"));
    (
        ok,
        format!(
            "30 paired trials: median launch |w| RL {} vs TOP {} rad/s, median capture time TOP {} vs RL {} s",
            fmt(rate_rl),
            fmt(rate_top),
            fmt(cap_top),
            fmt(cap_rl)
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> (bool, String) {
    let cfg = root.join("run.toml");
    fs::write(
        &cfg,
        "seed = 11\n[ppo]\nhidden = 16\nnum_envs = 2\nsteps_per_env = 64\nminibatch_size = 64\niterations = 3\neval_interval = 3\neval_episodes = 2\n\
         [scenario]\nstarts = [[0.0, 0.0, 2.0], [-5.0, 0.0, 4.0]]\njitter = [0.5, 0.5, 0.5]\ntrials = 4\nmethods = [\"top\", \"rl\"]\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let run = |tag: &str| -> PathBuf {
        let base = root.join(tag);
        let out = |name: &str| base.join(name).to_str().unwrap().to_string();
        let ckpt = base.join("train/checkpoints/final.ckpt");
        let trials = base.join("eval/trials.csv");
        let commands: [Vec<String>; 5] = [
            vec!["plan".into(), "--out".into(), out("plan")],
            vec!["train".into(), "--out".into(), out("train")],
            vec!["eval".into(), "--out".into(), out("eval"), "--checkpoint".into(), ckpt.to_str().unwrap().into()],
            vec!["simulate".into(), "--out".into(), out("simulate"), "--checkpoint".into(), ckpt.to_str().unwrap().into()],
            vec!["stats".into(), "--out".into(), out("stats"), trials.to_str().unwrap().into()],
        ];
        for args in commands {
            let o = Command::new(env!("CARGO_BIN_EXE_mavcap"))
                .args(&args)
                .args(["--config", cfg, "--threads", "1"])
                .output()
                .unwrap();
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        base
    };
    let (a, b) = (run("a"), run("b"));
    let files = csv_files(&a);
    let differing: Vec<String> = files
        .iter()
        .filter(|p| fs::read(p).ok() != fs::read(b.join(p.strip_prefix(&a).unwrap())).ok())
        .map(|p| p.strip_prefix(&a).unwrap().display().to_string())
        .collect();
    let ckpt_same = fs::read(a.join("train/checkpoints/final.ckpt")).unwrap() == fs::read(b.join("train/checkpoints/final.ckpt")).unwrap();
    (
        differing.is_empty() && ckpt_same && files.len() > 5,
        format!(
            "plan/train/eval/simulate/stats twice: {} CSVs compared, {} differ, checkpoint identical {ckpt_same}",
            files.len(),
            differing.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let exec = RayonExecutor::new(0).unwrap();
    let mut r = Report {
        lines: Vec::new(),
        failed: 0,
    };
    let timed = |f: &mut dyn FnMut() -> (bool, String)| {
        let t = Instant::now();
        let (ok, detail) = f();
        (ok, format!("{detail} [{:.1} s]", t.elapsed().as_secs_f64()))
    };

    let (ok, d) = timed(&mut physics_oracles);
    r.check(1, "physics oracles", ok, d);
    let (ok, d) = timed(&mut launcher_chain);
    r.check(2, "launcher kinematics", ok, d);

    let mut solved = Vec::new();
    let (ok, d) = timed(&mut || {
        let (ok, d, s) = top_feasibility();
        solved = s;
        (ok, d)
    });
    r.check(3, "TOP feasibility on scenario 1", ok, d);
    let (ok, d) = timed(&mut || self_consistency(&solved));
    r.check(4, "TOP self-consistency", ok, d);
    let (ok, d) = timed(&mut gradient_check);
    r.check(5, "policy gradient check", ok, d);

    let mut net = None;
    let (ok, d) = timed(&mut || {
        let (ok, d, n) = rl_learning(&exec);
        net = Some(n);
        (ok, d)
    });
    r.check(6, "RL learning at desk scale", ok, d);
    let (ok, d) = timed(&mut reward_properties);
    r.check(7, "reward properties", ok, d);
    let (ok, d) = timed(&mut || miss_trends(&exec));
    r.check(8, "miss-distance trends", ok, d);
    let net = net.unwrap();
    let (ok, d) = timed(&mut || method_contrast(&net, &exec));
    r.check(9, "RL vs TOP contrast", ok, d);
    let dir = tempfile::tempdir().unwrap();
    let (ok, d) = timed(&mut || determinism(dir.path()));
    r.check(10, "determinism", ok, d);

    let _ = writeln!(std::io::stderr(), "{} of 10 criteria pass", 10 - r.failed);
    assert_eq!(r.failed, 0, "failing criteria:\n{}", r.lines.iter().filter(|l| l.contains("FAIL")).cloned().collect::<Vec<_>>().join("\n"));
}
