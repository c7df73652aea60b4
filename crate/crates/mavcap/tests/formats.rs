use mavcap::checkpoint::{decode, encode, load, save, MAGIC};
use mavcap::config::{Overrides, RunConfig};
use mavcap::output::{read_trials, write_trials, TrialRow};
use mavcap_core::dynamics::Vec3;
use mavcap_core::harness::{LaunchStats, Method, TrialOutcome, TrialRecord};
use mavcap_core::ppo::PolicyNet;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn net(hidden: usize, seed: u64) -> PolicyNet {
    PolicyNet::init(hidden, -0.5, [0.1, 0.0, 0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let n = net(64, 1);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ckpt");
    save(&n, &p).unwrap();
    let back = load(&p).unwrap();
    assert_eq!(back, n);
    assert!(back.params().iter().zip(n.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn checkpoint_header_layout() {
    let n = net(8, 2);
    let bytes = encode(&n);
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 9);
    // first shape entry: "w1" 8 x 24
    assert_eq!(bytes[20], 2);
    assert_eq!(&bytes[21..23], b"w1");
    assert_eq!(u32::from_le_bytes(bytes[23..27].try_into().unwrap()), 8);
    assert_eq!(u32::from_le_bytes(bytes[27..31].try_into().unwrap()), 24);
    // params + crc close the file
    let n_params = n.params().len();
    let first = bytes.len() - 4 - 8 * n_params;
    assert_eq!(u64::from_le_bytes(bytes[first - 8..first].try_into().unwrap()), n_params as u64);
    assert_eq!(f64::from_le_bytes(bytes[first..first + 8].try_into().unwrap()), n.params()[0]);
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let bytes = encode(&net(4, 3));
    assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode(&bytes[..30]).is_err());
    assert!(decode(b"not a checkpoint at all").is_err());
    assert!(decode(&[]).is_err());
    let mut v2 = bytes.clone();
    v2[8] = 2;
    let err = format!("{:#}", decode(&v2).unwrap_err());
    assert!(err.contains("version"), "{err}");
}

#[test]
fn missing_checkpoint_is_an_error() {
    assert!(load(std::path::Path::new("/nonexistent/x.ckpt")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_single_byte_flip_is_detected(seed in 0u64..1000, pos in 0usize..10_000, bit in 0u8..8) {
        let bytes = encode(&net(4, seed));
        let mut bad = bytes.clone();
        let i = pos % bad.len();
        bad[i] ^= 1 << bit;
        prop_assert!(decode(&bad).is_err());
    }
}

fn record(trial: usize, launched: bool, miss: f64) -> TrialRecord {
    TrialRecord {
        trial,
        method: if trial.is_multiple_of(2) { Method::Top } else { Method::Rl },
        seed: 0xdead_beef_0000 + trial as u64,
        start: Vec3::new(-5.0, 0.1 * trial as f64, 4.0),
        outcome: if !launched {
            TrialOutcome::Timeout
        } else if miss <= 0.1 {
            TrialOutcome::Captured
        } else {
            TrialOutcome::Missed
        },
        launch_time: launched.then_some(0.3 + trial as f64 / 7.0),
        capture_time: launched.then_some(0.5 + trial as f64 / 3.0),
        launch: launched.then_some(LaunchStats {
            relative_speed: 1.0 / 3.0,
            relative_distance: 1.2 + trial as f64 * 1e-17,
            flight_time: 0.21,
            pitch: -0.1,
            roll: 1e-300,
            angular_rate: std::f64::consts::PI,
        }),
        miss: if launched { miss } else { f64::INFINITY },
        success: launched && miss <= 0.1,
        replans: trial,
        flight: None,
        wall_time: None,
    }
}

#[test]
fn trial_csv_round_trips() {
    let records: Vec<TrialRecord> = (0..6).map(|i| record(i, i != 3, 0.03 * i as f64)).collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_trials(&p, &records).unwrap();
    let back = read_trials(&p).unwrap();
    assert_eq!(back, records);
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("trial,method,seed,start_x,start_y,start_z,outcome,launch_time,capture_time,"));
    assert!(text.lines().nth(4).unwrap().contains(",timeout,"));
    assert!(text.lines().nth(4).unwrap().contains(",inf,"));
}

proptest! {
    #[test]
    fn trial_rows_round_trip_any_float(m in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, t in 0.0..10.0f64) {
        let mut r = record(1, true, m.abs());
        r.launch_time = Some(t);
        let row = TrialRow::from(&r);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row).unwrap();
        let bytes = w.into_inner().unwrap();
        let mut rd = csv::Reader::from_reader(bytes.as_slice());
        let back: TrialRow = rd.deserialize().next().unwrap().unwrap();
        prop_assert_eq!(back.miss.to_bits(), row.miss.to_bits());
        prop_assert_eq!(back.into_record(), r);
    }
}

#[test]
fn config_precedence_defaults_file_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "seed = 7\n[top]\nreplan_period = 0.25\n[ppo]\niterations = 3\n").unwrap();

    let file_only = RunConfig::load(Some(&p), &Overrides::default()).unwrap();
    assert_eq!(file_only.top.replan_period, 0.25);
    assert_eq!(file_only.ppo.iterations, 3);
    assert_eq!(file_only.ppo.seed, 7);
    assert_eq!(file_only.top.n1, 20);

    let flagged = RunConfig::load(
        Some(&p),
        &Overrides {
            replan_period: Some(0.1),
            seed: Some(9),
            ..Overrides::default()
        },
    )
    .unwrap();
    assert_eq!(flagged.top.replan_period, 0.1);
    assert_eq!(flagged.seed, 9);
    assert_eq!(flagged.ppo.seed, 9);
    assert_eq!(flagged.ppo.iterations, 3);
}

#[test]
fn config_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[launcher]\nradius = 1\n").unwrap();
    let err = format!("{:#}", RunConfig::load(Some(&p), &Overrides::default()).unwrap_err());
    assert!(err.contains("radius"), "{err}");

    std::fs::write(&p, "[top]\nn1 = 1\n").unwrap();
    let err = format!("{:#}", RunConfig::load(Some(&p), &Overrides::default()).unwrap_err());
    assert!(err.contains("top.n1"), "{err}");

    let missing = dir.path().join("nope.toml");
    let err = format!("{:#}", RunConfig::load(Some(&missing), &Overrides::default()).unwrap_err());
    assert!(err.contains("nope.toml"), "{err}");

    std::fs::write(&p, "checkpoint = \"gone.ckpt\"\n").unwrap();
    assert!(RunConfig::load(Some(&p), &Overrides::default()).is_err());
}

#[test]
fn scenario_section_parses_each_motion() {
    let text = r#"
[scenario]
name = "cv"
starts = [[0.0, 0.0, 6.0], [0.0, -5.0, 4.0]]
jitter = [0.5, 0.5, 0.5]
trials = 300
methods = ["top", "rl"]

[scenario.motion]
kind = "constant_velocity"
position = [0.0, 0.0, 4.0]
velocity = [20.0, 0.0, 0.0]
"#;
    let cfg = RunConfig::from_toml(text).unwrap();
    assert_eq!(cfg.scenario.trials, 300);
    assert_eq!(cfg.scenario.methods, vec![Method::Top, Method::Rl]);
    assert_eq!(cfg.scenario.motion.position(0.5), Vec3::new(10.0, 0.0, 4.0));
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}
