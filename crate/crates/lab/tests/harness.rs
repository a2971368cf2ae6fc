use std::path::Path;

use rave_lab::harness::{CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, TIMING_FILE};
use rave_lab::metrics::{read_rows, MetricsTable};
use rave_lab::{resume, run_seed, LabError, RunConfig};

fn small(dir: &Path, estimator: &str, total: usize) -> RunConfig {
    RunConfig {
        estimator: estimator.into(),
        members: 2,
        horizon: 2,
        batch_size: 16,
        replay_capacity: 5000,
        hidden_width: 8,
        model_width: 8,
        warmup_frames: 200,
        pretrain_steps: 20,
        total_steps: total,
        eval_period: 100,
        oracle_episodes: 200,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn metrics(run_dir: &Path) -> Vec<u8> {
    std::fs::read(run_dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn zero_steps_writes_header_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "rave", 0);
    let summary = run_seed(&cfg, 0).unwrap();
    let path = summary.run_dir.join(METRICS_FILE);
    assert!(read_rows(&path).unwrap().is_empty());
    let table = MetricsTable::read(&path).unwrap();
    assert_eq!(table.columns[0], "env_steps");
    assert!(table.columns.iter().any(|c| c == "omega_h2"));
    let saved = std::fs::read_to_string(summary.run_dir.join(CONFIG_FILE)).unwrap();
    let back = RunConfig::from_toml(&saved).unwrap();
    assert_eq!(back.seeds, vec![0]);
    assert_eq!(back.estimator, "rave");
}

#[test]
fn rows_follow_the_eval_period() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_seed(&small(dir.path(), "mve", 700), 1).unwrap();
    let table = MetricsTable::read(&summary.run_dir.join(METRICS_FILE)).unwrap();
    let steps = table.column("env_steps").unwrap();
    assert_eq!(steps, (1..=7).map(|i| 100.0 * i as f64).collect::<Vec<_>>());
    let learner = table.column("learner_steps").unwrap();
    assert!(learner.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*learner.last().unwrap(), 500.0);
    assert!(table.last("q_s0_right").unwrap().is_finite());
    assert!(summary.run_dir.join(TIMING_FILE).exists());
    assert!(summary.run_dir.join(CHECKPOINT_FILE).exists());
}

#[test]
fn identical_runs_write_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_seed(&small(a.path(), "rave", 500), 3).unwrap();
    let rb = run_seed(&small(b.path(), "rave", 500), 3).unwrap();
    assert_eq!(metrics(&ra.run_dir), metrics(&rb.run_dir));
    let rc = run_seed(&small(b.path(), "rave", 500), 4).unwrap();
    assert_ne!(metrics(&ra.run_dir), metrics(&rc.run_dir));
}

#[test]
fn resumed_run_matches_a_straight_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let straight = run_seed(&small(a.path(), "steve", 600), 5).unwrap();
    let first = run_seed(&small(b.path(), "steve", 300), 5).unwrap();
    let resumed = resume(&first.run_dir, Some(600)).unwrap();
    assert_eq!(resumed.counters.env_steps, 600);
    assert_eq!(metrics(&straight.run_dir), metrics(&resumed.run_dir));
}

#[test]
fn parallel_workers_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        workers: 2,
        snapshot_period: 10,
        ..small(dir.path(), "td0", 600)
    };
    let summary = run_seed(&cfg, 2).unwrap();
    assert_eq!(summary.counters.env_steps, 600);
    let table = MetricsTable::read(&summary.run_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(table.last("env_steps"), Some(600.0));
}

#[test]
fn invalid_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        batch_size: 500,
        ..small(dir.path(), "mve", 100)
    };
    assert!(matches!(run_seed(&cfg, 0), Err(LabError::Config(_))));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());

    let bad = RunConfig {
        estimator: "dqn".into(),
        ..small(dir.path(), "mve", 100)
    };
    assert!(run_seed(&bad, 0).is_err());
    assert!(RunConfig::from_toml("estimator = \"mve\"\nunknown = 1\n").is_err());
}
