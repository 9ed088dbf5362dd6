mod common;

use std::fs;
use std::path::Path;

use polgrad::harness::{
    evaluate, evaluate_checkpoint, export_curves, resume, rolling_stats, train, Checkpoint, RunDir, RUNLOG_HEADER,
};
use polgrad::envs::{make_env, ReacherOptions};
use polgrad::rollout::{Algo, TrainConfig};

fn tiny(algo: Algo) -> TrainConfig {
    TrainConfig {
        algo,
        total_steps: 1024,
        horizon: 256,
        workers: 2,
        max_episode_steps: 64,
        hidden: vec![16],
        vf_minibatch: 64,
        minibatch: 64,
        epochs: 2,
        vf_epochs: 2,
        t_max: 32,
        checkpoint_every: 1,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn identical_runs_write_identical_logs() {
    for algo in [Algo::Trpo, Algo::Ppo, Algo::Acktr] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        train(tiny(algo), a.path(), None).unwrap();
        train(tiny(algo), b.path(), None).unwrap();
        let (ra, rb) = (RunDir::new(a.path()), RunDir::new(b.path()));
        assert_eq!(read(&ra.runlog()), read(&rb.runlog()), "{algo}: runlog differs");
        assert_eq!(read(&ra.episodes()), read(&rb.episodes()), "{algo}: episodes differ");
        assert_eq!(read(&ra.checkpoint()), read(&rb.checkpoint()), "{algo}: checkpoint differs");
        let text = String::from_utf8(read(&ra.runlog())).unwrap();
        assert!(text.starts_with(RUNLOG_HEADER));
        assert_eq!(text.lines().count(), 2 + 4, "{algo}: header, columns and four updates");
    }
}

#[test]
fn seed_and_worker_count_change_the_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    train(tiny(Algo::Ppo), a.path(), None).unwrap();
    train(TrainConfig { seed: 4, ..tiny(Algo::Ppo) }, b.path(), None).unwrap();
    train(TrainConfig { workers: 1, ..tiny(Algo::Ppo) }, c.path(), None).unwrap();
    let log = |d: &tempfile::TempDir| read(&RunDir::new(d.path()).runlog());
    assert_ne!(log(&a), log(&b));
    assert_ne!(log(&a), log(&c));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for algo in [Algo::Trpo, Algo::Ppo, Algo::Acktr] {
        let full = tempfile::tempdir().unwrap();
        let split = tempfile::tempdir().unwrap();
        train(TrainConfig { total_steps: 2048, ..tiny(algo) }, full.path(), None).unwrap();
        train(tiny(algo), split.path(), None).unwrap();
        let s = resume(split.path(), Some(2048), None).unwrap();
        assert_eq!(s.total_steps, 2048);
        let (f, p) = (RunDir::new(full.path()), RunDir::new(split.path()));
        assert_eq!(read(&f.runlog()), read(&p.runlog()), "{algo}: runlog differs after resume");
        assert_eq!(read(&f.episodes()), read(&p.episodes()), "{algo}: episodes differ after resume");
    }
}

#[test]
fn resume_discards_rows_past_the_checkpoint() {
    let full = tempfile::tempdir().unwrap();
    let cut = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { total_steps: 2048, checkpoint_every: 100, ..tiny(Algo::Ppo) };
    train(cfg.clone(), full.path(), None).unwrap();
    train(TrainConfig { total_steps: 1024, ..cfg }, cut.path(), None).unwrap();
    let dir = RunDir::new(cut.path());
    let mut log = fs::read_to_string(dir.runlog()).unwrap();
    log.push_str("5,9999,0,,,,,,,,,,,,,,,,,,\n");
    fs::write(dir.runlog(), log).unwrap();
    resume(cut.path(), Some(2048), None).unwrap();
    assert_eq!(read(&RunDir::new(full.path()).runlog()), read(&dir.runlog()));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let d = tempfile::tempdir().unwrap();
    train(tiny(Algo::Ppo), d.path(), None).unwrap();
    let path = RunDir::new(d.path()).checkpoint();
    let ck = Checkpoint::load(&path).unwrap();
    let copy = d.path().join("copy.json");
    ck.save(&copy).unwrap();
    assert_eq!(Checkpoint::load(&copy).unwrap().net, ck.net);
    let opts = ReacherOptions { max_episode_steps: ck.config.max_episode_steps, ..Default::default() };
    let mut env = make_env(&ck.config.env, &opts).unwrap();
    let direct = evaluate(&ck.net, &mut *env, 3, true, ck.config.seed).unwrap();
    assert_eq!(evaluate_checkpoint(&path, 3, true, None).unwrap(), direct);
    assert_eq!(evaluate_checkpoint(&copy, 3, true, None).unwrap(), direct);
}

#[test]
fn zero_budget_writes_header_only_logs() {
    let d = tempfile::tempdir().unwrap();
    let s = train(TrainConfig { total_steps: 0, ..tiny(Algo::Trpo) }, d.path(), None).unwrap();
    assert_eq!(s.updates, 0);
    let dir = RunDir::new(d.path());
    let log = fs::read_to_string(dir.runlog()).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with(RUNLOG_HEADER));
    assert!(dir.checkpoint().exists());
    assert!(export_curves(&[dir.runlog()], 10).is_err());
    assert!(!d.path().join("runlog.svg").exists());
}

#[test]
fn plot_writes_svg_and_rolling_csv() {
    let d = tempfile::tempdir().unwrap();
    let dir = RunDir::new(d.path());
    train(TrainConfig { max_episode_steps: 32, ..tiny(Algo::Ppo) }, d.path(), None).unwrap();
    let files = export_curves(&[dir.runlog()], 2).unwrap();
    assert_eq!(files.len(), 2);
    let svg = fs::read_to_string(&files[0]).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polygon") && svg.contains("<polyline"));
    let csv = fs::read_to_string(&files[1]).unwrap();
    assert!(csv.starts_with("# polgrad-rolling v1\ntotal_steps,reward,rolling_mean,rolling_std\n"));
}

#[test]
fn constant_rewards_give_a_zero_band() {
    for (m, s) in rolling_stats(&[2.5; 40], 7) {
        assert_eq!(m, 2.5);
        assert_eq!(s, 0.0);
    }
}

#[test]
fn rolling_stats_match_direct_computation() {
    let mut r = common::rng(4);
    let xs: Vec<f64> = (0..500).map(|_| 10.0 + common::normal(&mut r)).collect();
    for w in [1, 5, 100, 1000] {
        let got = rolling_stats(&xs, w);
        for i in 0..xs.len() {
            let win = &xs[(i + 1).saturating_sub(w)..=i];
            let n = win.len() as f64;
            let mean = win.iter().sum::<f64>() / n;
            let std = (win.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            assert!((got[i].0 - mean).abs() < 1e-12, "window {w}, row {i}: mean");
            assert!((got[i].1 - std).abs() < 1e-12, "window {w}, row {i}: std");
        }
    }
}
