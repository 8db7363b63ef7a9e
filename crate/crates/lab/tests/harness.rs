use std::fs;
use std::path::PathBuf;

use tsc_lab::output::{sha256_hex, verify_manifest, write_results};
use tsc_lab::scenario::{load, Scenario};
use tsc_lab::{run_episode, sweep, RunOptions, SweepAxes, TrainingCache};

fn golden() -> Scenario {
    load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/golden.toml")).unwrap()
}

fn short_golden() -> Scenario {
    let mut s = golden();
    s.sim.horizon = 120;
    s
}

#[test]
fn empty_results_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_results(&[], None, dir.path()).unwrap();
    assert!(m.files.is_empty());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn manifest_digests_match_the_files_and_are_stable() {
    let s = short_golden();
    let run = run_episode(&s, 7, &RunOptions::default(), &TrainingCache::default()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = write_results(std::slice::from_ref(&run), None, a.path()).unwrap();
    assert!(first.files.iter().any(|e| e.path.ends_with("steps.csv")));
    assert!(first.files.iter().any(|e| e.path.ends_with("summary.json")));
    assert!(verify_manifest(&first, a.path()).unwrap().is_empty());
    for e in &first.files {
        assert_eq!(sha256_hex(&fs::read(a.path().join(&e.path)).unwrap()), e.sha256);
    }
    let second = write_results(&[run], None, b.path()).unwrap();
    assert_eq!(first.files, second.files);
}

#[test]
fn degenerate_sweep_has_one_cell() {
    let s = short_golden();
    let axes = SweepAxes { controllers: vec!["max_pressure".into()], demand_scales: vec![1.0], seeds: vec![3] };
    let (runs, table) = sweep(&s, &axes, false).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(table.len(), 1);
    assert_eq!(table[0].runs, 1);
    assert_eq!(table[0].att_std, Some(0.0));
}

#[test]
fn spread_comes_only_from_seeds() {
    let s = short_golden();
    let same = SweepAxes { controllers: vec!["max_pressure".into()], demand_scales: vec![1.0], seeds: vec![4, 4, 4] };
    let (_, table) = sweep(&s, &same, false).unwrap();
    assert_eq!(table[0].throughput_std, Some(0.0));
    assert_eq!(table[0].att_std, Some(0.0));
    let varied = SweepAxes { seeds: vec![4, 5, 6], ..same };
    let (_, table) = sweep(&s, &varied, false).unwrap();
    assert!(table[0].att_std.unwrap() > 0.0);
}

#[test]
fn sweep_runs_match_standalone_runs() {
    let s = short_golden();
    let axes = SweepAxes { controllers: vec![], demand_scales: vec![0.5, 1.0], seeds: vec![1, 2, 3] };
    let (runs, table) = sweep(&s, &axes, true).unwrap();
    assert_eq!(runs.len(), 6);
    assert_eq!(table.len(), 2);
    for r in &runs {
        let opts = RunOptions { demand_scale: r.result.demand_scale, events: true };
        let alone = run_episode(&s, r.result.seed, &opts, &TrainingCache::default()).unwrap();
        assert_eq!(alone.steps, r.steps);
        assert_eq!(alone.events, r.events);
        assert_eq!(alone.trace, r.trace);
        assert_eq!(alone.result.metrics, r.result.metrics);
    }
}
