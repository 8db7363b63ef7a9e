//! Cartesian sweeps over controllers, demand scales and seeds.

use rayon::prelude::*;
use serde::Serialize;

use crate::runner::{run_dir, run_episode, RunError, RunOptions, RunOutput, RunResult, TrainingCache};
use crate::scenario::{ConfigError, ControllerSpec, Scenario};
use tsc_core::metrics::EpisodeMetrics;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    /// Preset labels or controller kinds; empty keeps the scenario's own assignment.
    pub controllers: Vec<String>,
    pub demand_scales: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// One cell of the comparison table: mean and sample standard deviation
/// over the cell's successful runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub controller: String,
    pub demand_scale: f64,
    pub runs: usize,
    pub failed: usize,
    pub att_mean: Option<f64>,
    pub att_std: Option<f64>,
    pub ad_mean: Option<f64>,
    pub ad_std: Option<f64>,
    pub throughput_mean: Option<f64>,
    pub throughput_std: Option<f64>,
}

pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() };
    (Some(mean), Some(std))
}

pub fn comparison(results: &[&RunResult], controllers: &[String], scales: &[f64]) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for c in controllers {
        for &scale in scales {
            let cell: Vec<&RunResult> = results.iter().copied().filter(|r| &r.controller == c && r.demand_scale == scale).collect();
            let ok: Vec<&RunResult> = cell.iter().copied().filter(|r| r.error.is_none()).collect();
            let pick = |f: fn(&EpisodeMetrics) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(&r.metrics)).collect() };
            let (att_mean, att_std) = mean_std(&pick(|m| m.att));
            let (ad_mean, ad_std) = mean_std(&pick(|m| m.ad));
            let (throughput_mean, throughput_std) = mean_std(&pick(|m| Some(m.throughput as f64)));
            rows.push(ComparisonRow {
                controller: c.clone(),
                demand_scale: scale,
                runs: cell.len(),
                failed: cell.len() - ok.len(),
                att_mean,
                att_std,
                ad_mean,
                ad_std,
                throughput_mean,
                throughput_std,
            });
        }
    }
    rows
}

fn failed_run(s: &Scenario, seed: u64, scale: f64, error: String) -> RunOutput {
    let controller = s.controller_label();
    let dir = run_dir(&controller, scale, seed);
    RunOutput {
        result: RunResult {
            scenario: s.name.clone(),
            scenario_hash: s.hash(),
            controller,
            demand_scale: scale,
            seed,
            horizon: s.sim.horizon,
            steps_run: 0,
            metrics: EpisodeMetrics { att: None, ad: None, throughput: 0 },
            entered: 0.0,
            exited: 0.0,
            rejected: 0.0,
            steps_file: dir.join("steps.csv"),
            events_file: dir.join("events.jsonl"),
            trace_file: None,
            curve_file: None,
            dir,
            error: Some(error),
            wall_clock_s: 0.0,
        },
        steps: Vec::new(),
        events: Vec::new(),
        trace: Vec::new(),
        curve: Vec::new(),
    }
}

/// Runs every (controller, scale, seed) combination in parallel. Problems
/// with the axes themselves are config errors; a failing run is recorded
/// in its result and the sweep carries on.
pub fn sweep(s: &Scenario, axes: &SweepAxes, events: bool) -> Result<(Vec<RunOutput>, Vec<ComparisonRow>), ConfigError> {
    let bad = |field: &str, message: &str| ConfigError::Invalid { field: field.into(), message: message.into() };
    if axes.demand_scales.is_empty() || axes.seeds.is_empty() {
        return Err(bad("sweep", "demand scales and seeds must be non-empty"));
    }
    if axes.demand_scales.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(bad("demand_scales", "scales must be finite and non-negative"));
    }
    let variants: Vec<Scenario> = if axes.controllers.is_empty() {
        vec![s.clone()]
    } else {
        let specs: Vec<ControllerSpec> = axes.controllers.iter().map(|c| s.controller_by_name(c)).collect::<Result<_, _>>()?;
        specs.iter().map(|spec| s.with_controller(spec)).collect::<Result<_, _>>()?
    };
    let labels: Vec<String> = if axes.controllers.is_empty() { vec![s.controller_label()] } else { axes.controllers.clone() };

    let mut jobs = Vec::new();
    for (v, label) in variants.iter().zip(&labels) {
        for &scale in &axes.demand_scales {
            for &seed in &axes.seeds {
                jobs.push((v, label, scale, seed));
            }
        }
    }
    let cache = TrainingCache::default();
    let outputs: Vec<RunOutput> = jobs
        .par_iter()
        .map(|(v, label, scale, seed)| {
            let opts = RunOptions { demand_scale: *scale, events };
            let mut out = match run_episode(v, *seed, &opts, &cache) {
                Ok(o) => o,
                Err(RunError::Config(e)) => failed_run(v, *seed, *scale, e.to_string()),
                Err(RunError::Runtime(e)) => failed_run(v, *seed, *scale, e),
            };
            relabel(&mut out, label);
            out
        })
        .collect();
    let results: Vec<&RunResult> = outputs.iter().map(|o| &o.result).collect();
    let table = comparison(&results, &labels, &axes.demand_scales);
    Ok((outputs, table))
}

fn relabel(out: &mut RunOutput, label: &str) {
    let r = &mut out.result;
    if r.controller == label {
        return;
    }
    let dir = run_dir(label, r.demand_scale, r.seed);
    let moved = |p: &std::path::Path| dir.join(p.file_name().expect("files have names"));
    r.steps_file = moved(&r.steps_file);
    r.events_file = moved(&r.events_file);
    r.trace_file = r.trace_file.as_deref().map(moved);
    r.curve_file = r.curve_file.as_deref().map(moved);
    r.dir = dir;
    r.controller = label.to_string();
}
