use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsc_lab::output::{write_results, OutputError};
use tsc_lab::runner::RunOutput;
use tsc_lab::scenario::{load, ConfigError, Scenario};
use tsc_lab::{oracle, run_episode, sweep, RunError, RunOptions, SweepAxes, TrainingCache};

#[derive(Parser)]
#[command(name = "tsc-lab", version, about = "Traffic-signal control experiments")]
struct Cli {
    /// Worker threads for sweeps and the oracle suite (all cores when unset).
    #[arg(long, global = true, env = "TSC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario once per seed and write its results.
    Run {
        scenario: PathBuf,
        /// Run only this seed instead of the scenario's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "TSC_OUT_DIR")]
        out: Option<PathBuf>,
        /// Skip the per-step event log.
        #[arg(long)]
        no_events: bool,
    },
    /// Run every combination of controllers, demand scales and seeds.
    Sweep {
        scenario: PathBuf,
        /// Preset labels or controller kinds; the scenario's own assignment when omitted.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        demand_scales: Vec<f64>,
        /// The scenario's seed list when omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, env = "TSC_OUT_DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        no_events: bool,
    },
    /// Parse and resolve a scenario, then print its hash.
    Validate { scenario: PathBuf },
    /// Run the acceptance oracles on the built-in fixtures.
    Oracle {
        /// Criterion numbers (1-7); all when omitted.
        criteria: Vec<u8>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            RunError::Runtime(r) => Failure::Runtime(r),
        }
    }
}

fn out_dir(flag: Option<PathBuf>, s: &Scenario) -> PathBuf {
    flag.or_else(|| s.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out").join(&s.name))
}

fn report_runs(runs: &[RunOutput], out: &Path) -> Result<(), Failure> {
    for r in runs {
        let m = &r.result.metrics;
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{} scale {} seed {}: ATT {} s, AD {} s, throughput {}",
            r.result.controller,
            r.result.demand_scale,
            r.result.seed,
            fmt(m.att),
            fmt(m.ad),
            m.throughput
        );
    }
    println!("results in {}", out.display());
    let failed: Vec<String> = runs.iter().filter_map(|r| r.result.error.as_ref().map(|e| format!("{}: {e}", r.result.dir.display()))).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(failed.join("\n")))
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, seed, out, no_events } => {
            let s = load(&scenario)?;
            let out = out_dir(out, &s);
            let seeds = seed.map_or_else(|| s.seeds.clone(), |x| vec![x]);
            let opts = RunOptions { demand_scale: 1.0, events: !no_events };
            let cache = TrainingCache::default();
            let runs = seeds.iter().map(|&k| run_episode(&s, k, &opts, &cache)).collect::<Result<Vec<_>, _>>()?;
            write_results(&runs, None, &out)?;
            report_runs(&runs, &out)
        }
        Command::Sweep { scenario, controllers, demand_scales, seeds, out, no_events } => {
            let s = load(&scenario)?;
            let out = out_dir(out, &s);
            let seeds = if seeds.is_empty() { s.seeds.clone() } else { seeds };
            let axes = SweepAxes { controllers, demand_scales, seeds };
            let (runs, table) = sweep(&s, &axes, !no_events)?;
            write_results(&runs, Some(&table), &out)?;
            for row in &table {
                let fmt = |m: Option<f64>, sd: Option<f64>| match (m, sd) {
                    (Some(m), Some(sd)) => format!("{m:.3} ± {sd:.3}"),
                    _ => "-".to_string(),
                };
                println!(
                    "{} x{}: ATT {}, AD {}, throughput {} ({} runs, {} failed)",
                    row.controller,
                    row.demand_scale,
                    fmt(row.att_mean, row.att_std),
                    fmt(row.ad_mean, row.ad_std),
                    fmt(row.throughput_mean, row.throughput_std),
                    row.runs,
                    row.failed
                );
            }
            println!("results in {}", out.display());
            let failed = runs.iter().filter(|r| r.result.error.is_some()).count();
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} of {} runs failed", runs.len())));
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            println!(
                "{}: {} intersections, {} demand sources, controllers {}, {} seeds",
                s.name,
                s.net().n_intersections(),
                s.demand.len(),
                s.controller_label(),
                s.seeds.len()
            );
            println!("hash {}", s.hash());
            Ok(())
        }
        Command::Oracle { criteria } => {
            let numbers = if criteria.is_empty() { (1..=7).collect() } else { criteria };
            let mut failed = 0;
            for n in numbers {
                let report = oracle::by_number(n).ok_or_else(|| Failure::Config(format!("no criterion {n}")))?;
                println!("{report}");
                failed += usize::from(!report.pass);
            }
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} criteria failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
