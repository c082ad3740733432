// SPDX-License-Identifier: Apache-2.0

//! Scenario runner: simulates a scenario file, checks the trace invariants
//! and prints a summary as `key=value` lines.
//!
//! Exit status: 0 when every check holds, 1 on a violation or tick limit,
//! 2 on unreadable or invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use cuttlefish::sim::{self, explore_seed, RunSummary, Scenario, SimError, Trace};

#[derive(Debug, Parser)]
#[command(
    name = "cuttlefish",
    version,
    about = "Run and check Cuttlefish simulation scenarios"
)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH", required_unless_present = "check_only")]
    scenario: Option<PathBuf>,

    /// Overrides the scenario's seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Writes the JSONL trace here. With --explore, the trace of the first
    /// violating seed, or of the first seed if none violates.
    #[arg(long, value_name = "PATH")]
    trace_out: Option<PathBuf>,

    /// Runs K consecutive seeds starting at the scenario seed.
    #[arg(long, value_name = "K", value_parser = clap::value_parser!(u64).range(1..))]
    explore: Option<u64>,

    /// Re-checks a recorded JSONL trace instead of simulating.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["scenario", "seed", "explore", "trace_out"])]
    check_only: Option<PathBuf>,
}

/// Input the runner cannot act on.
#[derive(Debug)]
struct BadInput(anyhow::Error);

enum Verdict {
    Clean,
    Violated,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match dispatch(&args) {
        Ok(Verdict::Clean) => ExitCode::SUCCESS,
        Ok(Verdict::Violated) => ExitCode::from(1),
        Err(BadInput(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(args: &Args) -> Result<Verdict, BadInput> {
    if let Some(path) = &args.check_only {
        return check_only(path).map_err(BadInput);
    }
    let path = args.scenario.as_deref().expect("clap requires --scenario");
    let mut scenario = load_scenario(path).map_err(BadInput)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    match args.explore {
        Some(k) => cmd_explore(&scenario, k, args.trace_out.as_deref()),
        None => cmd_run(&scenario, args.trace_out.as_deref()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::parse(&text).with_context(|| format!("loading {}", path.display()))
}

/// Runs to quiescence or the tick limit; the trace is kept either way.
fn simulate(scenario: &Scenario) -> Result<Trace, BadInput> {
    match sim::run(scenario) {
        Ok(trace) => Ok(trace),
        Err(SimError::TickLimitExceeded { trace, .. }) => Ok(*trace),
        Err(e @ SimError::Invalid(_)) => Err(BadInput(e.into())),
    }
}

fn write_trace(trace: &Trace, out: Option<&Path>) -> Result<(), BadInput> {
    if let Some(path) = out {
        std::fs::write(path, trace.to_jsonl())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(BadInput)?;
    }
    Ok(())
}

fn verdict(summary: &RunSummary) -> Verdict {
    if summary.quiescent && summary.violations() == 0 {
        Verdict::Clean
    } else {
        Verdict::Violated
    }
}

fn cmd_run(scenario: &Scenario, trace_out: Option<&Path>) -> Result<Verdict, BadInput> {
    let trace = simulate(scenario)?;
    write_trace(&trace, trace_out)?;
    let summary = RunSummary::from_trace(&trace);
    print!("{summary}");
    Ok(verdict(&summary))
}

fn cmd_explore(scenario: &Scenario, k: u64, trace_out: Option<&Path>) -> Result<Verdict, BadInput> {
    let exploration = sim::explore(scenario, k).map_err(|e| BadInput(e.into()))?;
    println!("runs={}", exploration.runs);
    let Some((seed, violations)) = exploration.failure else {
        println!("violating_seed=none");
        if trace_out.is_some() {
            let mut first = scenario.clone();
            first.seed = explore_seed(scenario.seed, 0);
            write_trace(&simulate(&first)?, trace_out)?;
        }
        return Ok(Verdict::Clean);
    };
    println!("violating_seed={seed}");
    for v in &violations {
        println!("violation={} tick={} {}", v.checker, v.tick, v.detail);
    }
    if trace_out.is_some() {
        let mut failing = scenario.clone();
        failing.seed = seed;
        write_trace(&simulate(&failing)?, trace_out)?;
    }
    Ok(Verdict::Violated)
}

fn check_only(path: &Path) -> Result<Verdict> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = Trace::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;
    let summary = RunSummary::from_trace(&trace);
    print!("{summary}");
    for v in sim::check_invariants(&trace) {
        println!("violation={} tick={} {}", v.checker, v.tick, v.detail);
    }
    Ok(verdict(&summary))
}
