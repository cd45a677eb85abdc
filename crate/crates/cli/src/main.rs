use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use cvm_track::scenarios::{build_named, SCENARIO_NAMES};
use cvm_track_cli::{
    export_results, output_dir, parse_iters, resolve_scenario, run_campaign, CliError, CliResult, FilterKind,
    Manifest, RunSpec, DEFAULT_SWEEP, OUT_ENV,
};

#[derive(Parser)]
#[command(name = "cvm-track", version, about = "Monte Carlo campaigns for coupled-velocity-model tracking filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Central,
    Distributed,
    Both,
}

impl From<FilterArg> for FilterKind {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Central => FilterKind::Central,
            FilterArg::Distributed => FilterKind::Distributed,
            FilterArg::Both => FilterKind::Both,
        }
    }
}

#[derive(clap::Args)]
struct CampaignArgs {
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Number of Monte Carlo runs [default: the scenario's run count].
    #[arg(long)]
    runs: Option<usize>,
    /// Comma separated consensus iteration counts.
    #[arg(long)]
    consensus_iters: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign.
    Run {
        #[command(flatten)]
        args: CampaignArgs,
        #[arg(long, value_enum, default_value = "both")]
        filter: FilterArg,
    },
    /// Run the distributed filter for several consensus iteration counts.
    #[command(name = "sweep-L", alias = "sweep-l")]
    SweepL {
        #[command(flatten)]
        args: CampaignArgs,
    },
    /// Re-run the campaign recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file or name and report problems.
    ValidateConfig { scenario: String },
    /// List the built-in scenarios.
    ListScenarios,
    /// Print a built-in scenario as JSON.
    ShowScenario { name: String },
}

fn spec_from(args: &CampaignArgs, filter: FilterKind, default_iters: Option<&[usize]>) -> CliResult<RunSpec> {
    let scenario = resolve_scenario(&args.scenario)?;
    let consensus_iters = match (&args.consensus_iters, default_iters) {
        (Some(text), _) => parse_iters(text)?,
        (None, Some(d)) => d.to_vec(),
        (None, None) => vec![scenario.consensus.iterations],
    };
    let runs = args.runs.unwrap_or(scenario.monte_carlo_runs);
    Ok(RunSpec { scenario_source: args.scenario.clone(), scenario, filter, runs, consensus_iters, seed: args.seed })
}

fn execute(spec: &RunSpec, out: PathBuf) -> CliResult<()> {
    let start = Instant::now();
    let table = run_campaign(spec)?;
    let files = export_results(spec, &table, &out)?;
    for acc in &table.accounting {
        println!("{} L={}: {} completed, {} diverged", acc.filter, acc.iterations, acc.completed, acc.diverged);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    eprintln!("elapsed {:.2} s ({:.3} s per run)", start.elapsed().as_secs_f64(), start.elapsed().as_secs_f64() / spec.runs as f64);
    Ok(())
}

fn main_inner(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { args, filter } => {
            let spec = spec_from(&args, filter.into(), None)?;
            execute(&spec, output_dir(args.out))
        }
        Command::SweepL { args } => {
            let spec = spec_from(&args, FilterKind::Distributed, Some(&DEFAULT_SWEEP))?;
            execute(&spec, output_dir(args.out))
        }
        Command::Replay { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            execute(&m.spec, output_dir(out))
        }
        Command::ValidateConfig { scenario } => {
            let cfg = resolve_scenario(&scenario)?;
            cfg.network()?;
            println!("ok: {} ({} scans, {} nodes)", cfg.name, cfg.scan_count, cfg.nodes.len());
            Ok(())
        }
        Command::ListScenarios => {
            for name in SCENARIO_NAMES {
                let cfg = build_named(name)?;
                println!("{name}\t{} scans\t{} nodes\t{:?}", cfg.scan_count, cfg.nodes.len(), cfg.shape);
            }
            Ok(())
        }
        Command::ShowScenario { name } => {
            if !SCENARIO_NAMES.contains(&name.as_str()) {
                return Err(CliError::Config(format!("unknown scenario '{name}'")));
            }
            println!("{}", build_named(&name)?.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::from(1)
        }
    }
}
