//! signalroom CLI.
//!
//! Exit codes: 0 success, 1 criterion failed, 2 scenario load/schema error,
//! 3 io error, 4 probe stream contained faults, 5 configuration error,
//! 6 agent execution error.

use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use signalroom::harness::{
    cmd_criterion, cmd_mine, cmd_probe, cmd_report, cmd_run, HarnessError, RunConfig,
    OUT_DIR_ENV,
};
use signalroom::world::ScenarioParams;

#[derive(Parser)]
#[command(name = "signalroom", version, about = "deterministic agent/world simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario JSON file
    scenario: PathBuf,
    /// Override the scenario's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on world-advancing steps (0 = no experience)
    #[arg(long)]
    ticks: Option<u64>,
    /// Output directory (default: $SIGNALROOM_OUT or ./out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Temporal window override
    #[arg(long)]
    window: Option<usize>,
    /// Max group size override
    #[arg(long)]
    group_size: Option<usize>,
    /// Confidence threshold override
    #[arg(long)]
    theta_conf: Option<f64>,
    /// Demotion threshold override
    #[arg(long)]
    theta_demote: Option<f64>,
    /// Minimum support override
    #[arg(long)]
    s_min: Option<u32>,
    /// Exception threshold override
    #[arg(long)]
    x_min: Option<u32>,
    /// Priority discount override
    #[arg(long)]
    gamma: Option<f64>,
    /// Budgeted mining: group expansions per pass
    #[arg(long)]
    budget: Option<usize>,
    /// Ablation: never press recall buttons
    #[arg(long)]
    no_recall: bool,
    /// Ablation: perturb every recall deterministically
    #[arg(long)]
    corrupt_episodes: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: train, mine, decide, recall, re-mine, introspect;
    /// write the metrics bundle
    Run(RunArgs),
    /// Train and mine only; write rules.jsonl
    Mine(RunArgs),
    /// Answer a JSON-lines probe stream from a stores.json on stdin
    Probe {
        /// Path to a stores.json produced by `run`
        stores: PathBuf,
    },
    /// Run the agent plus permuted twins and evaluate the four properties
    Criterion {
        #[command(flatten)]
        run: RunArgs,
        /// Number of permuted twin runs (>= 1)
        #[arg(long, default_value_t = 5)]
        permutations: usize,
    },
    /// Render a previous run's summary.json as text
    Report {
        /// Output directory of a previous `run`
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn default_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn to_config(a: &RunArgs) -> RunConfig {
    let mut c = RunConfig::new(&a.scenario, default_out_dir(a.out_dir.clone()));
    c.seed = a.seed;
    c.ticks = a.ticks;
    c.overrides = ScenarioParams {
        w: a.window,
        g: a.group_size,
        theta_conf: a.theta_conf,
        theta_demote: a.theta_demote,
        s_min: a.s_min,
        x_min: a.x_min,
        gamma: a.gamma,
        budget: a.budget,
    };
    c.no_recall = a.no_recall;
    c.corrupt_episodes = a.corrupt_episodes;
    c
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let config = to_config(&args);
            let m = cmd_run(&config)?;
            println!(
                "{}: {} frames, {} rules, {} objects, {} episodes, {} recall objects -> {}",
                m.scenario,
                m.frames.len(),
                m.rule_count,
                m.object_count,
                m.episode_count,
                m.recall_object_count,
                config.out_dir.display(),
            );
            for t in &m.task_outcomes {
                println!(
                    "task {}: {} in {} ticks",
                    t.name,
                    if t.success { "success" } else { "failure" },
                    t.ticks
                );
            }
            Ok(())
        }
        Command::Mine(args) => {
            let config = to_config(&args);
            let n = cmd_mine(&config)?;
            println!("{n} rules -> {}", config.out_dir.join("rules.jsonl").display());
            Ok(())
        }
        Command::Probe { stores } => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            cmd_probe(&stores, BufReader::new(stdin.lock()), stdout.lock())
        }
        Command::Criterion { run, permutations } => {
            let config = to_config(&run);
            let report = cmd_criterion(&config, permutations)?;
            println!("ineffability:    {}", report.ineffability);
            println!("irreducibility:  {}", report.irreducibility);
            println!("intentionality:  {}", report.intentionality);
            println!("unity:           {}", report.unity);
            println!("criterion:       pass");
            Ok(())
        }
        Command::Report { out_dir } => {
            let text = cmd_report(&default_out_dir(out_dir))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
