use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qpop_core::crypto::{
    solve_dlog, verify_dlog, GroupParams, PuzzleSolution, PuzzleTarget, SolverBudget,
};
use qpop_core::harness::{
    committee_mc_with, render_report, run_scenario, write_outputs, Format, GenesisMode, McParams,
    ScenarioConfig,
};

#[derive(Parser)]
#[command(
    name = "qpop",
    version,
    about = "Committee BFT simulator with position-based Sybil resistance"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write committee.csv, metrics.json and events.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo of the committee composition chain.
    CommitteeMc {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: f64,
        /// Epochs per trial.
        #[arg(long = "T")]
        horizon: u64,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap genesis at f_1 < (1/3 - epsilon) n.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Start from exactly this many Byzantine seats.
        #[arg(long)]
        genesis_f: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Discrete logarithms in the quadratic residues mod a safe prime.
    Dlog {
        #[command(subcommand)]
        cmd: DlogCmd,
    },
    /// Re-read a run directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
    },
}

#[derive(Subcommand)]
enum DlogCmd {
    /// Print x with g^x = h (mod p).
    Solve {
        #[arg(long)]
        p: u64,
        #[arg(long)]
        q: u64,
        #[arg(long)]
        g: u64,
        #[arg(long)]
        h: u64,
    },
    /// Print 1 and exit 0 if g^x = h (mod p), else print 0 and exit 1.
    Verify {
        #[arg(long)]
        p: u64,
        #[arg(long)]
        q: u64,
        #[arg(long)]
        g: u64,
        #[arg(long)]
        h: u64,
        #[arg(long)]
        x: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config, seed, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ScenarioConfig::from_json(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = run_scenario(&cfg)?;
            for w in &output.report.warnings {
                eprintln!("warning: {w}");
            }
            write_outputs(&out, &output)?;
            let r = &output.report;
            println!(
                "epochs={} max_f_t={} commits={} view_changes={} safety_violation={}",
                r.epochs, r.max_f_t, r.commits, r.view_changes, r.safety_violation
            );
            println!("wrote {}", out.display());
        }
        Cmd::CommitteeMc {
            n,
            rho,
            horizon,
            trials,
            seed,
            epsilon,
            genesis_f,
            threads,
        } => {
            let mut p = McParams::new(n, rho, horizon, trials, seed);
            p.epsilon = epsilon;
            p.threads = threads;
            if let Some(f) = genesis_f {
                p.genesis = GenesisMode::Fixed(f);
            }
            let est = committee_mc_with(&p)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Cmd::Dlog { cmd } => return dlog(cmd),
        Cmd::Report { dir, format } => {
            let format = match format {
                ReportFormat::Csv => Format::Csv,
                ReportFormat::Json => Format::Json,
            };
            print!("{}", render_report(&dir, format)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dlog(cmd: DlogCmd) -> Result<ExitCode> {
    match cmd {
        DlogCmd::Solve { p, q, g, h } => {
            let gp = GroupParams::new(p, q, g)?;
            if !gp.in_subgroup(h) {
                bail!("h = {h} is not a quadratic residue mod {p}");
            }
            let x = solve_dlog(&gp, PuzzleTarget { h }, &mut SolverBudget::unlimited())?;
            println!("{}", x.x);
            Ok(ExitCode::SUCCESS)
        }
        DlogCmd::Verify { p, q, g, h, x } => {
            let gp = GroupParams::new(p, q, g)?;
            let ok = verify_dlog(&gp, PuzzleTarget { h }, PuzzleSolution { x });
            println!("{}", ok as u8);
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
