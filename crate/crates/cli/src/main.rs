use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use collective::commands::{self, Overrides, SchemeKind, SimulateArgs, StrategyKind};
use collective::suites::{Suite, ALL};

#[derive(Parser)]
#[command(name = "collective", version, about = "Collective pension fund experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo paths and trials, overriding `run.paths` and `run.trials`.
    #[arg(long)]
    trials: Option<u64>,
    /// Monotonicity tolerance, overriding `run.tolerance`.
    #[arg(long)]
    tolerance: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, trials: self.trials, tolerance: self.tolerance }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Value functions of every configured fund.
    Solve(Common),
    /// Monte Carlo run of a named strategy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        strategy: Option<StrategyKind>,
        /// JSON schedule `{"consumption": [...], "risky_fraction": x}`.
        #[arg(long, conflicts_with = "strategy")]
        strategy_file: Option<PathBuf>,
        /// Index into `funds`.
        #[arg(long, default_value_t = 0)]
        fund: usize,
        /// Finite collective size; infinite when omitted.
        #[arg(long)]
        size: Option<u64>,
        /// Paths written to the trajectory table.
        #[arg(long, default_value_t = 20)]
        keep: usize,
    },
    /// Run a verification suite, or `all`.
    Verify {
        /// monotone, annuity, convergence, axioms, pareto, bsde, market or all.
        suite: String,
        #[command(flatten)]
        common: Common,
    },
    /// Check the three axioms for one management scheme.
    AuditScheme {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "basic")]
        scheme: SchemeKind,
    },
    /// Value and truncation tables against collective size.
    ConvergenceStudy(Common),
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve(c) => {
            let (_, cfg, sink) = commands::open(&c.config, c.out.as_deref(), &c.overrides())?;
            commands::solve(&cfg, &sink)?;
            println!("wrote {}", sink.dir().display());
            Ok(true)
        }
        Command::Simulate { common: c, strategy, strategy_file, fund, size, keep } => {
            let (_, cfg, sink) = commands::open(&c.config, c.out.as_deref(), &c.overrides())?;
            commands::simulate(&cfg, &sink, &SimulateArgs { strategy, strategy_file, fund, size, keep })?;
            println!("wrote {}", sink.dir().display());
            Ok(true)
        }
        Command::Verify { suite, common: c } => {
            let which: Vec<Suite> = if suite == "all" { ALL.to_vec() } else { vec![suite.parse()?] };
            let (_, cfg, sink) = commands::open(&c.config, c.out.as_deref(), &c.overrides())?;
            let reports = commands::verify(&cfg, &sink, &which)?;
            for r in &reports {
                print!("{}", r.summary());
            }
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::AuditScheme { common: c, scheme } => {
            let (_, cfg, sink) = commands::open(&c.config, c.out.as_deref(), &c.overrides())?;
            let ok = commands::audit_scheme(&cfg, &sink, scheme)?;
            println!("{scheme:?}: {}", if ok { "all axioms hold" } else { "axiom violations, see audit_scheme.json" });
            Ok(ok)
        }
        Command::ConvergenceStudy(c) => {
            let (_, cfg, sink) = commands::open(&c.config, c.out.as_deref(), &c.overrides())?;
            commands::convergence(&cfg, &sink)?;
            println!("wrote {}", sink.dir().display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
