use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rspin::cli::{self, Options};
use rspin::scheduler::Sign;
use rspin::theory::TheoryParams;

#[derive(Parser)]
#[command(
    name = "rspin",
    about = "Exact-rational calculator for genus-zero open r-spin and Fermat FJRW intersection numbers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Persistent value cache (loaded before, saved after; advisory lock)
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Closed-extended value table (repeatable)
    #[arg(long = "closed-table", global = true)]
    closed_tables: Vec<PathBuf>,
    /// Treat blocked computations as errors
    #[arg(long, global = true)]
    strict: bool,
    /// Sign convention for the no-internal initial correlator
    #[arg(long, global = true, default_value = "+", value_parser = parse_sign)]
    sign: Sign,
    /// Worker threads for table generation
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TheoryOpts {
    /// Spin order r >= 2
    #[arg(long)]
    r: i64,
    /// Level h, 0 <= h <= (r-2)/2
    #[arg(long, default_value_t = 0)]
    h: i64,
    /// Number of Witten-bundle copies (odd; 1 for open r-spin)
    #[arg(long, default_value_t = 1)]
    m: i64,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one correlator from its canonical key string
    Eval {
        /// e.g. o|r=7,h=0,m=1|I=2:0|B=5,5,5
        key: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Compute all primary correlators up to a dimension bound
    Table {
        #[command(flatten)]
        theory: TheoryOpts,
        #[arg(long, default_value_t = 0)]
        max_dim: i64,
        /// Write the table here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Verify that all expansion choices compute the same numbers
    Check {
        #[command(flatten)]
        theory: TheoryOpts,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Cross-validate the h = 0 theory against the BCT graph-sum path
    Compare {
        #[command(flatten)]
        theory: TheoryOpts,
        #[arg(long, default_value_t = 0)]
        max_dim: i64,
        /// Restrict to primary correlators (the identity part of the check)
        #[arg(long)]
        primary_only: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn parse_sign(s: &str) -> Result<Sign, String> {
    match s {
        "+" => Ok(Sign::Plus),
        "-" => Ok(Sign::Minus),
        other => Err(format!("expected '+' or '-', got {other:?}")),
    }
}

fn options(common: &CommonOpts) -> Options {
    Options {
        cache: common.cache.clone(),
        closed_tables: common.closed_tables.clone(),
        strict: common.strict,
        sign: common.sign,
        jobs: common.jobs,
    }
}

fn theory(opts: &TheoryOpts) -> Result<TheoryParams, cli::CliError> {
    TheoryParams::new(opts.r, opts.h, opts.m).map_err(cli::CliError::Domain)
}

fn run() -> Result<cli::CmdOutput, cli::CliError> {
    match Cli::parse().command {
        Command::Eval { key, common } => cli::cmd_eval(&key, &options(&common)),
        Command::Table {
            theory: t,
            max_dim,
            out,
            common,
        } => cli::cmd_table(theory(&t)?, max_dim, out.as_deref(), &options(&common)),
        Command::Check {
            theory: t,
            samples,
            seed,
            common,
        } => cli::cmd_check(theory(&t)?, samples, seed, &options(&common)),
        Command::Compare {
            theory: t,
            max_dim,
            primary_only,
            common,
        } => cli::cmd_compare(theory(&t)?, max_dim, primary_only, &options(&common)),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(output) => {
            print!("{}", output.text);
            ExitCode::from(output.code as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::EXIT_ERROR as u8)
        }
    }
}
