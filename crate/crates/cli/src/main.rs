use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, Parser, Subcommand};
use wienervar_cli::config::{ConfigError, ExperimentConfig, RunArgs};
use wienervar_cli::criteria::{suite, SUITES};
use wienervar_cli::runner::{execute, format_table, write_artifacts};

const EX_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "wienervar", version, about = "Variational estimates on discrete Wiener space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report.json, report.csv and policy.json.
    Run(RunArgs),
    /// Run an acceptance suite: identities, optima, picard or interval.
    Verify { suite: String },
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    ExitCode::from(EX_USAGE)
}

fn run(args: &RunArgs) -> ExitCode {
    let cfg = match ExperimentConfig::resolve(args) {
        Ok(c) => c,
        Err(ConfigError(msg)) => return usage_error(&msg),
    };
    let start = Instant::now();
    let out = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    if let Err(e) = write_artifacts(&cfg, &out, elapsed) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    print!("{}", format_table(&out.rows));
    if let Some(h) = &out.headline {
        println!("{h}");
    }
    println!("wall clock: {elapsed:.3} s; artifacts in {}", cfg.out_dir.display());
    if out.degenerate {
        eprintln!("warning: degenerate estimate");
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}

fn verify(name: &str) -> ExitCode {
    let Some(criteria) = suite(name) else {
        return usage_error(&format!("unknown suite `{name}` (expected one of {})", SUITES.join(", ")));
    };
    let mut all = true;
    for c in criteria {
        let result = c();
        println!("{result}");
        all &= result.passed();
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EX_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Verify { suite } => verify(suite),
    }
}
