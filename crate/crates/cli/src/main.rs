use clap::{Args, Parser, Subcommand};
use pseudomode_cli::commands::{cmd_audit, cmd_models, cmd_run, default_execution, load, Overrides};
use pseudomode_cli::selftest::run_selftest;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pseudomode", version, about = "Pseudomode construction and solvability-violation checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the structural conditions and the sign change (exit 0 licensed, 2 refused, 1 error)
    Audit(Common),
    /// Run the λ-sweep and write report.csv, summary.json and phase dumps
    Run(Common),
    /// Run the property suites of all modules
    Selftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// List built-in models
    Models,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used when omitted
    config: Option<PathBuf>,
    /// Built-in model name, replacing the config's model
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated λ values
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Phase truncation degree
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even when the audit refuses
    #[arg(long)]
    force: bool,
    /// Record wall-clock times (makes report.csv nondeterministic)
    #[arg(long)]
    timings: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.clone(),
            lambdas: self.lambda.clone(),
            k_trunc: self.k,
            rho: self.rho,
            out: self.out.clone(),
            force: self.force,
            timings: self.timings,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Models => {
            print!("{}", cmd_models());
            0
        }
        Cmd::Selftest { seed } => {
            let results = run_selftest(seed);
            let mut failed = 0;
            for r in &results {
                if r.pass {
                    println!("PASS {}", r.name);
                } else {
                    failed += 1;
                    println!("FAIL {}: {}", r.name, r.detail);
                }
            }
            println!("{} passed, {failed} failed", results.len() - failed);
            i32::from(failed > 0)
        }
        Cmd::Audit(c) => match load(c.config.as_deref(), &c.overrides()).and_then(|l| cmd_audit(&l)) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Cmd::Run(c) => match load(c.config.as_deref(), &c.overrides()).and_then(|l| cmd_run(&l, default_execution())) {
            Ok((code, _)) => code,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    };
    ExitCode::from(code as u8)
}
