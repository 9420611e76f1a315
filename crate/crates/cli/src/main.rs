use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use graphsrd::io::{run_config, Config, Task, EXIT_CONFIG, SUMMARY_FILE};

/// Stochastic reaction-diffusion on metric graphs.
#[derive(Debug, Parser)]
#[command(name = "graphsrd", version)]
struct Args {
    /// Experiment config (TOML).
    config: PathBuf,

    /// Override the task named in the config.
    #[arg(long)]
    task: Option<String>,

    /// Override the solver seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory receiving the result bundle.
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,

    /// Worker threads for ensembles; never changes the results.
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Do not print the summary.
    #[arg(long)]
    quiet: bool,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return code(EXIT_CONFIG);
        }
    };
    let mut cfg = match Config::parse_unchecked(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return code(e.exit_code());
        }
    };
    if let Some(t) = &args.task {
        match t.parse::<Task>() {
            Ok(t) => cfg.task = t,
            Err(e) => {
                eprintln!("error: {e}");
                return code(e.exit_code());
            }
        }
    }
    if let Some(s) = args.seed {
        cfg.solver.seed = s;
    }
    let out = match run_config(&cfg, args.threads.max(1)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return code(e.exit_code());
        }
    };
    if let Err(e) = out.bundle.write_to(&args.out_dir) {
        eprintln!("error: cannot write results to {}: {e}", args.out_dir.display());
        return code(e.exit_code());
    }
    if !args.quiet {
        print!("{}", out.bundle.body(SUMMARY_FILE).unwrap_or(""));
    }
    if out.exit_code != 0 {
        if let Some(msg) = out.bundle.summary_value("error") {
            eprintln!("error: {msg}");
        }
    }
    code(out.exit_code)
}
