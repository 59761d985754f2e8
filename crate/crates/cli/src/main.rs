//! Command-line front end: `run`, `report` and `validate`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wassinc::scenario::{self, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "wassinc", version, about = "Differential inclusions in Wasserstein spaces, by particles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its results and manifest.
    Run {
        file: PathBuf,
        /// Output directory, overriding the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize finished runs and write plot-ready curves.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Check a scenario against the schema and the hypothesis battery.
    Validate { file: PathBuf },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("WASSINC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("WASSINC_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { code(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return code(EXIT_INPUT);
    }
    match cli.command {
        Command::Run { file, out } => {
            let r = scenario::run(&file, out.as_deref());
            for m in &r.messages {
                eprintln!("{m}");
            }
            if let Some(dir) = &r.out_dir {
                let passed = r.certificates.iter().filter(|c| c.pass).count();
                println!("wrote {}", dir.display());
                if !r.certificates.is_empty() {
                    println!("certificates {passed}/{}", r.certificates.len());
                }
            }
            code(r.exit_code)
        }
        Command::Report { dirs } => {
            let r = scenario::report(&dirs);
            for l in &r.lines {
                println!("{l}");
            }
            for e in &r.errors {
                eprintln!("{e}");
            }
            code(r.exit_code)
        }
        Command::Validate { file } => {
            let (c, lines) = scenario::validate(&file);
            for l in &lines {
                if c == 0 {
                    println!("{l}");
                } else {
                    eprintln!("{l}");
                }
            }
            code(c)
        }
    }
}
