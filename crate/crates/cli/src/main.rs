use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brw_cli::acceptance::CRITERIA;
use brw_cli::pipeline::{self, Outcome, Prepared, RunOptions};
use brw_cli::{CliError, CliResult};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brw", version, about = "Branching random walk extremes lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Artifact directory; defaults to `output.dir` or `brw-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    #[arg(long, hide = true)]
    stop_after: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the calibrated constants of the configured model.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate, analyze and write the artifact directory.
    Simulate(RunArgs),
    /// Write the exact law of the maximum for the configured model and n.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the diagnostics of an artifact directory.
    Analyze {
        #[arg(long)]
        out: PathBuf,
    },
    /// Check integrity, print the verdict table and write plot data.
    Report {
        #[arg(value_name = "DIR")]
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite (all criteria, or the listed numbers).
    Verify {
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn out_dir(p: &Prepared, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| p.cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("brw-out"))
}

fn print_verdicts(v: &[brw_cli::Verdict]) {
    for x in v {
        println!("{}", x.line());
    }
}

fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Calibrate { config } => {
            let p = Prepared::load(&config, None)?;
            println!("{}", pipeline::calibrate_json(&p));
            Ok(0)
        }
        Command::Simulate(a) => {
            let p = Prepared::load(&a.config, a.seed)?;
            let out = out_dir(&p, a.out);
            let opts = RunOptions { seed: a.seed, workers: a.workers, resume: a.resume, stop_after: a.stop_after };
            let outcome = pipeline::simulate(&p, &out, &opts)?;
            match &outcome {
                Outcome::Stopped { done } => println!("stopped after {done} replicates; checkpoint in {}", out.display()),
                Outcome::Finished { verdicts } => {
                    println!("wrote {}", out.display());
                    print_verdicts(verdicts);
                }
            }
            Ok(outcome.exit_code())
        }
        Command::Oracle { config, out } => {
            let p = Prepared::load(&config, None)?;
            let path = pipeline::oracle(&p, &out_dir(&p, out))?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Analyze { out } => {
            let v = pipeline::analyze(&out)?;
            print_verdicts(&v);
            Ok(if v.iter().all(|x| x.pass) { 0 } else { 1 })
        }
        Command::Report { dir, out } => {
            let dir = dir.or(out).ok_or_else(|| CliError::Config("report needs a directory".into()))?;
            let r = pipeline::report(Path::new(&dir))?;
            print!("{}", r.text);
            for f in &r.plot_files {
                println!("plot data  {}", f.display());
            }
            Ok(r.exit_code())
        }
        Command::Verify { only, workers } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.unwrap_or(0))
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut failed = 0;
            for (number, f) in CRITERIA {
                if !only.is_empty() && !only.contains(&number) {
                    continue;
                }
                let started = std::time::Instant::now();
                match pool.install(f) {
                    Ok(r) => {
                        failed += usize::from(!r.pass());
                        for l in r.lines() {
                            println!("{l}");
                        }
                    }
                    Err(e) => {
                        failed += 1;
                        println!("criterion {number:>2} ERROR {e}");
                    }
                }
                println!("    ({:.1} s)", started.elapsed().as_secs_f64());
            }
            Ok(i32::from(failed > 0))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
