use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use progprune::harness::{run, verify_run_dir, write_reports, EpochReport, RunConfig};
use progprune::pruning::{count_flops, count_params};
use progprune::Error;

#[derive(Parser)]
#[command(name = "progprune", version, about = "Progressive filter pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and prune as configured, writing reports to the output directory.
    Run {
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter and FLOP counts of the configured (unpruned) model.
    Count { config: PathBuf },
    /// Replay the prune log of a finished run and re-check every audit.
    Verify { run_dir: PathBuf },
}

fn print_epoch(e: &EpochReport) {
    eprintln!(
        "{:?} {:>3}  loss {:.4}  train err {:.2}%  test err {:.2}% -> {:.2}%  params {}  flops {}  ({:.1}s)",
        e.phase, e.epoch, e.train_loss, e.train_error, e.test_error_pre_prune, e.test_error, e.params, e.flops, e.wall_time_s
    );
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let dir = out
                .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
                .ok_or_else(|| Error::Config("no output directory: set [output] dir or pass --out".into()))?;
            let outcome = run(&cfg, print_epoch)?;
            write_reports(&dir, &outcome.summary, &outcome.log)?;
            println!(
                "{}: {} params, {} FLOPs, test error {:.2}% (best {:.2}%) -> {}",
                cfg.name,
                outcome.summary.final_params,
                outcome.summary.final_flops,
                outcome.summary.final_test_error,
                outcome.summary.best_test_error,
                dir.display()
            );
        }
        Command::Count { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let graph = cfg.build_model()?;
            println!("params\t{}", count_params(&graph));
            println!("flops\t{}", count_flops(&graph)?);
        }
        Command::Verify { run_dir } => {
            let r = verify_run_dir(&run_dir)?;
            println!(
                "ok: {} prune events replayed, {} audits passed, final {} params / {} FLOPs",
                r.prune_events, r.audits, r.final_params, r.final_flops
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(match e.category() {
                "config" => 2,
                "io" => 3,
                "audit" => 4,
                _ => 1,
            })
        }
    }
}
