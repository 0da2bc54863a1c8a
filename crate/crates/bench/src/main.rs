use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmhdg_bench::runner::write_convergence_csv;
use pmhdg_bench::spectrum::energy_spectrum;
use pmhdg_bench::{convergence_study, run_case, BenchError, BenchmarkConfig, Case};

#[derive(Parser)]
#[command(name = "pmhdg", about = "Particle-mesh HDG benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one case and write its report.
    Run {
        case: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run successive refinements and print an error/rate table as CSV.
    Convergence {
        case: String,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a flow case and print the shell energy spectrum of the final velocity.
    Spectrum {
        case: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sampling lattice points per side.
        #[arg(long, default_value_t = 128)]
        grid: usize,
        /// Shell range of the slope fit.
        #[arg(long, num_args = 2, default_values_t = [4, 20])]
        fit: Vec<usize>,
    },
}

fn load(case: &str, config: Option<&PathBuf>) -> Result<BenchmarkConfig, BenchError> {
    let case: Case = case.parse()?;
    match config {
        Some(path) => BenchmarkConfig::parse(&std::fs::read_to_string(path)?, Some(case)),
        None => Ok(BenchmarkConfig::preset(case)),
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run {
            case,
            config,
            out,
            seed,
        } => {
            let mut cfg = load(&case, config.as_ref())?;
            if let Some(dir) = out {
                cfg.output_dir = Some(dir);
            }
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let output = run_case(&cfg)?;
            if cfg.output_dir.is_none() {
                output.report.write_csv(std::io::stdout().lock())?;
            }
            if let Some(last) = output.report.last() {
                eprintln!(
                    "{}: t = {}, error = {:.3e}, particles = {} (min {} per cell), cfl = {:.2}, {:.1} s",
                    cfg.case, last.time, last.err_u, last.particles, last.min_ppc, output.cfl, last.wall_time
                );
            }
        }
        Command::Convergence {
            case,
            levels,
            config,
        } => {
            let cfg = load(&case, config.as_ref())?;
            let rows = convergence_study(&cfg, levels)?;
            write_convergence_csv(std::io::stdout().lock(), &rows)?;
        }
        Command::Spectrum {
            case,
            config,
            grid,
            fit,
        } => {
            let cfg = load(&case, config.as_ref())?;
            let output = run_case(&cfg)?;
            let s = energy_spectrum(&output.field, &output.tri, grid)?;
            println!("shell,energy");
            for (k, e) in s.shells.iter().zip(&s.energy) {
                println!("{k},{e:.12e}");
            }
            let slope = s.slope(fit[0], fit[1]).unwrap_or(f64::NAN);
            eprintln!(
                "slope over shells {}..={}: {slope:.3}, parseval mismatch {:.2e}",
                fit[0],
                fit[1],
                s.parseval_error()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
