use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use waveinv::cli::{
    cmd_gradcheck, cmd_invert, cmd_postprocess, cmd_report, cmd_simulate, init_threads, RunConfig,
};
use waveinv::WaveError;

#[derive(Parser)]
#[command(
    name = "waveinv",
    about = "Wave-equation coefficient inversion: backscattered data simulation and adjoint-state conjugate-gradient reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate noisy backscattered data from the configured phantom
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the noise level in percent
        #[arg(long)]
        sigma: Option<f64>,
        /// Override the noise seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct the coefficient from a recorded trace
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Trace file written by simulate
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the iteration cap
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Check the adjoint gradient against finite differences
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Threshold a reconstructed field into an image
    Postprocess {
        #[arg(long)]
        config: PathBuf,
        /// Raw field file (c_final.bin)
        #[arg(long)]
        field: PathBuf,
        /// Override the threshold fraction P
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize one or more finished run directories
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn load(config: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig, WaveError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode, WaveError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            sigma,
            seed,
        } => {
            let mut cfg = load(&config, out)?;
            if let Some(s) = sigma {
                cfg.sigma = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            init_threads(cfg.threads);
            cmd_simulate(&cfg)?;
        }
        Command::Invert {
            config,
            trace,
            out,
            max_iter,
        } => {
            let mut cfg = load(&config, out)?;
            if let Some(m) = max_iter {
                cfg.max_iter = m;
            }
            init_threads(cfg.threads);
            cmd_invert(&cfg, &trace)?;
        }
        Command::Gradcheck { config } => {
            let cfg = load(&config, None)?;
            init_threads(cfg.threads);
            let report = cmd_gradcheck(&cfg)?;
            if report.best_rel_err > 0.01 {
                eprintln!(
                    "gradcheck FAILED: best relative error {:.3e} exceeds 1%",
                    report.best_rel_err
                );
                return Ok(ExitCode::from(1));
            }
            println!("gradcheck passed: best relative error {:.3e}", report.best_rel_err);
        }
        Command::Postprocess {
            config,
            field,
            p,
            out,
        } => {
            let mut cfg = load(&config, out)?;
            if let Some(p) = p {
                cfg.p_threshold = p;
            }
            init_threads(cfg.threads);
            cmd_postprocess(&cfg, &field)?;
        }
        Command::Report { dirs } => {
            print!("{}", cmd_report(&dirs)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
