use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wsireg_core::pipeline::{cmd_evaluate, cmd_register, cmd_synth, PipelineConfig, PipelineError};

/// Two-step whole-slide image registration.
#[derive(Debug, Parser)]
#[command(name = "wsireg", version, about)]
struct Cli {
    /// Log progress to standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a moving image onto a fixed image.
    Register {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// JSON pipeline config; omitted fields take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Saved rigid.json to use instead of template matching.
        #[arg(long)]
        rigid: Option<PathBuf>,
    },
    /// Register every pair of a manifest and write the landmark metric.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
        /// Maximum number of pairs registered at once.
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
        workers: Option<u16>,
    },
    /// Generate a synthetic pair with known ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Register {
            fixed,
            moving,
            config,
            out,
            rigid,
        } => {
            let cfg = PipelineConfig::from_json_file(&config)?;
            let report = cmd_register(&fixed, &moving, &cfg, &out, rigid.as_deref())?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "rigid rotated_180={} dx={} dy={} score={:.4}; mse {:.6} -> {:.6}; outputs in {}",
                report.rigid.rotated_180,
                report.rigid.dx,
                report.rigid.dy,
                report.rigid.score,
                report.deform.initial_mse,
                report.deform.final_mse,
                out.display()
            );
        }
        Command::Evaluate {
            manifest,
            out,
            workers,
        } => {
            let cohort = cmd_evaluate(&manifest, &out, workers.map(usize::from))?;
            if !cohort.failures.is_empty() {
                eprintln!("warning: {} pair(s) failed", cohort.failures.len());
            }
            println!(
                "median_p90_um={} over {} pair(s); written to {}",
                cohort.median_p90_um,
                cohort.per_image.len(),
                out.display()
            );
        }
        Command::Synth { spec, out } => {
            for path in cmd_synth(&spec, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error in stage {}: {}", e.stage, e.kind);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
