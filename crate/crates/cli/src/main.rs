use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relpose_cli::commands::{self, EvalArgs, ReportArgs};
use relpose_cli::{EvalOptions, EvalReport, RunConfig};
use relpose_core::data::SynthConfig;
use relpose_core::train::EpochLog;
use relpose_core::{Result, Variant};

#[derive(Parser)]
#[command(name = "relpose", version, about = "Relative camera pose regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a pair manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Fit a least-squares translation scale per scene before scoring.
        #[arg(long)]
        scale_align: bool,
        /// Also report medians pooled over all pairs.
        #[arg(long)]
        pooled: bool,
        /// Output directory [default: <checkpoint dir>/eval].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run config whose architecture the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate one ablation variant.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// full, no_warp, cnn_only or self_attn_only.
        #[arg(long)]
        variant: String,
    },
    /// Generate a synthetic scene.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        pairs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// CDF and histogram charts from an error CSV.
    Report {
        #[arg(long)]
        errors: PathBuf,
        /// Truncate rotation charts at this many degrees.
        #[arg(long)]
        cutoff_deg: Option<f64>,
        /// Histogram bin width for rotation (degrees) and generic errors.
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        /// Histogram bin width for translation (meters).
        #[arg(long, default_value_t = 0.05)]
        bin_width_m: f64,
        /// Output directory [default: directory of the CSV].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_epoch(log: &EpochLog) {
    let val = log.val_loss.map(|v| format!(" val {v:.5}")).unwrap_or_default();
    println!(
        "epoch {} lr {:.3e} train {:.5}{val} s [{:.4}, {:.4}, {:.4}] skipped {}",
        log.epoch, log.lr, log.train_loss, log.s[0], log.s[1], log.s[2], log.skipped
    );
}

fn print_report(report: &EvalReport) {
    for s in &report.scenes {
        let scale = s.scale.map(|v| format!(" scale {v:.4}")).unwrap_or_default();
        println!(
            "{}: {} pairs, median {:.3} deg / {:.4} m{scale}",
            s.scene, s.pairs, s.median_rotation_deg, s.median_translation_m
        );
    }
    println!(
        "average: {:.3} deg / {:.4} m ({} skipped)",
        report.average_rotation_deg, report.average_translation_m, report.skipped
    );
    if let Some((r, t)) = report.pooled {
        println!("pooled median: {r:.3} deg / {t:.4} m");
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = commands::train(&cfg, print_epoch)?;
            println!("best checkpoint: {}", out.best.display());
        }
        Command::Eval {
            checkpoint,
            pairs,
            scale_align,
            pooled,
            out,
            config,
        } => {
            let out = out.unwrap_or_else(|| parent(&checkpoint).join("eval"));
            let report = commands::eval(&EvalArgs {
                checkpoint,
                pairs,
                out,
                options: EvalOptions { scale_align, pooled },
                config,
            })?;
            print_report(&report);
        }
        Command::Ablate { config, variant } => {
            let variant: Variant = variant.parse()?;
            let cfg = RunConfig::load(&config)?;
            let report = commands::ablate(&cfg, variant, print_epoch)?;
            print_report(&report);
        }
        Command::Synth {
            seed,
            pairs,
            out,
            height,
            width,
            points,
        } => {
            let cfg = SynthConfig {
                seed,
                n_pairs: pairs,
                height,
                width,
                n_points: points,
                ..SynthConfig::default()
            };
            let records = commands::synth(&cfg, &out)?;
            println!("wrote {} pairs to {}", records.len(), out.display());
        }
        Command::Report {
            errors,
            cutoff_deg,
            bin_width,
            bin_width_m,
            out,
        } => {
            let out = out.unwrap_or_else(|| parent(&errors));
            let files = commands::report(&ReportArgs {
                errors,
                out: out.clone(),
                cutoff_deg,
                bin_width,
                bin_width_m,
            })?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
