use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use redip_cli::commands::{self, DenoiseArgs, EngineKind, VerifyArgs};
use redip_cli::failure::CliResult;

#[derive(Parser)]
#[command(
    name = "redip",
    version,
    about = "DIP + RED image denoising and RED-condition checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise one image with the three-block ADMM solver.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Clean image for per-iteration PSNR/SSIM.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "drunet-lite")]
        engine: EngineKind,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Certificate from a prior `verify` run, echoed into the report.
        #[arg(long)]
        certificate: Option<PathBuf>,
        /// Leave wall-clock fields out of the report.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Certify the RED conditions for an engine over a corpus of images.
    Verify {
        #[arg(long, value_enum)]
        engine: EngineKind,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = redip_core::verify::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = redip_core::verify::DEFAULT_RHO)]
        rho: f64,
        #[arg(long)]
        report: PathBuf,
        /// Side of the centre crop taken from each image.
        #[arg(long, default_value_t = 16)]
        patch: usize,
        /// AWGN added to each patch before the checks.
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        blur_sigma: f64,
        #[arg(long, default_value_t = 1)]
        median_radius: usize,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Image metrics against a reference.
    Metrics {
        input: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Noise utilities.
    Noise {
        #[command(subcommand)]
        command: NoiseCommand,
    },
    /// Write the synthetic test cards.
    Cards {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value = "png")]
        format: String,
    },
    /// Weight file utilities.
    Weights {
        #[command(subcommand)]
        command: WeightsCommand,
    },
}

#[derive(Subcommand)]
enum NoiseCommand {
    /// Add white Gaussian noise (sigma on the [0,1] scale), clamped to [0,1].
    Add {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum WeightsCommand {
    /// Build the mirrored drunet-lite weights and topology file.
    Build {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Denoise {
            input,
            output,
            reference,
            engine,
            weights,
            config,
            report,
            certificate,
            no_timestamp,
        } => commands::denoise(&DenoiseArgs {
            input,
            output,
            reference,
            engine,
            weights,
            config,
            report,
            certificate,
            no_timestamp,
        }),
        Command::Verify {
            engine,
            weights,
            corpus,
            epsilon,
            rho,
            report,
            patch,
            noise_sigma,
            seed,
            blur_sigma,
            median_radius,
            no_timestamp,
        } => {
            let cert = commands::verify(&VerifyArgs {
                engine,
                weights,
                corpus,
                epsilon,
                rho,
                report,
                patch,
                noise_sigma,
                seed,
                blur_sigma,
                median_radius,
                no_timestamp,
            })?;
            let v = &cert.verdicts;
            println!(
                "differentiability {}  homogeneity {}  symmetry {}  collapse {}",
                pass(v.differentiability),
                pass(v.homogeneity),
                pass(v.symmetry),
                pass(v.collapse)
            );
            Ok(())
        }
        Command::Metrics {
            input,
            reference,
            report,
        } => {
            let m = commands::metrics(&input, &reference, &report)?;
            println!("mse {:.6e}  psnr {:.4}  ssim {:.6}", m.mse, m.psnr, m.ssim);
            Ok(())
        }
        Command::Noise {
            command:
                NoiseCommand::Add {
                    sigma,
                    seed,
                    input,
                    output,
                },
        } => commands::noise_add(sigma, seed, &input, &output),
        Command::Cards {
            out,
            size,
            channels,
            format,
        } => {
            for p in commands::write_cards(&out, size, channels, &format)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Weights {
            command: WeightsCommand::Build { out, channels, seed },
        } => commands::build_weights(&out, channels, seed),
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
