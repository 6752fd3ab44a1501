//! `dss` — command-line front end for the dss library.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric/singularity error
//! (including a failed gradient check), 4 training divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dss::commands::{
    cmd_bench, cmd_eig_report, cmd_grad_check, cmd_kernel_dump, cmd_train, KernelDumpArgs,
    GRAD_CHECK_THRESHOLD,
};
use dss::config::RunConfig;
use dss::DssError;

#[derive(Parser)]
#[command(name = "dss", version, about = "Diagonal state space sequence layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the complex kernel of a freshly initialized single-channel
    /// layer as CSV (channel,k,re,im).
    KernelDump {
        /// Eigenvalue init scheme: hippo, exp-random, s4d-inv, s4d-lin, linear.
        #[arg(long, default_value = "s4d-lin")]
        scheme: String,
        /// State space dimension N.
        #[arg(long, default_value_t = 4)]
        n_states: usize,
        /// Kernel length L.
        #[arg(long, default_value_t = 16)]
        length: usize,
        /// Fixed sampling interval; drawn from U[0.001, 0.1] (log-space) if omitted.
        #[arg(long)]
        delta: Option<f64>,
        /// Explicit eigenvalues re:im[,re:im...] overriding the scheme.
        #[arg(long)]
        lambda: Option<String>,
        /// Seed for the w and delta draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time naive vs FFT convolution over a power-of-two length range and
    /// write method,L,trials,median_ns,p90_ns rows.
    Bench {
        #[arg(long, default_value_t = 256)]
        min_length: usize,
        #[arg(long, default_value_t = 16384)]
        max_length: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients against central finite differences for
    /// the configured model; fails (exit 3) above max relative error 1e-4.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
    /// Train on the configured toy task, writing metrics NDJSON and the
    /// eigenvalue trajectory CSV to the configured output paths.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the model seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render an eigenvalue trajectory CSV as a standalone SVG plus the
    /// per-layer slope summary (layer,slope_im,mean_re).
    EigReport {
        #[arg(long)]
        trajectory_csv: PathBuf,
        #[arg(long)]
        svg_out: Option<PathBuf>,
        /// Slope summary path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<u8, DssError> {
    match cli.command {
        Command::KernelDump {
            scheme,
            n_states,
            length,
            delta,
            lambda,
            seed,
            out,
        } => {
            cmd_kernel_dump(&KernelDumpArgs {
                scheme,
                n_states,
                length,
                delta,
                lambda,
                seed,
                out,
            })?;
            Ok(0)
        }
        Command::Bench {
            min_length,
            max_length,
            trials,
            out,
        } => {
            cmd_bench(min_length, max_length, trials, out.as_deref())?;
            Ok(0)
        }
        Command::GradCheck { config, epsilon } => {
            let config = RunConfig::from_path(&config)?;
            let report = cmd_grad_check(&config, epsilon)?;
            println!(
                "max relative error {:.3e} over {} coordinates (worst: {})",
                report.max_rel_error, report.checked_coords, report.worst_param
            );
            if report.max_rel_error > GRAD_CHECK_THRESHOLD {
                eprintln!(
                    "gradient check FAILED: {:.3e} > {GRAD_CHECK_THRESHOLD:e}",
                    report.max_rel_error
                );
                Ok(3)
            } else {
                Ok(0)
            }
        }
        Command::Train { config, seed } => {
            let mut config = RunConfig::from_path(&config)?;
            if let Some(seed) = seed {
                config.model.seed = seed;
            }
            let outcome = cmd_train(&config)?;
            for m in &outcome.metrics {
                match m.accuracy {
                    Some(acc) => println!(
                        "epoch {} step {} lr {:.3e} loss {:.6} accuracy {:.4}",
                        m.epoch, m.step, m.lr, m.loss, acc
                    ),
                    None => println!(
                        "epoch {} step {} lr {:.3e} loss {:.6}",
                        m.epoch, m.step, m.lr, m.loss
                    ),
                }
            }
            Ok(0)
        }
        Command::EigReport {
            trajectory_csv,
            svg_out,
            out,
        } => {
            cmd_eig_report(&trajectory_csv, svg_out.as_deref(), out.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
