//! Implementations behind the `dss` binary's subcommands. Everything here is
//! a plain function so the behaviors (and their error-to-exit-code mapping)
//! are testable without spawning a process.

use std::hint::black_box;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::conv::{fft_conv, naive_conv};
use crate::error::{DssError, Result};
use crate::init::{init_delta, init_eigenvalues, init_w, InitScheme};
use crate::kernel::{compute_kernel, write_kernel_csv, DssParams, EigenvalueSet};
use crate::report::{render_trajectory_svg, write_slope_csv};
use crate::train::{grad_check, train_toy, GradCheckReport, TrainOutcome};
use crate::trajectory::{EigenTrajectory, TrajectorySummary};

/// CLI gradient-check pass threshold.
pub const GRAD_CHECK_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct KernelDumpArgs {
    pub scheme: String,
    pub n_states: usize,
    pub length: usize,
    /// Fixed sampling interval; drawn from the init distribution when absent.
    pub delta: Option<f64>,
    /// Explicit eigenvalues `re:im[,re:im...]`, overriding the scheme.
    pub lambda: Option<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn parse_lambda_list(text: &str) -> Result<EigenvalueSet> {
    let mut values = Vec::new();
    for part in text.split(',') {
        let (re, im) = part.split_once(':').ok_or_else(|| {
            DssError::Config(format!("bad eigenvalue '{part}', expected re:im"))
        })?;
        let re: f64 = re
            .trim()
            .parse()
            .map_err(|e| DssError::Config(format!("bad eigenvalue real part '{re}': {e}")))?;
        let im: f64 = im
            .trim()
            .parse()
            .map_err(|e| DssError::Config(format!("bad eigenvalue imag part '{im}': {e}")))?;
        values.push(Complex64::new(re, im));
    }
    EigenvalueSet::from_complex(&values)
}

/// Dumps the complex kernel of a freshly initialized single-channel layer as
/// CSV (`channel,k,re,im`).
pub fn cmd_kernel_dump(args: &KernelDumpArgs) -> Result<()> {
    if args.length == 0 {
        return Err(DssError::Config("--length must be >= 1".into()));
    }
    let eigenvalues = match &args.lambda {
        Some(text) => parse_lambda_list(text)?,
        None => {
            if args.n_states == 0 {
                return Err(DssError::Config("--n-states must be >= 1".into()));
            }
            init_eigenvalues(InitScheme::parse(&args.scheme, args.seed)?, args.n_states)?
        }
    };
    let n = eigenvalues.len();
    let (w_re, w_im) = init_w(1, n, args.seed)?;
    let log_delta = match args.delta {
        Some(delta) => {
            if !(delta > 0.0) {
                return Err(DssError::Config(format!(
                    "--delta must be positive, got {delta}"
                )));
            }
            Array1::from_elem(1, delta.ln())
        }
        None => init_delta(1, args.seed)?,
    };
    let params = DssParams::new(eigenvalues, w_re, w_im, log_delta, args.length)?;
    let kernel = compute_kernel(&params, 0)?;
    write_output(args.out.as_deref(), |mut out| {
        write_kernel_csv(&mut out, &[kernel.clone()])
    })
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: &'static str,
    pub length: usize,
    pub trials: usize,
    pub median_ns: u128,
    pub p90_ns: u128,
}

fn time_ns<F: FnMut()>(mut f: F, trials: usize) -> (u128, u128) {
    f(); // warmup
    let mut times: Vec<u128> = (0..trials)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    let median = times[times.len() / 2];
    let p90 = times[(times.len() * 9 / 10).min(times.len() - 1)];
    (median, p90)
}

/// Times naive and FFT convolution over a power-of-two length range.
pub fn run_bench(min_length: usize, max_length: usize, trials: usize) -> Result<Vec<BenchRow>> {
    if !min_length.is_power_of_two() || !max_length.is_power_of_two() {
        return Err(DssError::Config(
            "bench lengths must be powers of two".into(),
        ));
    }
    if min_length > max_length || min_length == 0 {
        return Err(DssError::Config("need 0 < min-length <= max-length".into()));
    }
    if trials == 0 {
        return Err(DssError::Config("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    let mut rows = Vec::new();
    let mut len = min_length;
    loop {
        let kernel: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (median, p90) = time_ns(
            || {
                black_box(naive_conv(black_box(&kernel), black_box(&signal)).unwrap());
            },
            trials,
        );
        rows.push(BenchRow {
            method: "naive",
            length: len,
            trials,
            median_ns: median,
            p90_ns: p90,
        });
        let (median, p90) = time_ns(
            || {
                black_box(fft_conv(black_box(&kernel), black_box(&signal)).unwrap());
            },
            trials,
        );
        rows.push(BenchRow {
            method: "fft",
            length: len,
            trials,
            median_ns: median,
            p90_ns: p90,
        });
        if len == max_length {
            break;
        }
        len *= 2;
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(out: &mut W, rows: &[BenchRow]) -> Result<()> {
    writeln!(out, "method,L,trials,median_ns,p90_ns")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.method, row.length, row.trials, row.median_ns, row.p90_ns
        )?;
    }
    Ok(())
}

pub fn cmd_bench(
    min_length: usize,
    max_length: usize,
    trials: usize,
    out: Option<&Path>,
) -> Result<Vec<BenchRow>> {
    let rows = run_bench(min_length, max_length, trials)?;
    write_output(out, |mut w| write_bench_csv(&mut w, &rows))?;
    Ok(rows)
}

/// Runs the finite-difference check for the configured model.
pub fn cmd_grad_check(config: &RunConfig, epsilon: f64) -> Result<GradCheckReport> {
    grad_check(config, epsilon)
}

/// Trains per the config and writes the metrics NDJSON and trajectory CSV to
/// the configured output paths.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let outcome = train_toy(config)?;
    if let Some(path) = &config.output.metrics {
        ensure_parent(path)?;
        let mut file = std::fs::File::create(path)?;
        crate::train::write_metrics_ndjson(&mut file, &outcome.metrics)?;
    }
    if let Some(path) = &config.output.trajectory {
        ensure_parent(path)?;
        let mut file = std::fs::File::create(path)?;
        outcome.trajectory.write_csv(&mut file)?;
    }
    Ok(outcome)
}

/// Reads a trajectory CSV and emits the SVG plot and per-layer slope table.
pub fn cmd_eig_report(
    trajectory_csv: &Path,
    svg_out: Option<&Path>,
    slope_out: Option<&Path>,
) -> Result<Vec<TrajectorySummary>> {
    let file = std::fs::File::open(trajectory_csv).map_err(|e| {
        DssError::Config(format!(
            "cannot open trajectory {}: {e}",
            trajectory_csv.display()
        ))
    })?;
    let traj = EigenTrajectory::read_csv(std::io::BufReader::new(file))?;
    if let Some(path) = svg_out {
        ensure_parent(path)?;
        std::fs::write(path, render_trajectory_svg(&traj))?;
    }
    let summaries = traj.final_summaries();
    write_output(slope_out, |mut w| write_slope_csv(&mut w, &summaries))?;
    Ok(summaries)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_output<F>(path: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(path) => {
            ensure_parent(path)?;
            let mut file = std::fs::File::create(path)?;
            write(&mut file)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}
