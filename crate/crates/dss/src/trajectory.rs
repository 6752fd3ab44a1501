//! Eigenvalue trajectory tracking during training.
//!
//! Snapshots record the (re, im) eigenvalue vectors of every DSS module at
//! chosen steps without touching model state. The summary fits, per layer
//! and snapshot, the least-squares slope of Im(lambda_n) against the index n
//! and the mean of Re(lambda_n) — the quantities behind the damped-Fourier
//! reading of trained kernels.

use std::io::{BufRead, Write};

use crate::error::{DssError, Result};
use crate::model::EncoderStack;

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Per-layer snapshot series; layers are DSS modules in forward order.
#[derive(Debug, Clone, Default)]
pub struct EigenTrajectory {
    pub layers: Vec<Vec<Snapshot>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub layer: usize,
    pub step: usize,
    pub slope_im: f64,
    pub mean_re: f64,
}

impl EigenTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the current eigenvalues of every DSS module in the stack.
    pub fn record(&mut self, stack: &EncoderStack, step: usize) {
        let eigen = stack.dss_eigenvalues();
        if self.layers.is_empty() {
            self.layers = vec![Vec::new(); eigen.len()];
        }
        for (layer, (re, im)) in eigen.into_iter().enumerate() {
            self.layers[layer].push(Snapshot {
                step,
                re: re.column(0).to_vec(),
                im: im.column(0).to_vec(),
            });
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Least-squares slope of im vs index and mean re, per layer and snapshot.
    pub fn summaries(&self) -> Vec<TrajectorySummary> {
        let mut out = Vec::new();
        for (layer, snapshots) in self.layers.iter().enumerate() {
            for snap in snapshots {
                out.push(TrajectorySummary {
                    layer,
                    step: snap.step,
                    slope_im: least_squares_slope(&snap.im),
                    mean_re: mean(&snap.re),
                });
            }
        }
        out
    }

    /// Summary rows for the latest snapshot of each layer.
    pub fn final_summaries(&self) -> Vec<TrajectorySummary> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(layer, snapshots)| {
                snapshots.last().map(|snap| TrajectorySummary {
                    layer,
                    step: snap.step,
                    slope_im: least_squares_slope(&snap.im),
                    mean_re: mean(&snap.re),
                })
            })
            .collect()
    }

    /// CSV rows `layer,step,n,re,im`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "layer,step,n,re,im")?;
        for (layer, snapshots) in self.layers.iter().enumerate() {
            for snap in snapshots {
                for n in 0..snap.re.len() {
                    writeln!(
                        out,
                        "{layer},{},{n},{:.16e},{:.16e}",
                        snap.step, snap.re[n], snap.im[n]
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(header)) if header.trim() == "layer,step,n,re,im" => {}
            Some(Ok(other)) => {
                return Err(DssError::Config(format!(
                    "bad trajectory header: '{other}'"
                )))
            }
            Some(Err(e)) => return Err(e.into()),
            None => return Err(DssError::Config("empty trajectory file".into())),
        }
        let mut traj = EigenTrajectory::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(DssError::Config(format!(
                    "expected 5 fields per trajectory row, got '{line}'"
                )));
            }
            let parse_usize = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| DssError::Config(format!("bad integer '{s}': {e}")))
            };
            let parse_f64 = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| DssError::Config(format!("bad number '{s}': {e}")))
            };
            let layer = parse_usize(fields[0])?;
            let step = parse_usize(fields[1])?;
            let n = parse_usize(fields[2])?;
            let re = parse_f64(fields[3])?;
            let im = parse_f64(fields[4])?;
            while traj.layers.len() <= layer {
                traj.layers.push(Vec::new());
            }
            let snapshots = &mut traj.layers[layer];
            let need_new = snapshots.last().map(|s| s.step != step).unwrap_or(true);
            if need_new {
                snapshots.push(Snapshot {
                    step,
                    re: Vec::new(),
                    im: Vec::new(),
                });
            }
            let snap = snapshots.last_mut().unwrap();
            if snap.re.len() != n {
                return Err(DssError::Config(format!(
                    "trajectory rows out of order at layer {layer}, step {step}, n {n}"
                )));
            }
            snap.re.push(re);
            snap.im.push(im);
        }
        Ok(traj)
    }

    /// Total number of (layer, step, n) rows.
    pub fn row_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|snaps| snaps.iter().map(|s| s.re.len()))
            .sum()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    let xbar = (n - 1) as f64 / 2.0;
    let ybar = mean(ys);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        num += dx * (y - ybar);
        den += dx * dx;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_line() {
        let ys: Vec<f64> = (0..10).map(|n| std::f64::consts::PI * n as f64).collect();
        assert!((least_squares_slope(&ys) - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let mut traj = EigenTrajectory::new();
        traj.layers = vec![
            vec![
                Snapshot {
                    step: 0,
                    re: vec![-0.5, -0.5],
                    im: vec![0.0, 3.14],
                },
                Snapshot {
                    step: 10,
                    re: vec![-0.4, -0.6],
                    im: vec![0.1, 3.0],
                },
            ],
            vec![Snapshot {
                step: 0,
                re: vec![-1.0, -1.0],
                im: vec![0.0, 1.0],
            }],
        ];
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let parsed = EigenTrajectory::read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(parsed.num_layers(), 2);
        assert_eq!(parsed.row_count(), traj.row_count());
        assert_eq!(parsed.layers[0][1].step, 10);
        assert!((parsed.layers[0][1].im[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn summaries_cover_every_snapshot() {
        let mut traj = EigenTrajectory::new();
        traj.layers = vec![vec![
            Snapshot {
                step: 0,
                re: vec![-0.5; 4],
                im: (0..4).map(|n| n as f64).collect(),
            },
            Snapshot {
                step: 5,
                re: vec![-0.25; 4],
                im: (0..4).map(|n| 2.0 * n as f64).collect(),
            },
        ]];
        let all = traj.summaries();
        assert_eq!(all.len(), 2);
        assert!((all[0].slope_im - 1.0).abs() < 1e-12);
        assert!((all[1].slope_im - 2.0).abs() < 1e-12);
        assert!((all[1].mean_re + 0.25).abs() < 1e-15);
        let finals = traj.final_summaries();
        assert_eq!(finals.len(), 1);
        assert_eq!(finals[0].step, 5);
    }
}
