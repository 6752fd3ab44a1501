//! Toy sequence tasks for the training harness.
//!
//! - `FreqClassify`: which of `num_classes` sinusoid frequencies dominates a
//!   noisy mixture.
//! - `DelayedEcho`: reproduce the input shifted by a fixed delay,
//!   per-position regression.
//! - `Adding`: sum the two values flagged by a marker channel.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DssError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    FreqClassify,
    DelayedEcho,
    Adding,
}

impl TaskKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "freq_classify" => Ok(TaskKind::FreqClassify),
            "delayed_echo" => Ok(TaskKind::DelayedEcho),
            "adding" => Ok(TaskKind::Adding),
            other => Err(DssError::Config(format!(
                "unknown task '{other}' (expected freq_classify, delayed_echo, adding)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTaskSpec {
    pub task: TaskKind,
    pub sequence_length: usize,
    /// Classes for FreqClassify; ignored by the regression tasks.
    pub num_classes: usize,
    /// Echo delay in steps for DelayedEcho.
    pub delay: usize,
    pub noise: f64,
    pub seed: u64,
    pub train_samples: usize,
    pub eval_samples: usize,
}

impl ToyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length < 8 {
            return Err(DssError::Domain(format!(
                "sequence length must be >= 8, got {}",
                self.sequence_length
            )));
        }
        if self.task == TaskKind::FreqClassify && self.num_classes < 2 {
            return Err(DssError::Config("freq_classify needs >= 2 classes".into()));
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return Err(DssError::Config("need nonzero sample counts".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.task {
            TaskKind::FreqClassify | TaskKind::DelayedEcho => 1,
            TaskKind::Adding => 2,
        }
    }

    /// Cycle counts per window for the classification frequencies, spaced
    /// geometrically and kept below Nyquist.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let nyquist = self.sequence_length as f64 / 2.0;
        (0..self.num_classes)
            .map(|j| (2.0 * 3f64.powi(j as i32)).min(nyquist - 1.0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Targets {
    Labels(Vec<usize>),
    /// One 1 x L target row per sample.
    PerPosition(Vec<Array2<f64>>),
    Scalar(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// One input_dim x L block per sample.
    pub inputs: Vec<Array2<f64>>,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Deterministic train/eval split: eval samples come from the same generator
/// stream after the training samples.
pub fn generate(spec: &ToyTaskSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = generate_split(spec, spec.train_samples, &mut rng);
    let eval = generate_split(spec, spec.eval_samples, &mut rng);
    Ok((train, eval))
}

fn generate_split(spec: &ToyTaskSpec, count: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let len = spec.sequence_length;
    match spec.task {
        TaskKind::FreqClassify => {
            let freqs = spec.class_frequencies();
            let mut inputs = Vec::with_capacity(count);
            let mut labels = Vec::with_capacity(count);
            for idx in 0..count {
                // round-robin labels keep the classes balanced
                let label = idx % spec.num_classes;
                let amps: Vec<f64> = (0..spec.num_classes)
                    .map(|j| {
                        if j == label {
                            1.0
                        } else {
                            rng.random_range(0.0..0.35)
                        }
                    })
                    .collect();
                let phases: Vec<f64> = (0..spec.num_classes)
                    .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                    .collect();
                let mut x = Array2::zeros((1, len));
                for k in 0..len {
                    let t = k as f64 / len as f64;
                    let mut v = 0.0;
                    for j in 0..spec.num_classes {
                        v += amps[j] * (std::f64::consts::TAU * freqs[j] * t + phases[j]).sin();
                    }
                    v += spec.noise * rng.sample::<f64, _>(StandardNormal);
                    x[(0, k)] = v;
                }
                inputs.push(x);
                labels.push(label);
            }
            Dataset {
                inputs,
                targets: Targets::Labels(labels),
            }
        }
        TaskKind::DelayedEcho => {
            let mut inputs = Vec::with_capacity(count);
            let mut targets = Vec::with_capacity(count);
            for _ in 0..count {
                let clean: Vec<f64> = (0..len)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let mut x = Array2::zeros((1, len));
                let mut y = Array2::zeros((1, len));
                for k in 0..len {
                    x[(0, k)] = clean[k] + spec.noise * rng.sample::<f64, _>(StandardNormal);
                    y[(0, k)] = if k >= spec.delay { clean[k - spec.delay] } else { 0.0 };
                }
                inputs.push(x);
                targets.push(y);
            }
            Dataset {
                inputs,
                targets: Targets::PerPosition(targets),
            }
        }
        TaskKind::Adding => {
            let mut inputs = Vec::with_capacity(count);
            let mut targets = Vec::with_capacity(count);
            for _ in 0..count {
                let mut x = Array2::zeros((2, len));
                for k in 0..len {
                    x[(0, k)] = rng.random_range(0.0..1.0);
                }
                let first = rng.random_range(0..len / 2);
                let second = rng.random_range(len / 2..len);
                x[(1, first)] = 1.0;
                x[(1, second)] = 1.0;
                inputs.push(x.clone());
                targets.push(x[(0, first)] + x[(0, second)]);
            }
            Dataset {
                inputs,
                targets: Targets::Scalar(targets),
            }
        }
    }
}
