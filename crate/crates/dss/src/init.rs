//! Initialization schemes for the kernel parameters.
//!
//! Five eigenvalue schemes are provided: HiPPO spectrum, exp-random,
//! S4D-Inv, S4D-Lin, and the plain linear ramp lambda_n = -1 + i n. The
//! sampling intervals are drawn log-uniform on [0.001, 0.1] and the complex
//! weights are standard normal, both from explicit seeded generators.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DssError, Result};
use crate::kernel::EigenvalueSet;

pub const DELTA_LOG_MIN: f64 = -6.907755278982137; // ln 0.001
pub const DELTA_LOG_MAX: f64 = -2.302585092994046; // ln 0.1

/// Eigenvalue initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Top-N eigenvalues (positive imaginary part) of the 2N x 2N HiPPO matrix.
    Hippo,
    /// lambda_n = -e^(a_n) + i e^(b_n), a_n, b_n ~ U[-1, 1].
    ExpRandom { seed: u64 },
    /// lambda_n = -1/2 + i (N/pi) (N/(2n+1) - 1).
    S4dInv,
    /// lambda_n = -1/2 + i pi n.
    S4dLin,
    /// lambda_n = -1 + i n.
    Linear,
}

impl InitScheme {
    /// Parses the CLI/config spelling. Stochastic schemes take the seed from
    /// the caller.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name {
            "hippo" => Ok(InitScheme::Hippo),
            "exp-random" => Ok(InitScheme::ExpRandom { seed }),
            "s4d-inv" => Ok(InitScheme::S4dInv),
            "s4d-lin" => Ok(InitScheme::S4dLin),
            "linear" => Ok(InitScheme::Linear),
            other => Err(DssError::Config(format!(
                "unknown init scheme '{other}' (expected hippo, exp-random, s4d-inv, s4d-lin, linear)"
            ))),
        }
    }
}

/// Which off-diagonal factor the HiPPO matrix uses. `SkewCorrected` is the
/// default: 2 sqrt(2i+1) sqrt(2j+1), which is antisymmetric as required.
/// `AsPrinted` keeps the 2 sqrt(i+1) sqrt(2j+1) factor for comparison; the
/// resulting matrix is not skew-symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HippoVariant {
    #[default]
    SkewCorrected,
    AsPrinted,
}

/// Builds the 2N x 2N HiPPO matrix: diagonal -1/2, off-diagonal +/- the
/// variant's factor (positive above the diagonal).
pub fn hippo_matrix(n_states: usize, variant: HippoVariant) -> Result<Array2<f64>> {
    if n_states == 0 {
        return Err(DssError::Domain("need N >= 1".into()));
    }
    let m = 2 * n_states;
    let mut a = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i == j {
                a[(i, j)] = -0.5;
            } else {
                let factor = match variant {
                    HippoVariant::SkewCorrected => {
                        2.0 * ((2 * i + 1) as f64).sqrt() * ((2 * j + 1) as f64).sqrt()
                    }
                    HippoVariant::AsPrinted => {
                        2.0 * ((i + 1) as f64).sqrt() * ((2 * j + 1) as f64).sqrt()
                    }
                };
                a[(i, j)] = if i < j { factor } else { -factor };
            }
        }
    }
    Ok(a)
}

/// Eigenvalues of the HiPPO matrix with positive imaginary part, sorted by
/// descending imaginary part, top `n_states` of them.
///
/// The skew part S has spectrum i*mu with mu the (real) eigenvalues of the
/// Hermitian matrix iS, so we eigensolve iS and shift by the -1/2 diagonal.
pub fn hippo_eigenvalues(n_states: usize, variant: HippoVariant) -> Result<Vec<Complex64>> {
    let a = hippo_matrix(n_states, variant)?;
    let m = 2 * n_states;
    // Skew part: strip the diagonal (exactly -1/2 by construction).
    let mut h = nalgebra::DMatrix::<Complex64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                h[(i, j)] = Complex64::new(0.0, a[(i, j)]);
            }
        }
    }
    // For AsPrinted the matrix is not skew, so iS is not Hermitian; we still
    // symmetrize to report a comparable spectrum.
    let h = (h.clone() + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut mus: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    mus.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let positive: Vec<f64> = mus.into_iter().filter(|&mu| mu > 0.0).collect();
    if positive.len() < n_states {
        return Err(DssError::NonFinite(format!(
            "HiPPO spectrum produced only {} positive imaginary parts, need {}",
            positive.len(),
            n_states
        )));
    }
    Ok(positive
        .into_iter()
        .take(n_states)
        .map(|mu| Complex64::new(-0.5, mu))
        .collect())
}

/// Dispatches to the requested scheme; all formulas index n from 0.
pub fn init_eigenvalues(scheme: InitScheme, n_states: usize) -> Result<EigenvalueSet> {
    if n_states == 0 {
        return Err(DssError::Domain("need N >= 1".into()));
    }
    let n = n_states;
    let values: Vec<Complex64> = match scheme {
        InitScheme::Hippo => hippo_eigenvalues(n, HippoVariant::SkewCorrected)?,
        InitScheme::ExpRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let a: f64 = rng.random_range(-1.0..1.0);
                    let b: f64 = rng.random_range(-1.0..1.0);
                    Complex64::new(-a.exp(), b.exp())
                })
                .collect()
        }
        InitScheme::S4dInv => (0..n)
            .map(|k| {
                let nf = n as f64;
                let im = nf / std::f64::consts::PI * (nf / (2 * k + 1) as f64 - 1.0);
                Complex64::new(-0.5, im)
            })
            .collect(),
        InitScheme::S4dLin => (0..n)
            .map(|k| Complex64::new(-0.5, std::f64::consts::PI * k as f64))
            .collect(),
        InitScheme::Linear => (0..n).map(|k| Complex64::new(-1.0, k as f64)).collect(),
    };
    EigenvalueSet::from_complex(&values)
}

/// Per-channel log-delta values drawn from U[ln 0.001, ln 0.1].
pub fn init_delta(n_channels: usize, seed: u64) -> Result<Array1<f64>> {
    if n_channels == 0 {
        return Err(DssError::Domain("need H >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Array1::from_iter(
        (0..n_channels).map(|_| rng.random_range(DELTA_LOG_MIN..DELTA_LOG_MAX)),
    ))
}

/// H x N standard-normal matrices for the real and imaginary parts of w.
pub fn init_w(n_channels: usize, n_states: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    if n_channels == 0 || n_states == 0 {
        return Err(DssError::Domain("need H >= 1 and N >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        Array2::from_shape_fn((n_channels, n_states), |_| rng.sample::<f64, _>(StandardNormal))
    };
    let re = draw();
    let im = draw();
    Ok((re, im))
}
