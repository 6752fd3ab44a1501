//! Scalar-state (diagonal) state space systems.
//!
//! A continuous system x'(t) = A x(t) + B u(t), y(t) = C x(t) with diagonal A
//! is discretized under zero-order hold and simulated by direct recurrence.
//! The recurrence path is deliberately elementary: it is the oracle against
//! which the closed-form kernel is checked, so it shares no code with it.

use num_complex::Complex64;

use crate::error::{DssError, Result};

/// Continuous diagonal system: eigenvalues are the diagonal of A.
#[derive(Debug, Clone)]
pub struct ContinuousSsm {
    pub eigenvalues: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
}

impl ContinuousSsm {
    /// Validates lambda_i != 0 and consistent, nonempty dimensions.
    pub fn new(eigenvalues: Vec<Complex64>, b: Vec<Complex64>, c: Vec<Complex64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(DssError::Domain("state dimension must be >= 1".into()));
        }
        if eigenvalues.len() != b.len() || eigenvalues.len() != c.len() {
            return Err(DssError::ShapeMismatch(format!(
                "eigenvalues/b/c lengths disagree: {}/{}/{}",
                eigenvalues.len(),
                b.len(),
                c.len()
            )));
        }
        for (i, l) in eigenvalues.iter().enumerate() {
            if l.re == 0.0 && l.im == 0.0 {
                return Err(DssError::ZeroEigenvalue { index: i });
            }
            if !l.re.is_finite() || !l.im.is_finite() {
                return Err(DssError::NonFinite(format!("eigenvalue {i}")));
            }
        }
        Ok(ContinuousSsm { eigenvalues, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Discretized diagonal system (a_bar, b_bar, c_bar) at sampling interval delta.
#[derive(Debug, Clone)]
pub struct DiscreteSsm {
    pub a_bar: Vec<Complex64>,
    pub b_bar: Vec<Complex64>,
    pub c_bar: Vec<Complex64>,
    pub delta: f64,
}

impl DiscreteSsm {
    pub fn state_dim(&self) -> usize {
        self.a_bar.len()
    }
}

/// Zero-order-hold discretization of a diagonal system:
/// a_bar_i = e^(lambda_i delta), b_bar_i = (e^(lambda_i delta) - 1)/lambda_i * b_i,
/// c_bar = c.
pub fn discretize_zoh(sys: &ContinuousSsm, delta: f64) -> Result<DiscreteSsm> {
    if !(delta > 0.0) {
        return Err(DssError::Domain(format!(
            "sampling interval must be positive, got {delta}"
        )));
    }
    let n = sys.state_dim();
    let mut a_bar = Vec::with_capacity(n);
    let mut b_bar = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = sys.eigenvalues[i];
        if lambda.re == 0.0 && lambda.im == 0.0 {
            return Err(DssError::ZeroEigenvalue { index: i });
        }
        let a = (lambda * delta).exp();
        a_bar.push(a);
        b_bar.push((a - 1.0) / lambda * sys.b[i]);
    }
    Ok(DiscreteSsm {
        a_bar,
        b_bar,
        c_bar: sys.c.clone(),
        delta,
    })
}

/// Runs the state recurrence x_k = a_bar x_{k-1} + b_bar u_k, y_k = Re(c_bar . x_k)
/// with x_{-1} = 0. Only the current state is kept.
pub fn simulate_recurrence(sys: &DiscreteSsm, u: &[f64]) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(DssError::Domain("input sequence must be nonempty".into()));
    }
    let n = sys.state_dim();
    let mut state = vec![Complex64::new(0.0, 0.0); n];
    let mut y = Vec::with_capacity(u.len());
    for &uk in u {
        let mut out = Complex64::new(0.0, 0.0);
        for i in 0..n {
            state[i] = sys.a_bar[i] * state[i] + sys.b_bar[i] * uk;
            out += sys.c_bar[i] * state[i];
        }
        y.push(out.re);
    }
    Ok(y)
}

/// Impulse response K_k = sum_i c_bar_i a_bar_i^k b_bar_i for k in 0..L,
/// with powers accumulated multiplicatively step by step.
pub fn impulse_kernel_by_unroll(sys: &DiscreteSsm, len: usize) -> Result<Vec<Complex64>> {
    if len == 0 {
        return Err(DssError::Domain("kernel length must be >= 1".into()));
    }
    let n = sys.state_dim();
    // power[i] tracks a_bar_i^k
    let mut power = vec![Complex64::new(1.0, 0.0); n];
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        let mut k = Complex64::new(0.0, 0.0);
        for i in 0..n {
            k += sys.c_bar[i] * power[i] * sys.b_bar[i];
        }
        kernel.push(k);
        for i in 0..n {
            power[i] *= sys.a_bar[i];
        }
    }
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zoh_scalar_example() {
        // lambda = -1, b = c = 1, delta = ln 2 -> a_bar = 1/2, b_bar = 1/2.
        let sys = ContinuousSsm::new(vec![c(-1.0, 0.0)], vec![c(1.0, 0.0)], vec![c(1.0, 0.0)])
            .unwrap();
        let d = discretize_zoh(&sys, 2f64.ln()).unwrap();
        assert!((d.a_bar[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((d.b_bar[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert_eq!(d.c_bar[0], c(1.0, 0.0));
    }

    #[test]
    fn zoh_rejects_zero_eigenvalue() {
        assert!(matches!(
            ContinuousSsm::new(vec![c(0.0, 0.0)], vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]),
            Err(DssError::ZeroEigenvalue { index: 0 })
        ));
    }

    #[test]
    fn zoh_rejects_nonpositive_delta() {
        let sys = ContinuousSsm::new(vec![c(-1.0, 0.0)], vec![c(1.0, 0.0)], vec![c(1.0, 0.0)])
            .unwrap();
        assert!(discretize_zoh(&sys, 0.0).is_err());
        assert!(discretize_zoh(&sys, -0.1).is_err());
    }

    #[test]
    fn zoh_matches_series_expansion() {
        // Independent oracle: 4th-order Taylor series of e^(lambda delta) and of
        // the b_bar factor sum_{k>=1} lambda^(k-1) delta^k / k!.
        let lambda = c(-1.0, 2.0);
        let delta = 0.01;
        let sys = ContinuousSsm::new(vec![lambda], vec![c(1.0, 0.0)], vec![c(1.0, 0.0)])
            .unwrap();
        let d = discretize_zoh(&sys, delta).unwrap();

        let z = lambda * delta;
        let mut exp_series = c(0.0, 0.0);
        let mut term = c(1.0, 0.0);
        let mut fact = 1.0;
        for k in 0..=4 {
            if k > 0 {
                fact *= k as f64;
                term = term * z;
            }
            exp_series += term / fact;
        }
        // b_bar series: delta + lambda delta^2/2! + lambda^2 delta^3/3! + lambda^3 delta^4/4!
        let mut b_series = c(0.0, 0.0);
        let mut lam_pow = c(1.0, 0.0);
        let mut fact = 1.0;
        for k in 1..=4 {
            fact *= k as f64;
            b_series += lam_pow * delta.powi(k) / fact;
            lam_pow *= lambda;
        }

        assert!((d.a_bar[0] - exp_series).norm() < 1e-10);
        assert!((d.b_bar[0] - b_series).norm() < 1e-10);
        // Closed-form magnitude check: |a_bar| = e^(Re(lambda) delta).
        assert!((d.a_bar[0].norm() - (lambda.re * delta).exp()).abs() < 1e-14);
    }

    #[test]
    fn recurrence_memoryless() {
        let sys = DiscreteSsm {
            a_bar: vec![c(0.0, 0.0)],
            b_bar: vec![c(1.0, 0.0)],
            c_bar: vec![c(1.0, 0.0)],
            delta: 1.0,
        };
        let y = simulate_recurrence(&sys, &[3.0, 5.0]).unwrap();
        assert_eq!(y, vec![3.0, 5.0]);
    }

    #[test]
    fn recurrence_geometric_decay() {
        let sys = DiscreteSsm {
            a_bar: vec![c(0.5, 0.0)],
            b_bar: vec![c(1.0, 0.0)],
            c_bar: vec![c(1.0, 0.0)],
            delta: 1.0,
        };
        let y = simulate_recurrence(&sys, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn recurrence_rejects_empty_input() {
        let sys = DiscreteSsm {
            a_bar: vec![c(0.5, 0.0)],
            b_bar: vec![c(1.0, 0.0)],
            c_bar: vec![c(1.0, 0.0)],
            delta: 1.0,
        };
        assert!(simulate_recurrence(&sys, &[]).is_err());
    }

    fn random_system(n: usize, seed: u64) -> DiscreteSsm {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let mut cv = |scale: f64| c(next() * scale, next() * scale);
        DiscreteSsm {
            a_bar: (0..n).map(|_| cv(0.6)).collect(),
            b_bar: (0..n).map(|_| cv(1.0)).collect(),
            c_bar: (0..n).map(|_| cv(1.0)).collect(),
            delta: 0.01,
        }
    }

    #[test]
    fn recurrence_matches_explicit_unrolled_sum() {
        // y_k = sum_{j<=k} c_bar a_bar^j b_bar u_{k-j}, evaluated term by term.
        let sys = random_system(4, 42);
        let len = 32;
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let u: Vec<f64> = (0..len).map(|_| next()).collect();
        let y = simulate_recurrence(&sys, &u).unwrap();
        for k in 0..len {
            let mut acc = c(0.0, 0.0);
            for j in 0..=k {
                let mut coeff = c(0.0, 0.0);
                for i in 0..sys.state_dim() {
                    let mut pow = c(1.0, 0.0);
                    for _ in 0..j {
                        pow *= sys.a_bar[i];
                    }
                    coeff += sys.c_bar[i] * pow * sys.b_bar[i];
                }
                acc += coeff * u[k - j];
            }
            assert!(
                (y[k] - acc.re).abs() < 1e-12,
                "k={k}: {} vs {}",
                y[k],
                acc.re
            );
        }
    }

    #[test]
    fn kernel_scalar_geometric() {
        let sys = DiscreteSsm {
            a_bar: vec![c(0.5, 0.0)],
            b_bar: vec![c(1.0, 0.0)],
            c_bar: vec![c(1.0, 0.0)],
            delta: 1.0,
        };
        let k = impulse_kernel_by_unroll(&sys, 3).unwrap();
        assert_eq!(k, vec![c(1.0, 0.0), c(0.5, 0.0), c(0.25, 0.0)]);
    }

    #[test]
    fn kernel_length_one_is_cb_dot() {
        let sys = random_system(5, 7);
        let k = impulse_kernel_by_unroll(&sys, 1).unwrap();
        let expected: Complex64 = (0..5).map(|i| sys.c_bar[i] * sys.b_bar[i]).sum();
        assert!((k[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn impulse_response_equals_kernel_real_part() {
        let sys = random_system(6, 11);
        let len = 64;
        let kernel = impulse_kernel_by_unroll(&sys, len).unwrap();
        let mut impulse = vec![0.0; len];
        impulse[0] = 1.0;
        let y = simulate_recurrence(&sys, &impulse).unwrap();
        for k in 0..len {
            assert!((y[k] - kernel[k].re).abs() < 1e-12);
        }
    }

    #[test]
    fn discretization_first_order_consistency() {
        // (a_bar - 1)/delta -> lambda as delta -> 0, with first-order error
        // shrinking ~10x when delta shrinks 10x.
        let lambda = c(-0.7, 1.3);
        let sys = ContinuousSsm::new(vec![lambda], vec![c(1.0, 0.0)], vec![c(1.0, 0.0)])
            .unwrap();
        let err_at = |delta: f64| {
            let d = discretize_zoh(&sys, delta).unwrap();
            ((d.a_bar[0] - 1.0) / delta - lambda).norm()
        };
        let e3 = err_at(1e-3);
        let e4 = err_at(1e-4);
        let ratio = e3 / e4;
        assert!(
            (5.0..20.0).contains(&ratio),
            "expected ~10x shrink, got ratio {ratio} (e3={e3}, e4={e4})"
        );
    }
}
