//! Iterative radix-2 FFT over `Complex64` with a precomputed twiddle table.
//!
//! Sizes are powers of two. The inverse transform reuses the forward pass
//! via conjugation and scales by 1/n.

use num_complex::Complex64;

use crate::error::{DssError, Result};

/// FFT plan for one power-of-two size.
pub struct Fft {
    n: usize,
    // twiddles[k] = exp(-2*pi*i*k/n) for k in 0..n/2
    twiddles: Vec<Complex64>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(DssError::Domain(format!(
                "FFT size must be a power of two, got {n}"
            )));
        }
        let half = n / 2;
        let mut twiddles = Vec::with_capacity(half);
        for k in 0..half {
            let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            twiddles.push(Complex64::new(angle.cos(), angle.sin()));
        }
        Ok(Fft { n, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward DFT: X_k = sum_j x_j e^{-2 pi i jk / n}.
    pub fn forward(&self, buf: &mut [Complex64]) -> Result<()> {
        if buf.len() != self.n {
            return Err(DssError::ShapeMismatch(format!(
                "FFT plan is for length {}, buffer has {}",
                self.n,
                buf.len()
            )));
        }
        if self.n == 1 {
            return Ok(());
        }
        bit_reverse_permute(buf);
        let n = self.n;
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len; // step through the table
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
        Ok(())
    }

    /// In-place inverse DFT (unitary up to the 1/n factor applied here).
    pub fn inverse(&self, buf: &mut [Complex64]) -> Result<()> {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf)?;
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
        Ok(())
    }
}

/// Smallest power of two >= n (n >= 1).
pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

fn bit_reverse_permute(buf: &mut [Complex64]) {
    let n = buf.len();
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            buf.swap(i, j);
        }
        let mut mask = n >> 1;
        while mask > 0 && j & mask != 0 {
            j ^= mask;
            mask >>= 1;
        }
        j |= mask;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n^2) reference DFT.
    fn dft_naive(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &v) in x.iter().enumerate() {
                    let angle = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                    acc += v * Complex64::new(angle.cos(), angle.sin());
                }
                acc
            })
            .collect()
    }

    fn rand_signal(n: usize, seed: u64) -> Vec<Complex64> {
        // Tiny LCG; good enough for test data.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        (0..n).map(|_| Complex64::new(next(), next())).collect()
    }

    #[test]
    fn matches_naive_dft() {
        for &n in &[1usize, 2, 4, 8, 16, 64, 128] {
            let x = rand_signal(n, n as u64 + 7);
            let expected = dft_naive(&x);
            let mut buf = x.clone();
            let plan = Fft::new(n).unwrap();
            plan.forward(&mut buf).unwrap();
            for (got, want) in buf.iter().zip(&expected) {
                assert!(
                    (got - want).norm() < 1e-10 * (n as f64).max(1.0),
                    "n={n}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn roundtrip_identity() {
        for &n in &[2usize, 32, 256] {
            let x = rand_signal(n, 99 + n as u64);
            let mut buf = x.clone();
            let plan = Fft::new(n).unwrap();
            plan.forward(&mut buf).unwrap();
            plan.inverse(&mut buf).unwrap();
            for (got, want) in buf.iter().zip(&x) {
                assert!((got - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(0).is_err());
        assert!(Fft::new(3).is_err());
        assert!(Fft::new(12).is_err());
    }

    #[test]
    fn next_pow2_values() {
        assert_eq!(next_pow2(1), 1);
        assert_eq!(next_pow2(2), 2);
        assert_eq!(next_pow2(3), 4);
        assert_eq!(next_pow2(1023), 1024);
    }
}
