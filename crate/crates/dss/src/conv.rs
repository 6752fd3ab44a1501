//! Causal linear convolution of kernels with sequences.
//!
//! `naive_conv` is the O(L^2) reference; `fft_conv` computes the same thing
//! in O(L log L) by zero-padding to the next power of two >= 2L-1 so circular
//! wrap-around never touches the first L outputs.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{DssError, Result};
use crate::fft::{next_pow2, Fft};
use crate::tensor::SequenceTensor;

/// Materialized per-channel kernels, forward and (for bidirectional layers)
/// backward.
#[derive(Debug, Clone)]
pub struct KernelBank {
    pub forward: Array2<f64>,
    pub backward: Option<Array2<f64>>,
}

impl KernelBank {
    pub fn new(forward: Array2<f64>, backward: Option<Array2<f64>>) -> Result<Self> {
        if let Some(b) = &backward {
            if b.dim() != forward.dim() {
                return Err(DssError::ShapeMismatch(format!(
                    "forward/backward kernel banks disagree: {:?} vs {:?}",
                    forward.dim(),
                    b.dim()
                )));
            }
        }
        for v in forward.iter().chain(backward.iter().flat_map(|b| b.iter())) {
            if !v.is_finite() {
                return Err(DssError::NonFinite("kernel bank entry".into()));
            }
        }
        Ok(KernelBank { forward, backward })
    }

    pub fn channels(&self) -> usize {
        self.forward.nrows()
    }

    pub fn kernel_length(&self) -> usize {
        self.forward.ncols()
    }
}

/// y_k = sum_{j=0}^{k} K_j u_{k-j}.
pub fn naive_conv(kernel: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() != u.len() {
        return Err(DssError::ShapeMismatch(format!(
            "kernel length {} != input length {}",
            kernel.len(),
            u.len()
        )));
    }
    let len = u.len();
    let mut y = vec![0.0; len];
    for k in 0..len {
        let mut acc = 0.0;
        for j in 0..=k {
            acc += kernel[j] * u[k - j];
        }
        y[k] = acc;
    }
    Ok(y)
}

/// Same contract as [`naive_conv`], via FFT.
pub fn fft_conv(kernel: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() != u.len() {
        return Err(DssError::ShapeMismatch(format!(
            "kernel length {} != input length {}",
            kernel.len(),
            u.len()
        )));
    }
    let len = u.len();
    if len == 0 {
        return Err(DssError::Domain("convolution needs length >= 1".into()));
    }
    let m = next_pow2(2 * len - 1);
    let plan = Fft::new(m)?;
    let mut ka = pad_complex(kernel, m);
    let mut ua = pad_complex(u, m);
    plan.forward(&mut ka)?;
    plan.forward(&mut ua)?;
    for (a, b) in ka.iter_mut().zip(ua.iter()) {
        *a *= *b;
    }
    plan.inverse(&mut ka)?;
    Ok(ka[..len].iter().map(|v| v.re).collect())
}

/// Full linear convolution of two length-L sequences (length 2L-1 output),
/// via FFT. Used by the reverse-mode adjoint of the causal convolution.
pub fn fft_full_conv(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(DssError::ShapeMismatch(
            "full convolution expects equal nonempty lengths".into(),
        ));
    }
    let len = a.len();
    let out_len = 2 * len - 1;
    let m = next_pow2(out_len);
    let plan = Fft::new(m)?;
    let mut fa = pad_complex(a, m);
    let mut fb = pad_complex(b, m);
    plan.forward(&mut fa)?;
    plan.forward(&mut fb)?;
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    plan.inverse(&mut fa)?;
    Ok(fa[..out_len].iter().map(|v| v.re).collect())
}

fn pad_complex(x: &[f64], m: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = Complex64::new(v, 0.0);
    }
    out
}

/// Per-channel convolution with the forward kernels plus, when present, the
/// time-reversed convolution with the backward kernels:
/// y_h = K_f_h * x_h + reverse(K_b_h * reverse(x_h)).
pub fn bidirectional_apply(bank: &KernelBank, x: &SequenceTensor) -> Result<SequenceTensor> {
    if bank.channels() != x.channels() || bank.kernel_length() != x.length() {
        return Err(DssError::ShapeMismatch(format!(
            "kernel bank {}x{} vs input {}x{}",
            bank.channels(),
            bank.kernel_length(),
            x.channels(),
            x.length()
        )));
    }
    let h = x.channels();
    let len = x.length();
    let mut out = Array2::zeros((h, len));
    for ch in 0..h {
        let row: Vec<f64> = x.data().row(ch).to_vec();
        let kf: Vec<f64> = bank.forward.row(ch).to_vec();
        let mut y = fft_conv(&kf, &row)?;
        if let Some(back) = &bank.backward {
            let kb: Vec<f64> = back.row(ch).to_vec();
            let rev: Vec<f64> = row.iter().rev().copied().collect();
            let yb = fft_conv(&kb, &rev)?;
            for (k, v) in yb.iter().rev().enumerate() {
                y[k] += v;
            }
        }
        for (k, v) in y.into_iter().enumerate() {
            out[(ch, k)] = v;
        }
    }
    SequenceTensor::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn naive_identity_kernel() {
        let u = [0.3, -1.2, 2.5];
        let y = naive_conv(&[1.0, 0.0, 0.0], &u).unwrap();
        assert_eq!(y, u.to_vec());
    }

    #[test]
    fn naive_hand_example() {
        let y = naive_conv(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 3.0]);
    }

    #[test]
    fn naive_rejects_length_mismatch() {
        assert!(naive_conv(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fft_identity_kernel() {
        let mut kernel = vec![0.0; 9];
        kernel[0] = 1.0;
        let u: Vec<f64> = (0..9).map(|k| (k as f64 * 0.7).sin()).collect();
        let y = fft_conv(&kernel, &u).unwrap();
        for (a, b) in y.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_length_one() {
        let y = fft_conv(&[3.0], &[-2.0]).unwrap();
        assert!((y[0] + 6.0).abs() < 1e-15);
    }

    #[test]
    fn fft_matches_naive_on_random_input() {
        let mut state = 17u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for &len in &[1usize, 2, 3, 17, 256, 1024] {
            let kernel: Vec<f64> = (0..len).map(|_| next()).collect();
            let u: Vec<f64> = (0..len).map(|_| next()).collect();
            let a = naive_conv(&kernel, &u).unwrap();
            let b = fft_conv(&kernel, &u).unwrap();
            let max_err = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_err <= 1e-10, "L={len}: max err {max_err}");
        }
    }

    #[test]
    fn full_conv_matches_direct_sum() {
        let a = [1.0, 2.0, -1.0];
        let b = [0.5, 0.0, 3.0];
        let c = fft_full_conv(&a, &b).unwrap();
        assert_eq!(c.len(), 5);
        let mut expect = vec![0.0; 5];
        for i in 0..3 {
            for j in 0..3 {
                expect[i + j] += a[i] * b[j];
            }
        }
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_impulse_shifts_kernel() {
        let len = 16;
        let kernel: Vec<f64> = (0..len).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        for shift in [0usize, 3, 7] {
            let mut u = vec![0.0; len];
            u[shift] = 1.0;
            let y = fft_conv(&kernel, &u).unwrap();
            for k in 0..len {
                let expect = if k >= shift { kernel[k - shift] } else { 0.0 };
                assert!((y[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bidirectional_reduces_to_forward_without_backward_bank() {
        let kernels = array![[1.0, 0.5, 0.25, 0.0]];
        let bank = KernelBank::new(kernels.clone(), None).unwrap();
        let x = SequenceTensor::new(array![[1.0, 0.0, -1.0, 2.0]]).unwrap();
        let y = bidirectional_apply(&bank, &x).unwrap();
        let direct = fft_conv(
            &kernels.row(0).to_vec(),
            &x.data().row(0).to_vec(),
        )
        .unwrap();
        for k in 0..4 {
            assert!((y.data()[(0, k)] - direct[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bidirectional_identity_kernels_double_input() {
        let mut delta = Array2::zeros((2, 5));
        delta[(0, 0)] = 1.0;
        delta[(1, 0)] = 1.0;
        let bank = KernelBank::new(delta.clone(), Some(delta)).unwrap();
        let x = SequenceTensor::new(array![
            [0.1, -0.2, 0.3, 0.4, -0.5],
            [1.0, 2.0, 3.0, 4.0, 5.0]
        ])
        .unwrap();
        let y = bidirectional_apply(&bank, &x).unwrap();
        for ch in 0..2 {
            for k in 0..5 {
                assert!((y.data()[(ch, k)] - 2.0 * x.data()[(ch, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn palindromic_input_stays_palindromic_with_tied_kernels() {
        let len = 8;
        let kernel: Vec<f64> = (0..len).map(|k| (-(k as f64) * 0.4).exp()).collect();
        let kmat = Array2::from_shape_vec((1, len), kernel).unwrap();
        let bank = KernelBank::new(kmat.clone(), Some(kmat)).unwrap();
        let data: Vec<f64> = vec![0.5, -1.0, 2.0, 3.5, 3.5, 2.0, -1.0, 0.5];
        let x = SequenceTensor::new(Array2::from_shape_vec((1, len), data).unwrap()).unwrap();
        let y = bidirectional_apply(&bank, &x).unwrap();
        for k in 0..len {
            assert!(
                (y.data()[(0, k)] - y.data()[(0, len - 1 - k)]).abs() < 1e-12,
                "not palindromic at {k}"
            );
        }
    }

    #[test]
    fn bank_rejects_dimension_mismatch() {
        let bank = KernelBank::new(Array2::zeros((2, 4)), None).unwrap();
        let x = SequenceTensor::new(Array2::ones((2, 5))).unwrap();
        assert!(bidirectional_apply(&bank, &x).is_err());
        assert!(KernelBank::new(Array2::zeros((2, 4)), Some(Array2::zeros((2, 5)))).is_err());
    }
}
