//! Closed-form DSS convolution kernels.
//!
//! The length-L kernel of a diagonal system with eigenvalues lambda_i,
//! channel weights w_i and sampling interval delta is
//!
//!     K_k = sum_i (w_i / lambda_i) * row_softmax(P)_ik,   p_ik = lambda_i * k * delta
//!
//! valid whenever lambda_i != 0 and e^(L lambda_i delta) != 1. The softmax is
//! stabilized by subtracting the per-row maximum of Re(p) before
//! exponentiation, which cancels exactly between numerator and denominator.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{DssError, Result};

/// Magnitude floor under which a softmax row denominator is declared singular.
pub const SINGULAR_ROW_FLOOR: f64 = 1e-300;

/// After stabilization every term has magnitude <= 1, so a denominator this
/// far below the term scale is catastrophic cancellation: the row sits on the
/// excluded e^(L lambda delta) = 1 set up to rounding.
fn cancellation_floor(cols: usize) -> f64 {
    cols as f64 * 64.0 * f64::EPSILON
}

/// Shared singularity criterion for a stabilized row denominator of `cols`
/// terms.
pub(crate) fn singular_row_magnitude(magnitude: f64, cols: usize) -> bool {
    !magnitude.is_finite() || magnitude < SINGULAR_ROW_FLOOR.max(cancellation_floor(cols))
}

/// Diagonal of the state transition matrix, split into real and imaginary
/// parts. Shared across all channels of a layer.
#[derive(Debug, Clone)]
pub struct EigenvalueSet {
    pub re: Array1<f64>,
    pub im: Array1<f64>,
}

impl EigenvalueSet {
    pub fn new(re: Array1<f64>, im: Array1<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(DssError::ShapeMismatch(format!(
                "re/im lengths disagree: {}/{}",
                re.len(),
                im.len()
            )));
        }
        if re.is_empty() {
            return Err(DssError::Domain("need at least one eigenvalue".into()));
        }
        for i in 0..re.len() {
            if !re[i].is_finite() || !im[i].is_finite() {
                return Err(DssError::NonFinite(format!("eigenvalue {i}")));
            }
            if re[i] == 0.0 && im[i] == 0.0 {
                return Err(DssError::ZeroEigenvalue { index: i });
            }
        }
        Ok(EigenvalueSet { re, im })
    }

    pub fn from_complex(values: &[Complex64]) -> Result<Self> {
        Self::new(
            values.iter().map(|v| v.re).collect(),
            values.iter().map(|v| v.im).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }
}

/// Trainable kernel parameters for one direction of a DSS layer:
/// shared eigenvalues, per-channel complex weights, and per-channel
/// log-space sampling intervals.
#[derive(Debug, Clone)]
pub struct DssParams {
    pub eigenvalues: EigenvalueSet,
    /// H x N
    pub w_re: Array2<f64>,
    /// H x N
    pub w_im: Array2<f64>,
    /// H entries; delta_h = exp(log_delta_h) > 0 by construction.
    pub log_delta: Array1<f64>,
    pub kernel_length: usize,
}

impl DssParams {
    pub fn new(
        eigenvalues: EigenvalueSet,
        w_re: Array2<f64>,
        w_im: Array2<f64>,
        log_delta: Array1<f64>,
        kernel_length: usize,
    ) -> Result<Self> {
        let n = eigenvalues.len();
        let h = log_delta.len();
        if h == 0 || kernel_length == 0 {
            return Err(DssError::Domain(
                "need H >= 1 channels and L >= 1 kernel length".into(),
            ));
        }
        if w_re.dim() != (h, n) || w_im.dim() != (h, n) {
            return Err(DssError::ShapeMismatch(format!(
                "w must be {h}x{n}, got {:?} and {:?}",
                w_re.dim(),
                w_im.dim()
            )));
        }
        Ok(DssParams {
            eigenvalues,
            w_re,
            w_im,
            log_delta,
            kernel_length,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.log_delta.len()
    }

    pub fn num_states(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Row-normalized exponential of a complex matrix: out_ik = e^(p_ik) / sum_j e^(p_ij).
///
/// Each row is shifted by max_k Re(p_ik) before exponentiation. A row whose
/// denominator magnitude falls below [`SINGULAR_ROW_FLOOR`] is rejected: that
/// is the excluded e^(L lambda delta) = 1 case, not a numerical accident.
pub fn row_softmax(p: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (rows, cols) = p.dim();
    if cols == 0 {
        return Err(DssError::Domain("row_softmax needs at least one column".into()));
    }
    let mut out = p.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let max_re = row.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
        if !max_re.is_finite() {
            return Err(DssError::NonFinite(format!("row {i} of softmax input")));
        }
        let mut denom = Complex64::new(0.0, 0.0);
        for v in row.iter_mut() {
            *v = Complex64::new(v.re - max_re, v.im).exp();
            denom += *v;
        }
        if singular_row_magnitude(denom.norm(), cols) {
            return Err(DssError::SingularRow { index: i });
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    let _ = rows;
    Ok(out)
}

/// Builds P with p_ik = lambda_i * k * delta for k = 0..L-1.
pub fn build_p_matrix(eigenvalues: &EigenvalueSet, delta: f64, len: usize) -> Array2<Complex64> {
    let n = eigenvalues.len();
    let mut p = Array2::from_elem((n, len), Complex64::new(0.0, 0.0));
    for i in 0..n {
        let lambda = eigenvalues.get(i);
        for k in 0..len {
            p[(i, k)] = lambda * (k as f64 * delta);
        }
    }
    p
}

/// Complex kernel for one channel via the closed form. Callers take the real
/// part before convolving with real inputs.
pub fn compute_kernel(params: &DssParams, channel: usize) -> Result<Vec<Complex64>> {
    if channel >= params.num_channels() {
        return Err(DssError::Domain(format!(
            "channel {channel} out of range for {} channels",
            params.num_channels()
        )));
    }
    let delta = params.log_delta[channel].exp();
    let len = params.kernel_length;
    let p = build_p_matrix(&params.eigenvalues, delta, len);
    let s = row_softmax(&p)?;
    let n = params.num_states();
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..n {
        let lambda = params.eigenvalues.get(i);
        let w = Complex64::new(params.w_re[(channel, i)], params.w_im[(channel, i)]);
        let coeff = w / lambda;
        for k in 0..len {
            kernel[k] += coeff * s[(i, k)];
        }
    }
    Ok(kernel)
}

/// Real parts of every channel's kernel, stacked H x L.
pub fn materialize_kernels(params: &DssParams) -> Result<Array2<f64>> {
    let h = params.num_channels();
    let len = params.kernel_length;
    let mut out = Array2::zeros((h, len));
    for channel in 0..h {
        let k = compute_kernel(params, channel)?;
        for (j, v) in k.iter().enumerate() {
            out[(channel, j)] = v.re;
        }
    }
    Ok(out)
}

/// CSV dump of complex kernels: header `channel,k,re,im`, row-major by
/// channel then position, 17 significant digits.
pub fn write_kernel_csv<W: std::io::Write>(out: &mut W, kernels: &[Vec<Complex64>]) -> Result<()> {
    writeln!(out, "channel,k,re,im")?;
    for (channel, kernel) in kernels.iter().enumerate() {
        for (k, v) in kernel.iter().enumerate() {
            writeln!(out, "{channel},{k},{:.16e},{:.16e}", v.re, v.im)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn softmax_singleton_row() {
        let p = Array2::from_elem((1, 1), c(0.0, 0.0));
        let s = row_softmax(&p).unwrap();
        assert!((s[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn softmax_uniform_row() {
        let p = Array2::from_elem((1, 4), c(0.0, 0.0));
        let s = row_softmax(&p).unwrap();
        for k in 0..4 {
            assert!((s[(0, k)] - c(0.25, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn softmax_root_of_unity_row_is_singular() {
        // e^0 + e^(i pi) = 0.
        let p = ndarray::arr2(&[[c(0.0, 0.0), c(0.0, std::f64::consts::PI)]]);
        assert!(matches!(
            row_softmax(&p),
            Err(DssError::SingularRow { index: 0 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut p = Array2::from_elem((3, 8), c(0.0, 0.0));
        for i in 0..3 {
            for k in 0..8 {
                p[(i, k)] = c(
                    (i as f64 - 1.0) * k as f64 * 0.3,
                    (i as f64 + 0.5) * k as f64 * 0.7,
                );
            }
        }
        let s = row_softmax(&p).unwrap();
        for i in 0..3 {
            let sum: Complex64 = s.row(i).iter().copied().sum();
            assert!((sum - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_positive_exponents() {
        // Re(lambda) up to +5 with L*delta*Re(lambda) up to 500: stabilized
        // softmax must stay finite.
        let eigen = EigenvalueSet::new(array![5.0], array![3.0]).unwrap();
        let p = build_p_matrix(&eigen, 1.0, 101); // max Re(p) = 500
        let s = row_softmax(&p).unwrap();
        for v in s.iter() {
            assert!(v.re.is_finite() && v.im.is_finite());
        }
    }

    #[test]
    fn kernel_hand_example() {
        // N=1, lambda=-1, w=1, delta=ln 2, L=2:
        // P = [0, -ln 2], softmax = [2/3, 1/3], K = -[2/3, 1/3].
        let params = DssParams::new(
            EigenvalueSet::new(array![-1.0], array![0.0]).unwrap(),
            array![[1.0]],
            array![[0.0]],
            array![2f64.ln().ln()], // log(delta) with delta = ln 2
            2,
        )
        .unwrap();
        let k = compute_kernel(&params, 0).unwrap();
        assert!((k[0] - c(-2.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((k[1] - c(-1.0 / 3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn kernel_length_one_is_weight_over_lambda_sum() {
        let params = DssParams::new(
            EigenvalueSet::new(array![-1.0, -0.5], array![2.0, -3.0]).unwrap(),
            array![[0.7, -1.1]],
            array![[0.2, 0.4]],
            array![(0.05f64).ln()],
            1,
        )
        .unwrap();
        let k = compute_kernel(&params, 0).unwrap();
        let expected = c(0.7, 0.2) / c(-1.0, 2.0) + c(-1.1, 0.4) / c(-0.5, -3.0);
        assert!((k[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn kernel_csv_format() {
        let kernels = vec![vec![c(1.0, -0.5), c(0.25, 0.0)]];
        let mut buf = Vec::new();
        write_kernel_csv(&mut buf, &kernels).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "channel,k,re,im");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,0,"));
        // 17 significant digits in scientific notation
        assert!(first.contains("1.0000000000000000e0"));
    }
}
