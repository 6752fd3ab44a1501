//! The DSS module: a pointwise-conv sandwich around per-channel kernel
//! convolutions.
//!
//! Pipeline: layernorm -> expand (d -> h, h = 2d) -> per-channel DSS
//! convolution plus a learned per-channel shortcut gain on the
//! pre-convolution activation -> GELU -> mixing matrix -> GLU -> project
//! (-> d) -> residual.
//!
//! `dss_module_forward` is a direct ndarray implementation used for
//! inference and as a cross-check against the tape-built training graph in
//! [`crate::graph`].

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gelu;
use crate::conv::{fft_conv, naive_conv, KernelBank};
use crate::error::{DssError, Result};
use crate::init::{init_delta, init_eigenvalues, init_w, InitScheme};
use crate::kernel::{materialize_kernels, DssParams, EigenvalueSet};
use crate::tensor::SequenceTensor;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Which convolution implementation the module uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvBackend {
    #[default]
    Fft,
    Naive,
}

/// Output mixing shape. `GluDoubled` sizes the mixing matrix h -> 2h so the
/// GLU halves back to h; `Square` keeps an h -> h mixing and lets the GLU
/// halve to h/2 (exposed for ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixSizing {
    #[default]
    GluDoubled,
    Square,
}

/// Layernorm scale and shift, stored as column vectors.
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Self {
        LayerNormParams {
            gamma: Array2::ones((dim, 1)),
            beta: Array2::zeros((dim, 1)),
        }
    }
}

/// Trainable state of one DSS module at model width `d` (inner width h = 2d).
///
/// The eigenvalues are tied across channels and, for bidirectional modules,
/// across both directions; each direction owns its complex weights while the
/// sampling intervals are shared.
#[derive(Debug, Clone)]
pub struct DssModuleParams {
    pub norm: LayerNormParams,
    pub expand_w: Array2<f64>,
    pub expand_b: Array2<f64>,
    /// N x 1 eigenvalue components.
    pub lambda_re: Array2<f64>,
    pub lambda_im: Array2<f64>,
    /// h x N complex weights, forward direction.
    pub w_fwd_re: Array2<f64>,
    pub w_fwd_im: Array2<f64>,
    /// Present iff the module is bidirectional.
    pub w_bwd_re: Option<Array2<f64>>,
    pub w_bwd_im: Option<Array2<f64>>,
    /// h x 1 log sampling intervals, shared across directions.
    pub log_delta: Array2<f64>,
    /// h x 1 shortcut gain.
    pub skip: Array2<f64>,
    pub mix_w: Array2<f64>,
    pub mix_b: Array2<f64>,
    pub project_w: Array2<f64>,
    pub project_b: Array2<f64>,
    pub mix_sizing: MixSizing,
}

pub(crate) fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl DssModuleParams {
    /// Initializes a module of model width `d`: eigenvalues from `scheme`,
    /// w from N(0,1), log-delta from U[ln 0.001, ln 0.1], matrices from
    /// fan-in-scaled uniform, biases zero, skip one.
    pub fn init(
        d: usize,
        n_states: usize,
        scheme: InitScheme,
        bidirectional: bool,
        mix_sizing: MixSizing,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if d == 0 || n_states == 0 {
            return Err(DssError::Domain("need d >= 1 and N >= 1".into()));
        }
        let h = 2 * d;
        let eigen = init_eigenvalues(scheme, n_states)?;
        let lambda_re = column(&eigen.re);
        let lambda_im = column(&eigen.im);
        let (w_fwd_re, w_fwd_im) = init_w(h, n_states, rng.random())?;
        let (w_bwd_re, w_bwd_im) = if bidirectional {
            let (re, im) = init_w(h, n_states, rng.random())?;
            (Some(re), Some(im))
        } else {
            (None, None)
        };
        let log_delta = column(&init_delta(h, rng.random())?);
        let mix_out = match mix_sizing {
            MixSizing::GluDoubled => 2 * h,
            MixSizing::Square => h,
        };
        let glu_out = mix_out / 2;
        Ok(DssModuleParams {
            norm: LayerNormParams::identity(d),
            expand_w: fan_in_uniform(rng, h, d),
            expand_b: Array2::zeros((h, 1)),
            lambda_re,
            lambda_im,
            w_fwd_re,
            w_fwd_im,
            w_bwd_re,
            w_bwd_im,
            log_delta,
            skip: Array2::ones((h, 1)),
            mix_w: fan_in_uniform(rng, mix_out, h),
            mix_b: Array2::zeros((mix_out, 1)),
            project_w: fan_in_uniform(rng, d, glu_out),
            project_b: Array2::zeros((d, 1)),
            mix_sizing,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.expand_w.ncols()
    }

    pub fn inner_dim(&self) -> usize {
        self.expand_w.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.lambda_re.nrows()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.w_bwd_re.is_some()
    }

    fn eigenvalue_set(&self) -> Result<EigenvalueSet> {
        EigenvalueSet::new(
            Array1::from_iter(self.lambda_re.column(0).iter().copied()),
            Array1::from_iter(self.lambda_im.column(0).iter().copied()),
        )
    }

    /// Assembles the kernel parameter pack for one direction at length `len`.
    pub fn dss_params(&self, backward: bool, len: usize) -> Result<DssParams> {
        let (w_re, w_im) = if backward {
            match (&self.w_bwd_re, &self.w_bwd_im) {
                (Some(re), Some(im)) => (re.clone(), im.clone()),
                _ => {
                    return Err(DssError::Domain(
                        "module has no backward kernel weights".into(),
                    ))
                }
            }
        } else {
            (self.w_fwd_re.clone(), self.w_fwd_im.clone())
        };
        DssParams::new(
            self.eigenvalue_set()?,
            w_re,
            w_im,
            Array1::from_iter(self.log_delta.column(0).iter().copied()),
            len,
        )
    }

    /// Materializes the real kernel bank for sequence length `len`.
    pub fn kernel_bank(&self, len: usize) -> Result<KernelBank> {
        let forward = materialize_kernels(&self.dss_params(false, len)?)?;
        let backward = if self.is_bidirectional() {
            Some(materialize_kernels(&self.dss_params(true, len)?)?)
        } else {
            None
        };
        KernelBank::new(forward, backward)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.norm.gamma"), &self.norm.gamma));
        out.push((format!("{prefix}.norm.beta"), &self.norm.beta));
        out.push((format!("{prefix}.expand.w"), &self.expand_w));
        out.push((format!("{prefix}.expand.b"), &self.expand_b));
        out.push((format!("{prefix}.lambda.re"), &self.lambda_re));
        out.push((format!("{prefix}.lambda.im"), &self.lambda_im));
        out.push((format!("{prefix}.w_fwd.re"), &self.w_fwd_re));
        out.push((format!("{prefix}.w_fwd.im"), &self.w_fwd_im));
        if let (Some(re), Some(im)) = (&self.w_bwd_re, &self.w_bwd_im) {
            out.push((format!("{prefix}.w_bwd.re"), re));
            out.push((format!("{prefix}.w_bwd.im"), im));
        }
        out.push((format!("{prefix}.log_delta"), &self.log_delta));
        out.push((format!("{prefix}.skip"), &self.skip));
        out.push((format!("{prefix}.mix.w"), &self.mix_w));
        out.push((format!("{prefix}.mix.b"), &self.mix_b));
        out.push((format!("{prefix}.project.w"), &self.project_w));
        out.push((format!("{prefix}.project.b"), &self.project_b));
    }

    pub fn visit_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Array2<f64>)>,
    ) {
        out.push((format!("{prefix}.norm.gamma"), &mut self.norm.gamma));
        out.push((format!("{prefix}.norm.beta"), &mut self.norm.beta));
        out.push((format!("{prefix}.expand.w"), &mut self.expand_w));
        out.push((format!("{prefix}.expand.b"), &mut self.expand_b));
        out.push((format!("{prefix}.lambda.re"), &mut self.lambda_re));
        out.push((format!("{prefix}.lambda.im"), &mut self.lambda_im));
        out.push((format!("{prefix}.w_fwd.re"), &mut self.w_fwd_re));
        out.push((format!("{prefix}.w_fwd.im"), &mut self.w_fwd_im));
        if let (Some(re), Some(im)) = (&mut self.w_bwd_re, &mut self.w_bwd_im) {
            out.push((format!("{prefix}.w_bwd.re"), re));
            out.push((format!("{prefix}.w_bwd.im"), im));
        }
        out.push((format!("{prefix}.log_delta"), &mut self.log_delta));
        out.push((format!("{prefix}.skip"), &mut self.skip));
        out.push((format!("{prefix}.mix.w"), &mut self.mix_w));
        out.push((format!("{prefix}.mix.b"), &mut self.mix_b));
        out.push((format!("{prefix}.project.w"), &mut self.project_w));
        out.push((format!("{prefix}.project.b"), &mut self.project_b));
    }
}

/// Column-wise layernorm: normalize over channels independently per position.
pub(crate) fn layernorm_cols(x: &Array2<f64>, norm: &LayerNormParams) -> Array2<f64> {
    let (d, n) = x.dim();
    let mut out = Array2::zeros((d, n));
    for j in 0..n {
        let col = x.column(j);
        let mean = col.sum() / d as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..d {
            out[(i, j)] = (x[(i, j)] - mean) * inv_std * norm.gamma[(i, 0)] + norm.beta[(i, 0)];
        }
    }
    out
}

fn conv_rows(bank: &KernelBank, x: &Array2<f64>, backend: ConvBackend) -> Result<Array2<f64>> {
    let run = |kernel: &[f64], seg: &[f64]| match backend {
        ConvBackend::Fft => fft_conv(kernel, seg),
        ConvBackend::Naive => naive_conv(kernel, seg),
    };
    let (h, len) = x.dim();
    let mut out = Array2::zeros((h, len));
    for ch in 0..h {
        let row: Vec<f64> = x.row(ch).to_vec();
        let kf: Vec<f64> = bank.forward.row(ch).to_vec();
        let mut y = run(&kf, &row)?;
        if let Some(back) = &bank.backward {
            let kb: Vec<f64> = back.row(ch).to_vec();
            let rev: Vec<f64> = row.iter().rev().copied().collect();
            let yb = run(&kb, &rev)?;
            for (k, v) in yb.iter().rev().enumerate() {
                y[k] += v;
            }
        }
        for (k, v) in y.into_iter().enumerate() {
            out[(ch, k)] = v;
        }
    }
    Ok(out)
}

/// Full module forward on a d x L input (single sequence, no dropout).
pub fn dss_module_forward(
    params: &DssModuleParams,
    x: &SequenceTensor,
    backend: ConvBackend,
) -> Result<SequenceTensor> {
    let d = params.model_dim();
    if x.channels() != d {
        return Err(DssError::ShapeMismatch(format!(
            "module expects {d} channels, input has {}",
            x.channels()
        )));
    }
    let len = x.length();
    let normed = layernorm_cols(x.data(), &params.norm);
    let u = params.expand_w.dot(&normed) + &params.expand_b;
    let bank = params.kernel_bank(len)?;
    let mut y = conv_rows(&bank, &u, backend)?;
    // shortcut: per-channel gain on the pre-conv activation
    y += &(&u * &params.skip);
    let g = y.mapv(gelu);
    let z = params.mix_w.dot(&g) + &params.mix_b;
    let half = z.nrows() / 2;
    let gate = z.slice(s![half.., ..]).mapv(crate::autodiff::sigmoid_scalar);
    let zg = &z.slice(s![..half, ..]) * &gate;
    let p = params.project_w.dot(&zg) + &params.project_b;
    SequenceTensor::new(p + x.data())
}

fn column(a: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), 1), |(i, _)| a[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_module(bidirectional: bool) -> DssModuleParams {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        DssModuleParams::init(
            4,
            3,
            InitScheme::S4dLin,
            bidirectional,
            MixSizing::GluDoubled,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_output() {
        let params = small_module(true);
        // biases are zero at init and beta = 0, so f(0) = 0 + residual 0
        let x = SequenceTensor::zeros(4, 8).unwrap();
        let y = dss_module_forward(&params, &x, ConvBackend::Fft).unwrap();
        for v in y.data().iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn zero_project_makes_module_identity() {
        let mut params = small_module(false);
        params.project_w.fill(0.0);
        params.project_b.fill(0.0);
        let x = SequenceTensor::new(Array2::from_shape_fn((4, 6), |(i, j)| {
            (i as f64 + 1.0) * 0.3 - j as f64 * 0.1
        }))
        .unwrap();
        let y = dss_module_forward(&params, &x, ConvBackend::Fft).unwrap();
        // bitwise: out = 0 + x
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn backend_swap_agrees() {
        let params = small_module(true);
        let x = SequenceTensor::new(Array2::from_shape_fn((4, 16), |(i, j)| {
            ((i * 7 + j * 3) as f64 * 0.37).sin()
        }))
        .unwrap();
        let a = dss_module_forward(&params, &x, ConvBackend::Fft).unwrap();
        let b = dss_module_forward(&params, &x, ConvBackend::Naive).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_preserved() {
        let params = small_module(true);
        let x = SequenceTensor::new(Array2::ones((4, 12))).unwrap();
        let y = dss_module_forward(&params, &x, ConvBackend::Fft).unwrap();
        assert_eq!(y.channels(), 4);
        assert_eq!(y.length(), 12);
    }

    #[test]
    fn collapsed_pipeline_is_pointwise_mlp() {
        // Kernels = delta, skip = 0, mix = [I; 0] with a large gate bias,
        // project = [I 0]: the module reduces to a pointwise map of LN(x),
        // checked against a dense per-position computation.
        let mut params = small_module(false);
        let h = params.inner_dim();
        let d = params.model_dim();
        // delta kernel: K_0 = sum_i w_i / lambda_i = 1, rest ~ 0 is hard to
        // arrange exactly through the closed form, so instead collapse the
        // conv by zeroing w (kernel = 0) and driving the path through skip=1.
        params.w_fwd_re.fill(0.0);
        params.w_fwd_im.fill(0.0);
        params.skip.fill(1.0);
        let mut mix = Array2::zeros((2 * h, h));
        for i in 0..h {
            mix[(i, i)] = 1.0;
        }
        params.mix_w = mix;
        params.mix_b = Array2::zeros((2 * h, 1));
        // large positive gate bias -> sigmoid ~ 1
        for i in h..2 * h {
            params.mix_b[(i, 0)] = 40.0;
        }
        let mut proj = Array2::zeros((d, h));
        for i in 0..d {
            proj[(i, i)] = 1.0;
        }
        params.project_w = proj;
        let x = SequenceTensor::new(Array2::from_shape_fn((d, 5), |(i, j)| {
            0.2 * i as f64 - 0.1 * j as f64 + 0.05
        }))
        .unwrap();
        let y = dss_module_forward(&params, &x, ConvBackend::Fft).unwrap();
        // dense reference: per position, out = x + P(gelu(E ln(x)))
        let normed = layernorm_cols(x.data(), &params.norm);
        for j in 0..5 {
            for i in 0..d {
                let mut e = 0.0;
                for t in 0..d {
                    e += params.expand_w[(i, t)] * normed[(t, j)];
                }
                let expected = x.data()[(i, j)] + gelu(e);
                assert!(
                    (y.data()[(i, j)] - expected).abs() < 1e-12,
                    "({i},{j}): {} vs {expected}",
                    y.data()[(i, j)]
                );
            }
        }
    }
}
