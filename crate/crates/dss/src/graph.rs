//! Builders that assemble forward graphs on the autodiff tape.
//!
//! Every trainable array is bound as a tape leaf in the exact order of the
//! model's `param_refs` walk, so gradients read back from [`ParamBindings`]
//! line up index-for-index with the parameter arrays.
//!
//! The kernel construction expresses the complex closed form with real
//! tensor pairs; the only non-differentiable piece is the per-row softmax
//! stabilization shift, which cancels exactly.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{DssError, Result};
use crate::kernel::singular_row_magnitude;
use crate::layer::{DssModuleParams, LN_EPS};
use crate::model::{
    sinusoidal_positional_encoding, AttentionSlot, AttnParams, BlockParams, DepthwiseModuleParams,
    EncoderStack, FfnParams, MixerSlot,
};

/// Leaf bindings recorded during graph construction, in `param_refs` order.
#[derive(Default)]
pub struct ParamBindings {
    pub entries: Vec<(String, Var)>,
}

impl ParamBindings {
    pub fn new() -> Self {
        Self::default()
    }

    fn bind(&mut self, tape: &mut Tape, name: String, value: &Array2<f64>) -> Var {
        let var = tape.leaf(value.clone());
        self.entries.push((name, var));
        var
    }
}

/// Inverted-dropout state: rate plus the RNG that draws the masks.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl DropoutCtx<'_> {
    fn mask(&mut self, dim: (usize, usize)) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        Array2::from_shape_fn(dim, |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
    }
}

fn apply_dropout(tape: &mut Tape, x: Var, dropout: &mut Option<&mut DropoutCtx>) -> Var {
    match dropout {
        Some(ctx) if ctx.rate > 0.0 => {
            let mask = ctx.mask(tape.value(x).dim());
            tape.dropout(x, mask)
        }
        _ => x,
    }
}

/// Column-wise layernorm subgraph.
pub fn build_layernorm(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Var {
    let mu = tape.col_mean(x);
    let xc = tape.sub_row(x, mu);
    let sq = tape.mul(xc, xc);
    let var = tape.col_mean(sq);
    let vs = tape.add_scalar(var, LN_EPS);
    let std = tape.sqrt(vs);
    let xhat = tape.div_row(xc, std);
    let scaled = tape.mul_col(xhat, gamma);
    tape.add_col(scaled, beta)
}

/// Tape handles for one direction's kernel parameters.
pub struct KernelVars {
    pub lambda_re: Var,
    pub lambda_im: Var,
    pub w_re: Var,
    pub w_im: Var,
    pub log_delta: Var,
}

/// Real part of the closed-form kernels for every channel, as an h x len
/// node. Errors on zero eigenvalues or singular softmax rows, reading the
/// forward values as they are produced.
pub fn build_kernel(tape: &mut Tape, vars: &KernelVars, len: usize) -> Result<Var> {
    let n = tape.value(vars.lambda_re).nrows();
    let h = tape.value(vars.log_delta).nrows();

    // lden_i = |lambda_i|^2 as a 1 x N row; zero means lambda_i = 0.
    let lam_re_row = tape.transpose(vars.lambda_re);
    let lam_im_row = tape.transpose(vars.lambda_im);
    let re2 = tape.mul(lam_re_row, lam_re_row);
    let im2 = tape.mul(lam_im_row, lam_im_row);
    let lden = tape.add(re2, im2);
    for i in 0..n {
        let v = tape.value(lden)[(0, i)];
        if v == 0.0 {
            return Err(DssError::ZeroEigenvalue { index: i });
        }
        if !v.is_finite() {
            return Err(DssError::NonFinite(format!("eigenvalue {i}")));
        }
    }

    // p_(h,i),k = lambda_i * k * delta_h, split into re/im rows (h*N) x len.
    let delta = tape.exp(vars.log_delta);
    let t_row = tape.leaf(Array2::from_shape_fn((1, len), |(_, k)| k as f64));
    let dt = tape.matmul(delta, t_row);
    let dt_rep = tape.repeat_rows_each(dt, n);
    let lam_re_tiled = tape.tile_rows(vars.lambda_re, h);
    let lam_im_tiled = tape.tile_rows(vars.lambda_im, h);
    let p_re = tape.mul_col(dt_rep, lam_re_tiled);
    let p_im = tape.mul_col(dt_rep, lam_im_tiled);

    // Stabilized complex exponentials and row sums.
    let e = tape.exp_norm_rows(p_re);
    let cosv = tape.cos(p_im);
    let sinv = tape.sin(p_im);
    let c_re = tape.mul(e, cosv);
    let c_im = tape.mul(e, sinv);
    let s_re = tape.sum_rows(c_re);
    let s_im = tape.sum_rows(c_im);
    {
        let sre = tape.value(s_re);
        let sim = tape.value(s_im);
        for row in 0..h * n {
            let mag = (sre[(row, 0)] * sre[(row, 0)] + sim[(row, 0)] * sim[(row, 0)]).sqrt();
            if singular_row_magnitude(mag, len) {
                return Err(DssError::SingularRow { index: row % n });
            }
        }
    }

    // softmax rows: c / s, complex division with real pairs.
    let sre2 = tape.mul(s_re, s_re);
    let sim2 = tape.mul(s_im, s_im);
    let den = tape.add(sre2, sim2);
    let nr1 = tape.mul_col(c_re, s_re);
    let nr2 = tape.mul_col(c_im, s_im);
    let num_re = tape.add(nr1, nr2);
    let sx_re = tape.div_col(num_re, den);
    let ni1 = tape.mul_col(c_im, s_re);
    let ni2 = tape.mul_col(c_re, s_im);
    let num_im = tape.sub(ni1, ni2);
    let sx_im = tape.div_col(num_im, den);

    // coeff = w / lambda per (channel, state).
    let wr_lr = tape.mul_row(vars.w_re, lam_re_row);
    let wi_li = tape.mul_row(vars.w_im, lam_im_row);
    let co_re_num = tape.add(wr_lr, wi_li);
    let co_re = tape.div_row(co_re_num, lden);
    let wi_lr = tape.mul_row(vars.w_im, lam_re_row);
    let wr_li = tape.mul_row(vars.w_re, lam_im_row);
    let co_im_num = tape.sub(wi_lr, wr_li);
    let co_im = tape.div_row(co_im_num, lden);

    // Re(K) = sum_i (co_re * sx_re - co_im * sx_im).
    let term_re = tape.group_weighted_sum(co_re, sx_re);
    let term_im = tape.group_weighted_sum(co_im, sx_im);
    Ok(tape.sub(term_re, term_im))
}

/// DSS module subgraph on a d x (batch * len) input.
pub fn build_dss_module(
    tape: &mut Tape,
    bindings: &mut ParamBindings,
    prefix: &str,
    params: &DssModuleParams,
    x: Var,
    batch: usize,
    mut dropout: Option<&mut DropoutCtx>,
) -> Result<Var> {
    let total = tape.value(x).ncols();
    let len = total / batch;

    let gamma = bindings.bind(tape, format!("{prefix}.norm.gamma"), &params.norm.gamma);
    let beta = bindings.bind(tape, format!("{prefix}.norm.beta"), &params.norm.beta);
    let expand_w = bindings.bind(tape, format!("{prefix}.expand.w"), &params.expand_w);
    let expand_b = bindings.bind(tape, format!("{prefix}.expand.b"), &params.expand_b);
    let lambda_re = bindings.bind(tape, format!("{prefix}.lambda.re"), &params.lambda_re);
    let lambda_im = bindings.bind(tape, format!("{prefix}.lambda.im"), &params.lambda_im);
    let w_fwd_re = bindings.bind(tape, format!("{prefix}.w_fwd.re"), &params.w_fwd_re);
    let w_fwd_im = bindings.bind(tape, format!("{prefix}.w_fwd.im"), &params.w_fwd_im);
    let w_bwd = match (&params.w_bwd_re, &params.w_bwd_im) {
        (Some(re), Some(im)) => Some((
            bindings.bind(tape, format!("{prefix}.w_bwd.re"), re),
            bindings.bind(tape, format!("{prefix}.w_bwd.im"), im),
        )),
        _ => None,
    };
    let log_delta = bindings.bind(tape, format!("{prefix}.log_delta"), &params.log_delta);
    let skip = bindings.bind(tape, format!("{prefix}.skip"), &params.skip);
    let mix_w = bindings.bind(tape, format!("{prefix}.mix.w"), &params.mix_w);
    let mix_b = bindings.bind(tape, format!("{prefix}.mix.b"), &params.mix_b);
    let project_w = bindings.bind(tape, format!("{prefix}.project.w"), &params.project_w);
    let project_b = bindings.bind(tape, format!("{prefix}.project.b"), &params.project_b);

    let normed = build_layernorm(tape, x, gamma, beta);
    let expanded = tape.matmul(expand_w, normed);
    let u = tape.add_col(expanded, expand_b);

    let k_fwd = build_kernel(
        tape,
        &KernelVars {
            lambda_re,
            lambda_im,
            w_re: w_fwd_re,
            w_im: w_fwd_im,
            log_delta,
        },
        len,
    )?;
    let mut y = tape.causal_conv_rows(k_fwd, u, batch);
    if let Some((re, im)) = w_bwd {
        let k_bwd = build_kernel(
            tape,
            &KernelVars {
                lambda_re,
                lambda_im,
                w_re: re,
                w_im: im,
                log_delta,
            },
            len,
        )?;
        let u_rev = tape.rev_segments(u, batch);
        let y_rev = tape.causal_conv_rows(k_bwd, u_rev, batch);
        let y_back = tape.rev_segments(y_rev, batch);
        y = tape.add(y, y_back);
    }
    let shortcut = tape.mul_col(u, skip);
    let y = tape.add(y, shortcut);

    let activated = tape.gelu(y);
    let activated = apply_dropout(tape, activated, &mut dropout);
    let mixed = tape.matmul(mix_w, activated);
    let z = tape.add_col(mixed, mix_b);
    let half = tape.value(z).nrows() / 2;
    let full = tape.value(z).nrows();
    let value_half = tape.slice_rows(z, 0, half);
    let gate_half = tape.slice_rows(z, half, full);
    let gate = tape.sigmoid(gate_half);
    let gated = tape.mul(value_half, gate);
    let projected = tape.matmul(project_w, gated);
    let p = tape.add_col(projected, project_b);
    let p = apply_dropout(tape, p, &mut dropout);
    Ok(tape.add(p, x))
}

/// Depthwise-convolution module subgraph (conformer-style baseline).
pub fn build_depthwise_module(
    tape: &mut Tape,
    bindings: &mut ParamBindings,
    prefix: &str,
    params: &DepthwiseModuleParams,
    x: Var,
    batch: usize,
    mut dropout: Option<&mut DropoutCtx>,
) -> Var {
    let gamma = bindings.bind(tape, format!("{prefix}.norm.gamma"), &params.norm.gamma);
    let beta = bindings.bind(tape, format!("{prefix}.norm.beta"), &params.norm.beta);
    let expand_w = bindings.bind(tape, format!("{prefix}.expand.w"), &params.expand_w);
    let expand_b = bindings.bind(tape, format!("{prefix}.expand.b"), &params.expand_b);
    let taps = bindings.bind(tape, format!("{prefix}.taps"), &params.taps);
    let skip = bindings.bind(tape, format!("{prefix}.skip"), &params.skip);
    let mix_w = bindings.bind(tape, format!("{prefix}.mix.w"), &params.mix_w);
    let mix_b = bindings.bind(tape, format!("{prefix}.mix.b"), &params.mix_b);
    let project_w = bindings.bind(tape, format!("{prefix}.project.w"), &params.project_w);
    let project_b = bindings.bind(tape, format!("{prefix}.project.b"), &params.project_b);

    let normed = build_layernorm(tape, x, gamma, beta);
    let expanded = tape.matmul(expand_w, normed);
    let u = tape.add_col(expanded, expand_b);
    let conv = tape.depthwise_conv_rows(taps, u, batch);
    let shortcut = tape.mul_col(u, skip);
    let y = tape.add(conv, shortcut);
    let activated = tape.gelu(y);
    let activated = apply_dropout(tape, activated, &mut dropout);
    let mixed = tape.matmul(mix_w, activated);
    let z = tape.add_col(mixed, mix_b);
    let half = tape.value(z).nrows() / 2;
    let full = tape.value(z).nrows();
    let value_half = tape.slice_rows(z, 0, half);
    let gate_half = tape.slice_rows(z, half, full);
    let gate = tape.sigmoid(gate_half);
    let gated = tape.mul(value_half, gate);
    let projected = tape.matmul(project_w, gated);
    let p = tape.add_col(projected, project_b);
    let p = apply_dropout(tape, p, &mut dropout);
    tape.add(p, x)
}

/// Pre-norm multi-head attention with residual.
pub fn build_attention(
    tape: &mut Tape,
    bindings: &mut ParamBindings,
    prefix: &str,
    params: &AttnParams,
    x: Var,
    batch: usize,
    mut dropout: Option<&mut DropoutCtx>,
) -> Var {
    let gamma = bindings.bind(tape, format!("{prefix}.norm.gamma"), &params.norm.gamma);
    let beta = bindings.bind(tape, format!("{prefix}.norm.beta"), &params.norm.beta);
    let wq = bindings.bind(tape, format!("{prefix}.wq"), &params.wq);
    let bq = bindings.bind(tape, format!("{prefix}.bq"), &params.bq);
    let wk = bindings.bind(tape, format!("{prefix}.wk"), &params.wk);
    let bk = bindings.bind(tape, format!("{prefix}.bk"), &params.bk);
    let wv = bindings.bind(tape, format!("{prefix}.wv"), &params.wv);
    let bv = bindings.bind(tape, format!("{prefix}.bv"), &params.bv);
    let wo = bindings.bind(tape, format!("{prefix}.wo"), &params.wo);
    let bo = bindings.bind(tape, format!("{prefix}.bo"), &params.bo);

    let normed = build_layernorm(tape, x, gamma, beta);
    let qm = tape.matmul(wq, normed);
    let q = tape.add_col(qm, bq);
    let km = tape.matmul(wk, normed);
    let k = tape.add_col(km, bk);
    let vm = tape.matmul(wv, normed);
    let v = tape.add_col(vm, bv);
    let attended = tape.mhsa(q, k, v, params.heads, batch);
    let om = tape.matmul(wo, attended);
    let o = tape.add_col(om, bo);
    let o = apply_dropout(tape, o, &mut dropout);
    tape.add(o, x)
}

/// Half feed-forward: x + 0.5 * (W2 gelu(W1 LN(x) + b1) + b2).
pub fn build_ffn_half(
    tape: &mut Tape,
    bindings: &mut ParamBindings,
    prefix: &str,
    params: &FfnParams,
    x: Var,
    mut dropout: Option<&mut DropoutCtx>,
) -> Var {
    let gamma = bindings.bind(tape, format!("{prefix}.norm.gamma"), &params.norm.gamma);
    let beta = bindings.bind(tape, format!("{prefix}.norm.beta"), &params.norm.beta);
    let w1 = bindings.bind(tape, format!("{prefix}.w1"), &params.w1);
    let b1 = bindings.bind(tape, format!("{prefix}.b1"), &params.b1);
    let w2 = bindings.bind(tape, format!("{prefix}.w2"), &params.w2);
    let b2 = bindings.bind(tape, format!("{prefix}.b2"), &params.b2);

    let normed = build_layernorm(tape, x, gamma, beta);
    let h1m = tape.matmul(w1, normed);
    let h1 = tape.add_col(h1m, b1);
    let a = tape.gelu(h1);
    let a = apply_dropout(tape, a, &mut dropout);
    let h2m = tape.matmul(w2, a);
    let h2 = tape.add_col(h2m, b2);
    let scaled = tape.scale(h2, 0.5);
    tape.add(x, scaled)
}

/// Macaron block: half-FFN, attention slot, mixing slot, half-FFN, layernorm.
pub fn build_block(
    tape: &mut Tape,
    bindings: &mut ParamBindings,
    prefix: &str,
    params: &BlockParams,
    x: Var,
    batch: usize,
    mut dropout: Option<&mut DropoutCtx>,
) -> Result<Var> {
    let x = build_ffn_half(
        tape,
        bindings,
        &format!("{prefix}.ffn1"),
        &params.ffn1,
        x,
        dropout.as_deref_mut(),
    );
    let x = match &params.attention {
        AttentionSlot::Mhsa(a) => build_attention(
            tape,
            bindings,
            &format!("{prefix}.attn"),
            a,
            x,
            batch,
            dropout.as_deref_mut(),
        ),
        AttentionSlot::Dss(m) => build_dss_module(
            tape,
            bindings,
            &format!("{prefix}.attn_dss"),
            m,
            x,
            batch,
            dropout.as_deref_mut(),
        )?,
    };
    let x = match &params.mixer {
        MixerSlot::Dss(m) => build_dss_module(
            tape,
            bindings,
            &format!("{prefix}.dss"),
            m,
            x,
            batch,
            dropout.as_deref_mut(),
        )?,
        MixerSlot::Depthwise(m) => build_depthwise_module(
            tape,
            bindings,
            &format!("{prefix}.depthwise"),
            m,
            x,
            batch,
            dropout.as_deref_mut(),
        ),
    };
    let x = build_ffn_half(
        tape,
        bindings,
        &format!("{prefix}.ffn2"),
        &params.ffn2,
        x,
        dropout.as_deref_mut(),
    );
    let gamma = bindings.bind(
        tape,
        format!("{prefix}.final_norm.gamma"),
        &params.final_norm.gamma,
    );
    let beta = bindings.bind(
        tape,
        format!("{prefix}.final_norm.beta"),
        &params.final_norm.beta,
    );
    Ok(build_layernorm(tape, x, gamma, beta))
}

/// Whole encoder on an input_dim x (batch * len) feature block: projection,
/// positional encoding, then every block.
pub fn build_encoder(
    tape: &mut Tape,
    bindings: &mut ParamBindings,
    stack: &EncoderStack,
    features: Var,
    batch: usize,
    mut dropout: Option<&mut DropoutCtx>,
) -> Result<Var> {
    let total = tape.value(features).ncols();
    if total % batch != 0 {
        return Err(DssError::ShapeMismatch(format!(
            "feature columns {total} not divisible by batch {batch}"
        )));
    }
    let len = total / batch;
    let d = stack.model_dim();

    let input_w = bindings.bind(tape, "input.w".to_string(), &stack.input_w);
    let input_b = bindings.bind(tape, "input.b".to_string(), &stack.input_b);
    let projected = tape.matmul(input_w, features);
    let projected = tape.add_col(projected, input_b);

    let pe = sinusoidal_positional_encoding(d, len);
    let mut tiled = Array2::zeros((d, total));
    for b in 0..batch {
        tiled
            .slice_mut(ndarray::s![.., b * len..(b + 1) * len])
            .assign(&pe);
    }
    let pe_leaf = tape.leaf(tiled);
    let mut x = tape.add(projected, pe_leaf);

    for (i, block) in stack.blocks.iter().enumerate() {
        x = build_block(
            tape,
            bindings,
            &format!("block{i}"),
            block,
            x,
            batch,
            dropout.as_deref_mut(),
        )?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::InitScheme;
    use crate::kernel::materialize_kernels;
    use crate::layer::MixSizing;
    use rand::SeedableRng;

    #[test]
    fn tape_kernel_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = DssModuleParams::init(
            3,
            4,
            InitScheme::ExpRandom { seed: 2 },
            false,
            MixSizing::GluDoubled,
            &mut rng,
        )
        .unwrap();
        let len = 12;
        let reference = materialize_kernels(&params.dss_params(false, len).unwrap()).unwrap();

        let mut tape = Tape::new();
        let vars = KernelVars {
            lambda_re: tape.leaf(params.lambda_re.clone()),
            lambda_im: tape.leaf(params.lambda_im.clone()),
            w_re: tape.leaf(params.w_fwd_re.clone()),
            w_im: tape.leaf(params.w_fwd_im.clone()),
            log_delta: tape.leaf(params.log_delta.clone()),
        };
        let k = build_kernel(&mut tape, &vars, len).unwrap();
        let got = tape.value(k);
        assert_eq!(got.dim(), reference.dim());
        for (a, b) in got.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn tape_kernel_rejects_singular_rows() {
        // lambda = i*pi, delta = 1, L = 2 lands exactly on e^(L lambda delta) = 1.
        let mut tape = Tape::new();
        let vars = KernelVars {
            lambda_re: tape.leaf(Array2::zeros((1, 1))),
            lambda_im: tape.leaf(Array2::from_elem((1, 1), std::f64::consts::PI)),
            w_re: tape.leaf(Array2::ones((1, 1))),
            w_im: tape.leaf(Array2::zeros((1, 1))),
            log_delta: tape.leaf(Array2::zeros((1, 1))),
        };
        match build_kernel(&mut tape, &vars, 2) {
            Err(DssError::SingularRow { index }) => assert_eq!(index, 0),
            other => panic!("expected singular row, got {other:?}"),
        }
    }

    #[test]
    fn tape_module_matches_pure_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DssModuleParams::init(
            4,
            3,
            InitScheme::S4dLin,
            true,
            MixSizing::GluDoubled,
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_fn((4, 10), |(i, j)| ((i + 2 * j) as f64 * 0.21).cos());
        let pure = crate::layer::dss_module_forward(
            &params,
            &crate::tensor::SequenceTensor::new(x.clone()).unwrap(),
            crate::layer::ConvBackend::Fft,
        )
        .unwrap();

        let mut tape = Tape::new();
        let mut bindings = ParamBindings::new();
        let xv = tape.leaf(x);
        let out = build_dss_module(&mut tape, &mut bindings, "m", &params, xv, 1, None).unwrap();
        for (a, b) in tape.value(out).iter().zip(pure.data().iter()) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn binding_order_matches_param_refs() {
        use crate::model::{BlockConfig, BlockVariant, EncoderConfig};
        let config = EncoderConfig {
            input_dim: 3,
            layers: 2,
            block: BlockConfig {
                model_dim: 4,
                ffn_dim: 6,
                heads: 1,
                head_dim: 4,
                dss_states: 2,
                variant: BlockVariant::DssModule,
                dropout: 0.0,
                bidirectional: true,
                depthwise_kernel: 3,
                mix_sizing: MixSizing::GluDoubled,
            },
        };
        let stack = EncoderStack::init(config, InitScheme::Linear, 11).unwrap();
        let mut tape = Tape::new();
        let mut bindings = ParamBindings::new();
        let features = tape.leaf(Array2::ones((3, 8)));
        build_encoder(&mut tape, &mut bindings, &stack, features, 1, None).unwrap();
        let bound: Vec<&String> = bindings.entries.iter().map(|(n, _)| n).collect();
        let refs = stack.param_refs();
        let expected: Vec<&String> = refs.iter().map(|(n, _)| n).collect();
        assert_eq!(bound, expected);
    }
}
