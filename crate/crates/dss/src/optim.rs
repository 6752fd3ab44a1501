//! AdamW with a one-cycle learning-rate schedule.

use ndarray::Array2;

use crate::error::{DssError, Result};

/// Piecewise-linear one-cycle schedule: starts at the floor rate, peaks
/// exactly at the warmup boundary, and anneals linearly to 0 at the final
/// step.
#[derive(Debug, Clone)]
pub struct OneCycleSchedule {
    pub floor_lr: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl OneCycleSchedule {
    pub fn new(floor_lr: f64, peak_lr: f64, warmup_frac: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(DssError::Config("schedule needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&warmup_frac) {
            return Err(DssError::Config(format!(
                "warmup fraction must be in [0, 1], got {warmup_frac}"
            )));
        }
        if floor_lr < 0.0 || peak_lr < floor_lr {
            return Err(DssError::Config(
                "need 0 <= floor_lr <= peak_lr for the one-cycle schedule".into(),
            ));
        }
        let warmup_steps = (warmup_frac * (total_steps.saturating_sub(1)) as f64).round() as usize;
        Ok(OneCycleSchedule {
            floor_lr,
            peak_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Learning rate at `step` in 0..total_steps.
    pub fn lr(&self, step: usize) -> f64 {
        let last = self.total_steps - 1;
        let step = step.min(last);
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return self.peak_lr;
            }
            self.floor_lr
                + (self.peak_lr - self.floor_lr) * step as f64 / self.warmup_steps as f64
        } else {
            let denom = (last - self.warmup_steps) as f64;
            self.peak_lr * (1.0 - (step - self.warmup_steps) as f64 / denom)
        }
    }
}

/// Decoupled-weight-decay Adam. Moment buffers are created lazily on the
/// first step and keyed by parameter order, which the caller must keep
/// stable across steps.
#[derive(Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Extra learning-rate multiplier for parameters whose name contains
    /// `lambda.` (the eigenvalue components).
    pub lambda_lr_scale: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64, lambda_lr_scale: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            lambda_lr_scale,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over (name, parameter) pairs and their gradients, which
    /// must be index-aligned.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Array2<f64>)],
        grads: &[(String, Array2<f64>)],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DssError::Usage(format!(
                "optimizer got {} params but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            for (_, p) in params.iter() {
                self.m.push(Array2::zeros(p.dim()));
                self.v.push(Array2::zeros(p.dim()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((name, param), (gname, grad))) in
            params.iter_mut().zip(grads.iter()).enumerate()
        {
            if name != gname {
                return Err(DssError::Usage(format!(
                    "parameter/gradient order mismatch at {i}: {name} vs {gname}"
                )));
            }
            let lr_eff = if name.contains("lambda.") {
                lr * self.lambda_lr_scale
            } else {
                lr
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut **param)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr_eff * (m_hat / (v_hat.sqrt() + self.eps))
                        + lr_eff * self.weight_decay * *p;
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_cycle_endpoints_and_peak() {
        let s = OneCycleSchedule::new(5e-5, 5e-4, 1.0 / 3.0, 25).unwrap();
        assert_eq!(s.lr(0), 5e-5);
        assert_eq!(s.lr(s.warmup_steps), 5e-4);
        assert_eq!(s.lr(24), 0.0);
        // piecewise linear on both sides
        let mid_up = s.lr(s.warmup_steps / 2);
        assert!(mid_up > 5e-5 && mid_up < 5e-4);
        for t in 1..25 {
            let (a, b) = (s.lr(t - 1), s.lr(t));
            if t <= s.warmup_steps {
                assert!(b >= a);
            } else {
                assert!(b <= a);
            }
        }
    }

    #[test]
    fn one_cycle_zero_warmup_starts_at_peak() {
        let s = OneCycleSchedule::new(0.0, 1.0, 0.0, 10).unwrap();
        assert_eq!(s.lr(0), 1.0);
        assert_eq!(s.lr(9), 0.0);
    }

    #[test]
    fn zero_gradient_changes_nothing_without_weight_decay() {
        let mut opt = AdamW::new(0.0, 1.0);
        let mut p = array![[1.5, -2.0]];
        let before = p.clone();
        let grads = vec![("p".to_string(), Array2::zeros((1, 2)))];
        let mut params = vec![("p".to_string(), &mut p)];
        opt.step(&mut params, &grads, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn zero_gradient_with_weight_decay_shrinks_params() {
        let mut opt = AdamW::new(0.01, 1.0);
        let mut p = array![[2.0]];
        let grads = vec![("p".to_string(), Array2::zeros((1, 1)))];
        let mut params = vec![("p".to_string(), &mut p)];
        opt.step(&mut params, &grads, 0.5).unwrap();
        // only the decoupled decay term applies: p -= lr * wd * p
        assert!((p[(0, 0)] - (2.0 - 0.5 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn lambda_scale_applies_to_eigenvalue_params() {
        let mut opt = AdamW::new(0.0, 0.0); // scale 0 freezes lambda
        let mut lam = array![[1.0]];
        let mut other = array![[1.0]];
        let grads = vec![
            ("m.lambda.re".to_string(), array![[1.0]]),
            ("m.w".to_string(), array![[1.0]]),
        ];
        let mut params = vec![
            ("m.lambda.re".to_string(), &mut lam),
            ("m.w".to_string(), &mut other),
        ];
        opt.step(&mut params, &grads, 0.1).unwrap();
        assert_eq!(lam[(0, 0)], 1.0);
        assert!(other[(0, 0)] < 1.0);
    }
}
