//! Rectified adaptive-moment optimizer.
//!
//! First/second-moment accumulators with bias correction and the variance
//! rectification schedule: while the variance estimate is intractable
//! (ρ_t ≤ 4) the update falls back to bias-corrected momentum; afterwards the
//! adaptive step is scaled by the rectification term r_t.

use crate::autodiff::ParamSet;
use crate::error::RprError;
use crate::Result;
use ndarray::ArrayD;

#[derive(Debug, Clone, PartialEq)]
pub struct RadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter moment state plus the step counter.
#[derive(Debug, Clone)]
pub struct RadamState {
    pub step: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl RadamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| ArrayD::zeros(params.value(i).raw_dim()))
            .collect();
        let v = (0..params.len())
            .map(|i| ArrayD::zeros(params.value(i).raw_dim()))
            .collect();
        Self { step: 0, m, v }
    }

    /// Applies one update. `grads[i]` pairs with parameter `i`; `None` (and
    /// non-trainable parameters) are skipped. A non-finite gradient aborts
    /// the whole step before any parameter moves.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<ArrayD<f64>>],
        cfg: &RadamConfig,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(RprError::InvalidArgument(format!(
                "{} gradient slots for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(RprError::NumericalError(format!(
                        "non-finite gradient for parameter {}",
                        params.name(i)
                    )));
                }
                if g.shape() != params.value(i).shape() {
                    return Err(RprError::ShapeError {
                        op: "optimizer_step",
                        left: g.shape().to_vec(),
                        right: params.value(i).shape().to_vec(),
                    });
                }
            }
        }

        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b1t = b1.powf(t);
        let b2t = b2.powf(t);
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };

        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if !params.is_trainable(i) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let theta = params.value_mut(i);
            if cfg.weight_decay != 0.0 {
                let decay = cfg.lr * cfg.weight_decay;
                theta.mapv_inplace(|w| w - decay * w);
            }
            match rect {
                Some(r_t) => {
                    let inv_mc = 1.0 / (1.0 - b1t);
                    let inv_vc = 1.0 / (1.0 - b2t);
                    ndarray::Zip::from(theta).and(&*m).and(&*v).for_each(|w, &m, &v| {
                        let m_hat = m * inv_mc;
                        let v_hat = (v * inv_vc).sqrt();
                        *w -= cfg.lr * r_t * m_hat / (v_hat + cfg.eps);
                    });
                }
                None => {
                    let inv_mc = 1.0 / (1.0 - b1t);
                    ndarray::Zip::from(theta).and(&*m).for_each(|w, &m| {
                        *w -= cfg.lr * m * inv_mc;
                    });
                }
            }
        }
        Ok(())
    }
}
