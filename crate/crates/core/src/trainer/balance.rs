use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradNormConfig {
    pub alpha: f64,
    pub lr: f64,
}

impl Default for GradNormConfig {
    fn default() -> Self {
        GradNormConfig { alpha: 1.5, lr: 0.025 }
    }
}

/// Smallest weight kept after an update, before renormalization.
pub const MIN_WEIGHT: f64 = 1e-6;

/// GradNorm weights for `(task, alignment)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBalancer {
    pub weights: [f64; 2],
    pub alpha: f64,
    pub lr: f64,
    pub initial: Option<[f64; 2]>,
}

impl LossBalancer {
    pub fn new(cfg: &GradNormConfig) -> Self {
        LossBalancer {
            weights: [1.0, 1.0],
            alpha: cfg.alpha,
            lr: cfg.lr,
            initial: None,
        }
    }

    pub fn record_initial(&mut self, losses: [f64; 2]) -> Result<()> {
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!("non-finite baseline losses {losses:?}")));
        }
        if losses.iter().any(|&l| l == 0.0) {
            return Err(Error::Degenerate(format!(
                "zero baseline loss {losses:?}; re-seed the run"
            )));
        }
        self.initial = Some(losses);
        Ok(())
    }

    /// One GradNorm update. `grad_norms[i]` is `‖∇_Φ L_i‖₂` of the unweighted
    /// loss, so `G_i = w_i · grad_norms[i]`. Targets `Ḡ · r_i^α` are held
    /// constant; the weights take one step on `Σ |G_i − target_i|` and are
    /// rescaled to sum to 2.
    pub fn step(&mut self, losses: [f64; 2], grad_norms: [f64; 2]) -> Result<[f64; 2]> {
        let Some(initial) = self.initial else {
            return Err(Error::Contract("gradnorm step before baseline losses were recorded".into()));
        };
        if losses.iter().chain(&grad_norms).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite balancer inputs: losses {losses:?}, gradient norms {grad_norms:?}"
            )));
        }
        let g = [self.weights[0] * grad_norms[0], self.weights[1] * grad_norms[1]];
        let g_bar = 0.5 * (g[0] + g[1]);
        let ratio = [losses[0] / initial[0], losses[1] / initial[1]];
        let ratio_bar = 0.5 * (ratio[0] + ratio[1]);
        for i in 0..2 {
            let r = if ratio_bar > 0.0 { ratio[i] / ratio_bar } else { 1.0 };
            let target = g_bar * r.powf(self.alpha);
            let diff = g[i] - target;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            self.weights[i] = (self.weights[i] - self.lr * sign * grad_norms[i]).max(MIN_WEIGHT);
        }
        let scale = 2.0 / (self.weights[0] + self.weights[1]);
        self.weights = [self.weights[0] * scale, self.weights[1] * scale];
        Ok(self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balancer(alpha: f64) -> LossBalancer {
        let mut b = LossBalancer::new(&GradNormConfig { alpha, lr: 0.025 });
        b.record_initial([2.0, 1.0]).unwrap();
        b
    }

    #[test]
    fn symmetric_fixed_point() {
        let mut b = balancer(1.5);
        b.initial = Some([1.0, 1.0]);
        let w = b.step([0.7, 0.7], [3.0, 3.0]).unwrap();
        assert_eq!(w, [1.0, 1.0]);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let mut b = LossBalancer::new(&GradNormConfig::default());
        assert!(matches!(b.record_initial([0.0, 1.0]), Err(Error::Degenerate(_))));
        assert!(b.step([1.0, 1.0], [1.0, 1.0]).is_err());
    }

    #[test]
    fn alpha_zero_targets_mean_norm() {
        let mut b = balancer(0.0);
        // G = (2, 0.5), Ḡ = 1.25 for both; task above target, alignment below.
        let w = b.step([1.5, 0.2], [2.0, 0.5]).unwrap();
        let raw = [1.0 - 0.025 * 2.0, 1.0 + 0.025 * 0.5];
        let s = raw[0] + raw[1];
        assert!((w[0] - 2.0 * raw[0] / s).abs() < 1e-15);
        assert!((w[1] - 2.0 * raw[1] / s).abs() < 1e-15);
    }

    #[test]
    fn closed_form_two_parameter_problem() {
        // L_task = a θ₁², L_align = c θ₂² + e θ₁ θ₂ share Φ = (θ₁, θ₂).
        let (a, c, e) = (1.5f64, 0.5f64, 0.25f64);
        let (t1, t2) = (0.8f64, -1.2f64);
        let l = [a * t1 * t1, c * t2 * t2 + e * t1 * t2];
        let n_task = (2.0 * a * t1).abs();
        let n_align = ((e * t2).powi(2) + (2.0 * c * t2 + e * t1).powi(2)).sqrt();
        let mut b = LossBalancer::new(&GradNormConfig::default());
        b.weights = [1.2, 0.8];
        b.record_initial([1.0, 1.0]).unwrap();
        let w = b.step(l, [n_task, n_align]).unwrap();

        let g = [1.2 * n_task, 0.8 * n_align];
        let gbar = (g[0] + g[1]) / 2.0;
        let rbar = (l[0] + l[1]) / 2.0;
        let t = [gbar * (l[0] / rbar).powf(1.5), gbar * (l[1] / rbar).powf(1.5)];
        let raw = [
            1.2 - 0.025 * (g[0] - t[0]).signum() * n_task,
            0.8 - 0.025 * (g[1] - t[1]).signum() * n_align,
        ];
        let s = raw[0] + raw[1];
        assert!((w[0] - 2.0 * raw[0] / s).abs() < 1e-14);
        assert!((w[1] - 2.0 * raw[1] / s).abs() < 1e-14);
    }

    #[test]
    fn weights_stay_positive() {
        let mut b = balancer(1.5);
        b.lr = 10.0;
        for _ in 0..50 {
            let w = b.step([3.0, 0.01], [100.0, 0.001]).unwrap();
            assert!(w[0] > 0.0 && w[1] > 0.0);
            assert!((w[0] + w[1] - 2.0).abs() < 1e-12);
        }
    }
}
