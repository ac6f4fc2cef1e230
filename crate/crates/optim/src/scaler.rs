//! Dynamic loss scale with the grow/shrink schedule used by automatic mixed
//! precision: halve on a non-finite gradient and skip the step, double after
//! a growth interval of consecutive clean steps.

use lprl_sim::Numerics;

/// Outcome of one scaler update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleDecision {
    /// Whether the optimizer step should be applied.
    pub apply: bool,
    /// Ratio by which gamma just changed (0.5 or 2.0), if it changed.
    /// Gamma-scaled optimizer state must be rescaled by the same ratio.
    pub gamma_ratio: Option<f64>,
}

/// Compound loss scale gamma with overflow-driven dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossScaler {
    gamma: f64,
    good_steps: u64,
    growth_interval: u64,
}

impl LossScaler {
    /// Default schedule: initial scale 1e4, growth interval 1e4 steps.
    pub fn new() -> Self {
        Self::with_schedule(1e4, 10_000)
    }

    pub fn with_schedule(init_scale: f64, growth_interval: u64) -> Self {
        assert!(init_scale > 0.0);
        assert!(growth_interval > 0);
        Self {
            gamma: init_scale,
            good_steps: 0,
            growth_interval,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn good_steps(&self) -> u64 {
        self.good_steps
    }

    /// `gamma * loss`; the backward pass then yields gamma-scaled gradients
    /// and no unscaling step is needed.
    pub fn scale_loss(&self, loss: f64, n: &Numerics) -> f64 {
        n.mul(self.gamma, loss)
    }

    /// Record the gradient inspection for this step. Non-finite gradients
    /// halve gamma, reset the counter, and skip the step; a full growth
    /// interval of clean steps doubles gamma and resets the counter.
    pub fn update(&mut self, grads_finite: bool) -> ScaleDecision {
        if !grads_finite {
            self.gamma *= 0.5;
            self.good_steps = 0;
            return ScaleDecision {
                apply: false,
                gamma_ratio: Some(0.5),
            };
        }
        self.good_steps += 1;
        if self.good_steps >= self.growth_interval {
            self.gamma *= 2.0;
            self.good_steps = 0;
            ScaleDecision {
                apply: true,
                gamma_ratio: Some(2.0),
            }
        } else {
            ScaleDecision {
                apply: true,
                gamma_ratio: None,
            }
        }
    }
}

impl Default for LossScaler {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_the_loss() {
        let n = Numerics::wide();
        let sc = LossScaler::new();
        assert_eq!(sc.scale_loss(0.5, &n), 5000.0);
        let unit = LossScaler::with_schedule(1.0, 100);
        assert_eq!(unit.scale_loss(0.37, &n), 0.37);
        let sc2 = LossScaler::with_schedule(2.0f64.powi(13), 100);
        assert_eq!(sc2.scale_loss(3e-5, &n), 0.24576);
    }

    #[test]
    fn halves_on_non_finite_and_skips() {
        let mut sc = LossScaler::new();
        let d = sc.update(false);
        assert_eq!(sc.gamma(), 5e3);
        assert!(!d.apply);
        assert_eq!(d.gamma_ratio, Some(0.5));
        assert_eq!(sc.good_steps(), 0);
    }

    #[test]
    fn doubles_after_growth_interval() {
        let mut sc = LossScaler::new();
        for i in 0..9_999 {
            let d = sc.update(true);
            assert!(d.apply);
            assert_eq!(d.gamma_ratio, None, "changed early at step {i}");
            assert_eq!(sc.gamma(), 1e4);
        }
        let d = sc.update(true);
        assert!(d.apply);
        assert_eq!(d.gamma_ratio, Some(2.0));
        assert_eq!(sc.gamma(), 2e4);
        assert_eq!(sc.good_steps(), 0);
    }

    #[test]
    fn overflow_resets_the_growth_counter() {
        let mut sc = LossScaler::with_schedule(1e4, 10);
        for _ in 0..9 {
            sc.update(true);
        }
        sc.update(false);
        assert_eq!(sc.gamma(), 5e3);
        for _ in 0..9 {
            let d = sc.update(true);
            assert_eq!(d.gamma_ratio, None);
        }
        let d = sc.update(true);
        assert_eq!(d.gamma_ratio, Some(2.0));
        assert_eq!(sc.gamma(), 1e4);
    }

    #[test]
    fn gamma_stays_a_power_of_two_multiple_of_init() {
        let mut sc = LossScaler::with_schedule(1e4, 3);
        let mut seq = Vec::new();
        for i in 0..50 {
            seq.push(sc.update(i % 7 != 0).gamma_ratio);
        }
        let log_ratio = (sc.gamma() / 1e4).log2();
        assert!(
            (log_ratio - log_ratio.round()).abs() < 1e-12,
            "gamma {} is not a power-of-two multiple of init",
            sc.gamma()
        );
        assert!(seq.iter().flatten().all(|r| *r == 0.5 || *r == 2.0));
    }
}
