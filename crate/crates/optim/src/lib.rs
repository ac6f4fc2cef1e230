//! Adam-family optimizers for low-precision training.
//!
//! The centerpiece stores the square root of Adam's second moment (the
//! hypotenuse buffer w), updated through the stable hypot kernel so its
//! dynamic range stays within a narrow format. Compound loss scaling keeps
//! gradients and both moment buffers multiplied by a scale gamma; instead of
//! unscaling, the parameter update divides by `w + gamma * eps`, which leaves
//! the trajectory identical in exact arithmetic.
//!
//! A textbook fp64 Adam is included as the equivalence oracle, and a plain
//! per-op-quantized Adam (squared-moment buffer) serves as the naive
//! baseline whose v underflows or overflows in fp16.

mod scaler;

pub use scaler::{LossScaler, ScaleDecision};

use lprl_kahan::KahanParamBuffer;
use lprl_sim::Numerics;
use lprl_stable::{hypot_stable, StableMathConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimError {
    /// A gradient entry was inf or NaN; with a loss scaler the caller must
    /// skip the step (and shrink the scale) before reaching the optimizer.
    #[error("non-finite gradient passed to optimizer step")]
    NonFiniteGradient,
    #[error("gradient has {got} entries, parameter has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Learning-rate and moment coefficients; defaults are the SAC training
/// values (alpha 1e-4, eps 1e-8, beta1 0.9, beta2 0.999).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HAdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// sqrt(beta2), precomputed in wide precision.
    pub sqrt_beta2: f64,
    /// sqrt(1 - beta2), precomputed in wide precision.
    pub sqrt_one_minus_beta2: f64,
}

impl HAdamConfig {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        assert!(alpha > 0.0 && eps > 0.0);
        assert!(0.0 < beta1 && beta1 < 1.0);
        assert!(0.0 < beta2 && beta2 < 1.0);
        Self {
            alpha,
            beta1,
            beta2,
            eps,
            sqrt_beta2: beta2.sqrt(),
            sqrt_one_minus_beta2: (1.0 - beta2).sqrt(),
        }
    }
}

impl Default for HAdamConfig {
    fn default() -> Self {
        Self::new(1e-4, 0.9, 0.999, 1e-8)
    }
}

/// Parameter storage: plain values updated by quantized addition, or a
/// Kahan buffer that keeps sub-ulp updates alive.
#[derive(Debug, Clone)]
pub enum ParamStore {
    Plain(Vec<f64>),
    Kahan(KahanParamBuffer),
}

impl ParamStore {
    pub fn plain(values: Vec<f64>) -> Self {
        ParamStore::Plain(values)
    }

    pub fn kahan(values: Vec<f64>) -> Self {
        ParamStore::Kahan(KahanParamBuffer::new(values))
    }

    pub fn len(&self) -> usize {
        match self {
            ParamStore::Plain(v) => v.len(),
            ParamStore::Kahan(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f64] {
        match self {
            ParamStore::Plain(v) => v.as_slice(),
            ParamStore::Kahan(b) => b.values(),
        }
    }

    /// `theta <- theta + delta`, through the store's accumulation scheme.
    pub fn apply_update(&mut self, delta: &[f64], n: &Numerics) -> Result<(), OptimError> {
        match self {
            ParamStore::Plain(v) => {
                if delta.len() != v.len() {
                    return Err(OptimError::ShapeMismatch {
                        expected: v.len(),
                        got: delta.len(),
                    });
                }
                for (p, d) in v.iter_mut().zip(delta) {
                    *p = n.add(*p, *d);
                }
                Ok(())
            }
            ParamStore::Kahan(b) => b.apply_update(delta, n).map_err(|e| {
                OptimError::ShapeMismatch {
                    expected: e.expected,
                    got: e.got,
                }
            }),
        }
    }
}

/// First moment m and hypotenuse buffer w = sqrt(v), both gamma-scaled, plus
/// the count of applied steps.
#[derive(Debug, Clone)]
pub struct HAdamState {
    pub m: Vec<f64>,
    pub w: Vec<f64>,
    pub t: u64,
}

impl HAdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            w: vec![0.0; len],
            t: 0,
        }
    }

    /// Multiply both moment buffers by `ratio` (a power of two when driven
    /// by the dynamic scaler), keeping them consistent with a changed gamma.
    pub fn rescale(&mut self, ratio: f64, n: &Numerics) {
        for m in &mut self.m {
            *m = n.mul(*m, ratio);
        }
        for w in &mut self.w {
            *w = n.mul(*w, ratio);
        }
    }
}

fn check_shapes(state_len: usize, grads: &[f64], params: &ParamStore) -> Result<(), OptimError> {
    if grads.len() != state_len || params.len() != state_len {
        return Err(OptimError::ShapeMismatch {
            expected: state_len,
            got: grads.len(),
        });
    }
    Ok(())
}

/// One hAdam step on gamma-scaled gradients.
///
/// m and w live in the active format; bias-correction divisions are formed
/// in wide precision and quantized once. The update divides by
/// `w_hat + gamma * eps` so no unscaling pass is needed.
pub fn hadam_step(
    state: &mut HAdamState,
    cfg: &HAdamConfig,
    params: &mut ParamStore,
    grads_scaled: &[f64],
    gamma: f64,
    n: &Numerics,
) -> Result<(), OptimError> {
    check_shapes(state.m.len(), grads_scaled, params)?;
    if grads_scaled.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    hadam_step_unchecked(state, cfg, params, grads_scaled, gamma, n);
    Ok(())
}

/// [`hadam_step`] without the finiteness gate; non-finite gradients flow
/// through the arithmetic, matching ungated low-precision training.
pub fn hadam_step_unchecked(
    state: &mut HAdamState,
    cfg: &HAdamConfig,
    params: &mut ParamStore,
    grads_scaled: &[f64],
    gamma: f64,
    n: &Numerics,
) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t.min(i32::MAX as u64) as i32);
    let bc2 = (1.0 - cfg.beta2.powi(state.t.min(i32::MAX as u64) as i32)).sqrt();
    let gamma_eps = n.q(gamma * cfg.eps);
    let hypot_cfg = StableMathConfig::for_numerics(n);
    let mut delta = vec![0.0; grads_scaled.len()];
    for i in 0..grads_scaled.len() {
        let g = grads_scaled[i];
        state.m[i] = n.add(n.mul(cfg.beta1, state.m[i]), n.mul(1.0 - cfg.beta1, g));
        let a = n.mul(cfg.sqrt_beta2, state.w[i]);
        let b = n.mul(cfg.sqrt_one_minus_beta2, g).abs();
        state.w[i] = hypot_stable(a, b, &hypot_cfg, n);
        let m_hat = n.q(state.m[i] / bc1);
        let w_hat = n.q(state.w[i] / bc2);
        let denom = n.add(w_hat, gamma_eps);
        delta[i] = -n.mul(cfg.alpha, n.div(m_hat, denom));
    }
    params
        .apply_update(&delta, n)
        .expect("delta shape checked above");
}

/// Textbook Adam state in fp64 (squared second moment v).
#[derive(Debug, Clone)]
pub struct AdamRefState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamRefState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Reference Adam with bias correction, entirely in fp64. The equivalence
/// oracle for hAdam.
pub fn adam_step_reference(
    state: &mut AdamRefState,
    cfg: &HAdamConfig,
    params: &mut [f64],
    grads: &[f64],
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Plain Adam with the squared-moment buffer, every op quantized. The naive
/// baseline: `g*g` underflows for small gradients and `(gamma g)^2`
/// overflows under compound scaling.
#[derive(Debug, Clone)]
pub struct AdamNaiveState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamNaiveState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn rescale(&mut self, ratio: f64, n: &Numerics) {
        let ratio_sq = ratio * ratio;
        for m in &mut self.m {
            *m = n.mul(*m, ratio);
        }
        for v in &mut self.v {
            *v = n.mul(*v, ratio_sq);
        }
    }
}

pub fn adam_step_naive(
    state: &mut AdamNaiveState,
    cfg: &HAdamConfig,
    params: &mut ParamStore,
    grads_scaled: &[f64],
    gamma: f64,
    n: &Numerics,
) -> Result<(), OptimError> {
    check_shapes(state.m.len(), grads_scaled, params)?;
    if grads_scaled.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    adam_step_naive_unchecked(state, cfg, params, grads_scaled, gamma, n);
    Ok(())
}

pub fn adam_step_naive_unchecked(
    state: &mut AdamNaiveState,
    cfg: &HAdamConfig,
    params: &mut ParamStore,
    grads_scaled: &[f64],
    gamma: f64,
    n: &Numerics,
) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t.min(i32::MAX as u64) as i32);
    let gamma_eps = n.q(gamma * cfg.eps);
    let mut delta = vec![0.0; grads_scaled.len()];
    for i in 0..grads_scaled.len() {
        let g = grads_scaled[i];
        state.m[i] = n.add(n.mul(cfg.beta1, state.m[i]), n.mul(1.0 - cfg.beta1, g));
        let g_sq = n.mul(g, g);
        state.v[i] = n.add(n.mul(cfg.beta2, state.v[i]), n.mul(1.0 - cfg.beta2, g_sq));
        let m_hat = n.q(state.m[i] / bc1);
        let v_hat = n.q(state.v[i] / bc2);
        let denom = n.add(n.sqrt(v_hat), gamma_eps);
        delta[i] = -n.mul(cfg.alpha, n.div(m_hat, denom));
    }
    params
        .apply_update(&delta, n)
        .expect("delta shape checked above");
}
