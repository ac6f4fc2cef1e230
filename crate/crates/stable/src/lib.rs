//! Numerically stable scalar kernels for low-precision training: a rewritten
//! hypot that survives squaring underflow, a softplus with a linear branch
//! whose backward pass cannot overflow, a normal log-density that divides
//! before squaring, and the tanh-Gaussian log-probability built from them.
//!
//! Every kernel threads a [`Numerics`] context so the same code serves wide
//! (`f64`) oracle evaluation and per-op emulated execution. Naive
//! counterparts of each kernel are provided for ablations and failure
//! demonstrations; they are the textbook forms that underflow or overflow
//! in narrow formats.

use lprl_sim::Numerics;
use thiserror::Error;

/// 0.5 * ln(2*pi), the normal log-density normalization constant.
const HALF_LN_TAU: f64 = 0.918938533204672741780329736406;

const LN_2: f64 = std::f64::consts::LN_2;

/// Raised when a standard deviation is zero, negative, or NaN after
/// quantization into the active format.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("standard deviation {sigma} is not positive in the active format")]
pub struct InvalidSigma {
    pub sigma: f64,
}

/// Tunables for the stable kernels.
///
/// `softplus_threshold` is the K of the softplus linear branch: the linear
/// form is used once the exponent argument `2*(-u)` reaches K, i.e. for
/// `u <= -K/2`. `hypot_eps` is added to the denominator inside the rewritten
/// hypot so zero inputs are permitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableMathConfig {
    pub softplus_threshold: f64,
    pub hypot_eps: f64,
}

impl StableMathConfig {
    /// Defaults for the active numeric mode: K = 10, and the guard set to
    /// the smallest positive representable magnitude so it vanishes under
    /// rounding whenever the denominator is a couple of binades above it.
    pub fn for_numerics(n: &Numerics) -> Self {
        Self {
            softplus_threshold: 10.0,
            hypot_eps: n.min_positive(),
        }
    }
}

/// sqrt(a^2 + b^2) for non-negative `a`, `b` via the rewritten form
/// `max * sqrt(1 + (min / (max + eps))^2)`, which never underflows to zero
/// when `max` is representable and nonzero.
pub fn hypot_stable(a: f64, b: f64, cfg: &StableMathConfig, n: &Numerics) -> f64 {
    debug_assert!(a >= 0.0 && b >= 0.0, "hypot_stable takes magnitudes");
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let denom = n.add(hi, cfg.hypot_eps);
    let ratio = n.div(lo, denom);
    let sq = n.mul(ratio, ratio);
    let sum = n.add(1.0, sq);
    n.mul(hi, n.sqrt(sum))
}

/// Textbook sqrt(a^2 + b^2); squares underflow below sqrt(min_subnormal).
pub fn hypot_naive(a: f64, b: f64, n: &Numerics) -> f64 {
    n.sqrt(n.add(n.mul(a, a), n.mul(b, b)))
}

/// log(1 + exp(-2u)), exchanged for the linear function -2u once the
/// exponent argument reaches the threshold (u <= -K/2). The linear branch
/// is what keeps the backward pass finite for large negative u.
pub fn softplus_fix(u: f64, cfg: &StableMathConfig, n: &Numerics) -> f64 {
    if u <= -0.5 * cfg.softplus_threshold {
        n.mul(-2.0, u)
    } else {
        let t = n.mul(-2.0, u);
        let e = n.exp(t);
        n.ln(n.add(1.0, e))
    }
}

/// Derivative of [`softplus_fix`] with respect to u: exactly -2 on the
/// linear branch, else -2 exp(-2u) / (1 + exp(-2u)).
pub fn softplus_fix_grad(u: f64, cfg: &StableMathConfig, n: &Numerics) -> f64 {
    if u <= -0.5 * cfg.softplus_threshold {
        -2.0
    } else {
        let e = n.exp(n.mul(-2.0, u));
        let d = n.add(1.0, e);
        n.mul(-2.0, n.div(e, d))
    }
}

/// log(1 + exp(-2u)) with no linear branch; overflows once exp(-2u) leaves
/// the format's range.
pub fn softplus_naive(u: f64, n: &Numerics) -> f64 {
    let e = n.exp(n.mul(-2.0, u));
    n.ln(n.add(1.0, e))
}

/// Derivative of [`softplus_naive`]; the intermediate exp(-2u) overflows for
/// large negative u, turning the quotient into inf/inf = NaN.
pub fn softplus_naive_grad(u: f64, n: &Numerics) -> f64 {
    let e = n.exp(n.mul(-2.0, u));
    let d = n.add(1.0, e);
    n.mul(-2.0, n.div(e, d))
}

fn check_sigma(sigma: f64, n: &Numerics) -> Result<f64, InvalidSigma> {
    let s = n.q(sigma);
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(InvalidSigma { sigma })
    }
}

/// Normal log-density with the ratio computed before squaring:
/// `-1/2 ((x - mu)/sigma)^2 - log sigma - 1/2 log 2 pi`.
pub fn normal_log_prob(x: f64, mu: f64, sigma: f64, n: &Numerics) -> Result<f64, InvalidSigma> {
    let s = check_sigma(sigma, n)?;
    let d = n.sub(x, mu);
    let r = n.div(d, s);
    let half_sq = n.mul(0.5, n.mul(r, r));
    let acc = n.sub(-half_sq, n.ln(s));
    Ok(n.sub(acc, n.q(HALF_LN_TAU)))
}

/// Normal log-density with the square computed before the divide, as in
/// implementations where sigma^2 can round to zero.
pub fn normal_log_prob_naive(
    x: f64,
    mu: f64,
    sigma: f64,
    n: &Numerics,
) -> Result<f64, InvalidSigma> {
    let s = check_sigma(sigma, n)?;
    let d = n.sub(x, mu);
    let d2 = n.mul(d, d);
    let s2 = n.mul(s, s);
    let half_sq = n.mul(0.5, n.div(d2, s2));
    let acc = n.sub(-half_sq, n.ln(s));
    Ok(n.sub(acc, n.q(HALF_LN_TAU)))
}

/// Which kernel forms the policy log-probability uses; both stable by
/// default, individually naive for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelVariants {
    pub softplus_fix: bool,
    pub normal_fix: bool,
}

impl KernelVariants {
    pub fn stable() -> Self {
        Self {
            softplus_fix: true,
            normal_fix: true,
        }
    }

    pub fn naive() -> Self {
        Self {
            softplus_fix: false,
            normal_fix: false,
        }
    }
}

/// Log-probability of a tanh-squashed Gaussian sample with pre-tanh value
/// `u`: the Gaussian log-density of u minus the change-of-variables term,
/// using the stable expansion
/// `sum_i 2 [log 2 - u_i - log(1 + exp(-2 u_i))]` for
/// `sum_i log(1 - tanh^2 u_i)`.
pub fn tanh_gaussian_log_prob(
    u: &[f64],
    mu: &[f64],
    sigma: &[f64],
    cfg: &StableMathConfig,
    n: &Numerics,
) -> Result<f64, InvalidSigma> {
    tanh_gaussian_log_prob_variant(u, mu, sigma, cfg, n, KernelVariants::stable())
}

/// [`tanh_gaussian_log_prob`] with per-kernel stable/naive selection.
pub fn tanh_gaussian_log_prob_variant(
    u: &[f64],
    mu: &[f64],
    sigma: &[f64],
    cfg: &StableMathConfig,
    n: &Numerics,
    variants: KernelVariants,
) -> Result<f64, InvalidSigma> {
    assert_eq!(u.len(), mu.len());
    assert_eq!(u.len(), sigma.len());
    let mut gauss = 0.0;
    for i in 0..u.len() {
        let lp = if variants.normal_fix {
            normal_log_prob(u[i], mu[i], sigma[i], n)?
        } else {
            normal_log_prob_naive(u[i], mu[i], sigma[i], n)?
        };
        gauss = n.add(gauss, lp);
    }
    let ln2 = n.q(LN_2);
    let mut corr = 0.0;
    for &ui in u {
        let sp = if variants.softplus_fix {
            softplus_fix(ui, cfg, n)
        } else {
            softplus_naive(ui, n)
        };
        let t = n.sub(n.sub(ln2, ui), sp);
        corr = n.add(corr, n.mul(2.0, t));
    }
    Ok(n.sub(gauss, corr))
}
