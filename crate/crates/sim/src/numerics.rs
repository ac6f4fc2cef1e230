//! The arithmetic context shared by every emulated-mode computation: each
//! primitive computes in `f64` and then rounds the result into the active
//! format. In wide mode the rounding hook is the identity.

use crate::format::FloatFormat;

/// Scalar primitives available through [`qop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QOp {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Exp,
    Log,
    Tanh,
}

/// Active numeric mode: wide (`f64` untouched) or emulated in a format,
/// optionally with non-finite coercion after every op (the "coerce"
/// baseline: NaN to 0, infinities to the largest finite magnitude).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    fmt: Option<FloatFormat>,
    coerce: bool,
}

impl Numerics {
    /// Plain `f64` arithmetic; quantization is the identity.
    pub fn wide() -> Self {
        Self {
            fmt: None,
            coerce: false,
        }
    }

    /// Every op result is rounded into `fmt`.
    pub fn emulated(fmt: FloatFormat) -> Self {
        Self {
            fmt: Some(fmt),
            coerce: false,
        }
    }

    /// Emulated, and additionally maps NaN to 0 and +-inf to +-max_finite
    /// after every op.
    pub fn emulated_coerce(fmt: FloatFormat) -> Self {
        Self {
            fmt: Some(fmt),
            coerce: true,
        }
    }

    pub fn format(&self) -> Option<FloatFormat> {
        self.fmt
    }

    pub fn is_wide(&self) -> bool {
        self.fmt.is_none()
    }

    /// Smallest positive magnitude the active mode can hold; used as the
    /// denominator guard in stable kernels.
    pub fn min_positive(&self) -> f64 {
        match self.fmt {
            Some(f) => f.min_positive(),
            None => f64::MIN_POSITIVE,
        }
    }

    /// Machine epsilon of the active mode.
    pub fn epsilon(&self) -> f64 {
        match self.fmt {
            Some(f) => f.epsilon(),
            None => f64::EPSILON,
        }
    }

    /// Round a wide value into the active mode.
    #[inline]
    pub fn q(&self, x: f64) -> f64 {
        match self.fmt {
            None => x,
            Some(f) => {
                let r = f.quantize(x);
                if self.coerce {
                    if r.is_nan() {
                        0.0
                    } else if r.is_infinite() {
                        f.max_finite().copysign(r)
                    } else {
                        r
                    }
                } else {
                    r
                }
            }
        }
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64) -> f64 {
        self.q(a + b)
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64) -> f64 {
        self.q(a - b)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64) -> f64 {
        self.q(a * b)
    }

    #[inline]
    pub fn div(&self, a: f64, b: f64) -> f64 {
        self.q(a / b)
    }

    #[inline]
    pub fn sqrt(&self, a: f64) -> f64 {
        self.q(a.sqrt())
    }

    #[inline]
    pub fn exp(&self, a: f64) -> f64 {
        self.q(a.exp())
    }

    #[inline]
    pub fn ln(&self, a: f64) -> f64 {
        self.q(a.ln())
    }

    #[inline]
    pub fn tanh(&self, a: f64) -> f64 {
        self.q(a.tanh())
    }
}

/// Enum-dispatched form of the emulated primitives. Unary ops read `args[0]`,
/// binary ops `args[0]` and `args[1]`.
pub fn qop(fmt: FloatFormat, op: QOp, args: &[f64]) -> f64 {
    let n = Numerics::emulated(fmt);
    match op {
        QOp::Add => n.add(args[0], args[1]),
        QOp::Sub => n.sub(args[0], args[1]),
        QOp::Mul => n.mul(args[0], args[1]),
        QOp::Div => n.div(args[0], args[1]),
        QOp::Sqrt => n.sqrt(args[0]),
        QOp::Exp => n.exp(args[0]),
        QOp::Log => n.ln(args[0]),
        QOp::Tanh => n.tanh(args[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qop_examples() {
        let fp16 = FloatFormat::fp16();
        // Spacing at 2048 is 2; the tie rounds to even.
        assert_eq!(qop(fp16, QOp::Add, &[2048.0, 1.0]), 2048.0);
        // 1e-8 is below half the minimum subnormal in both settings.
        assert_eq!(qop(fp16, QOp::Mul, &[1e-4, 1e-4]), 0.0);
        let ftz: FloatFormat = "e5m10fz".parse().unwrap();
        assert_eq!(qop(ftz, QOp::Mul, &[1e-4, 1e-4]), 0.0);
        // Exact small-integer arithmetic is untouched.
        assert_eq!(qop(fp16, QOp::Add, &[3.0, 4.0]), 7.0);
    }

    #[test]
    fn infinities_and_nan_propagate() {
        let fp16 = FloatFormat::fp16();
        assert_eq!(qop(fp16, QOp::Mul, &[60000.0, 2.0]), f64::INFINITY);
        assert!(qop(fp16, QOp::Sub, &[f64::INFINITY, f64::INFINITY]).is_nan());
        assert!(qop(fp16, QOp::Div, &[0.0, 0.0]).is_nan());
        assert_eq!(qop(fp16, QOp::Div, &[1.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn coercion_mode() {
        let n = Numerics::emulated_coerce(FloatFormat::fp16());
        assert_eq!(n.div(1.0, 0.0), 65504.0);
        assert_eq!(n.div(-1.0, 0.0), -65504.0);
        assert_eq!(n.div(0.0, 0.0), 0.0);
        assert_eq!(n.mul(60000.0, 2.0), 65504.0);
    }

    #[test]
    fn wide_mode_is_plain_f64() {
        let n = Numerics::wide();
        assert_eq!(n.add(0.1, 0.2), 0.1 + 0.2);
        assert_eq!(n.q(1e-300), 1e-300);
    }
}
