//! Parameterized binary floating-point formats and round-to-nearest-even
//! quantization of `f64` values into them.

use std::fmt;
use std::str::FromStr;

/// Errors from constructing or parsing a [`FloatFormat`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    /// Exponent width outside the supported 2..=11 range.
    ExponentBits(u32),
    /// Significand width outside the supported 1..=52 range.
    SignificandBits(u32),
    /// Spec string did not match `e<E>m<M>[fz]`.
    Parse(String),
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::ExponentBits(n) => {
                write!(f, "exponent bits must be in 2..=11, got {n}")
            }
            FormatError::SignificandBits(n) => {
                write!(f, "significand bits must be in 1..=52, got {n}")
            }
            FormatError::Parse(s) => write!(f, "invalid format spec {s:?}, expected e<E>m<M>[fz]"),
        }
    }
}

impl std::error::Error for FormatError {}

/// A binary floating-point format described by its exponent width, the number
/// of stored fraction bits, and whether subnormals are kept or flushed to zero.
///
/// Emulation uses `f64` as the carrier, so formats are limited to widths that
/// `f64` can represent exactly (exponent <= 11 bits, significand <= 52 bits).
/// Only round-to-nearest-even is supported.
#[derive(Debug, Clone, Copy)]
pub struct FloatFormat {
    exp_bits: u32,
    sig_bits: u32,
    subnormals: bool,
    // Cached for the quantize hot path.
    emin: i32,
    max_finite: f64,
    min_normal: f64,
    /// f64 exponent field of the smallest target-normal binade.
    emin_field: u64,
    /// Bit pattern of `max_finite` (sign cleared).
    max_bits: u64,
    /// Fraction bits dropped when narrowing f64's 52-bit field.
    shift: u32,
}

// The cached fields are functions of the first three, so identity is too.
impl PartialEq for FloatFormat {
    fn eq(&self, other: &Self) -> bool {
        self.exp_bits == other.exp_bits
            && self.sig_bits == other.sig_bits
            && self.subnormals == other.subnormals
    }
}

impl Eq for FloatFormat {}

impl std::hash::Hash for FloatFormat {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        (self.exp_bits, self.sig_bits, self.subnormals).hash(state);
    }
}

/// Derived range constants of a [`FloatFormat`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatConstants {
    pub max_finite: f64,
    pub min_normal: f64,
    pub min_subnormal: f64,
    pub epsilon: f64,
}

/// Exact power of two for exponents representable in f64 (including the
/// subnormal range down to 2^-1074).
#[inline]
pub(crate) fn pow2(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

/// `x * 2^k`, exact whenever the result is representable. Splits the scale
/// in two when `2^k` itself would leave the f64 exponent range.
#[inline]
fn scale_by_pow2(x: f64, k: i32) -> f64 {
    if (-1022..=1023).contains(&k) {
        x * pow2(k)
    } else {
        let h = k / 2;
        (x * pow2(h)) * pow2(k - h)
    }
}

impl FloatFormat {
    /// Build a format; `sig_bits` counts stored fraction bits (10 for fp16).
    pub fn new(exp_bits: u32, sig_bits: u32, subnormals: bool) -> Result<Self, FormatError> {
        if !(2..=11).contains(&exp_bits) {
            return Err(FormatError::ExponentBits(exp_bits));
        }
        if !(1..=52).contains(&sig_bits) {
            return Err(FormatError::SignificandBits(sig_bits));
        }
        let bias = (1i32 << (exp_bits - 1)) - 1;
        let emin = 1 - bias;
        let emax = bias;
        let max_finite = (2.0 - pow2(-(sig_bits as i32))) * pow2(emax);
        let min_normal = pow2(emin);
        Ok(Self {
            exp_bits,
            sig_bits,
            subnormals,
            emin,
            max_finite,
            min_normal,
            emin_field: (emin + 1023) as u64,
            max_bits: max_finite.to_bits(),
            shift: 52 - sig_bits,
        })
    }

    /// IEEE binary16: e5m10 with subnormals enabled.
    pub fn fp16() -> Self {
        Self::new(5, 10, true).expect("fp16 is a valid format")
    }

    /// Same layout as IEEE binary32 (e8m23).
    pub fn fp32_like() -> Self {
        Self::new(8, 23, true).expect("e8m23 is a valid format")
    }

    /// Same layout as IEEE binary64; quantization is the identity on `f64`.
    pub fn fp64_like() -> Self {
        Self::new(11, 52, true).expect("e11m52 is a valid format")
    }

    pub fn exp_bits(&self) -> u32 {
        self.exp_bits
    }

    pub fn sig_bits(&self) -> u32 {
        self.sig_bits
    }

    pub fn subnormals_enabled(&self) -> bool {
        self.subnormals
    }

    /// Exponent bias `2^(E-1) - 1`.
    pub fn bias(&self) -> i32 {
        (1i32 << (self.exp_bits - 1)) - 1
    }

    /// Largest finite value `(2 - 2^-M) * 2^bias`.
    pub fn max_finite(&self) -> f64 {
        self.max_finite
    }

    /// Smallest positive normal value `2^(1-bias)`.
    pub fn min_normal(&self) -> f64 {
        self.min_normal
    }

    /// Smallest positive subnormal value `2^(1-bias-M)`.
    pub fn min_subnormal(&self) -> f64 {
        pow2(self.emin - self.sig_bits as i32)
    }

    /// Machine epsilon `2^-M`.
    pub fn epsilon(&self) -> f64 {
        pow2(-(self.sig_bits as i32))
    }

    /// Smallest positive representable magnitude under the format's
    /// subnormal handling.
    pub fn min_positive(&self) -> f64 {
        if self.subnormals {
            self.min_subnormal()
        } else {
            self.min_normal
        }
    }

    /// All derived range constants at once.
    pub fn constants(&self) -> FormatConstants {
        FormatConstants {
            max_finite: self.max_finite,
            min_normal: self.min_normal,
            min_subnormal: self.min_subnormal(),
            epsilon: self.epsilon(),
        }
    }

    /// Spacing between adjacent representable values at magnitude `x`
    /// (the subnormal spacing for magnitudes below `min_normal`).
    pub fn ulp(&self, x: f64) -> f64 {
        let ax = x.abs();
        if !ax.is_finite() {
            return f64::INFINITY;
        }
        let e = if ax < self.min_normal {
            self.emin
        } else {
            exponent_floor(ax).min(self.bias())
        };
        pow2(e - self.sig_bits as i32)
    }

    /// Round `x` into the format under round-to-nearest-even.
    ///
    /// Magnitudes that round past `max_finite` become infinity; magnitudes
    /// that round below the smallest representable value become signed zero.
    /// NaN and infinities pass through, and the sign of zero is preserved.
    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        // Fast path for inputs whose binade is normal in the target format:
        // round-to-nearest-even directly on the f64 bit pattern. The +bump
        // carry rolls the mantissa into the exponent field exactly as IEEE
        // rounding requires.
        let bits = x.to_bits();
        let exp_field = (bits >> 52) & 0x7ff;
        if exp_field >= self.emin_field && exp_field < 0x7ff {
            if self.shift == 0 {
                let abs = bits & !(1u64 << 63);
                return if abs > self.max_bits {
                    f64::INFINITY.copysign(x)
                } else {
                    x
                };
            }
            let bump = ((bits >> self.shift) & 1) + (1u64 << (self.shift - 1)) - 1;
            let r_bits = (bits + bump) & !((1u64 << self.shift) - 1);
            let abs = r_bits & !(1u64 << 63);
            return if abs > self.max_bits {
                f64::INFINITY.copysign(x)
            } else {
                f64::from_bits(r_bits)
            };
        }
        self.quantize_small(x)
    }

    /// Zeros, NaN, infinities, and magnitudes below the target's normal
    /// range (rounded at the subnormal granularity via exact scaling).
    #[cold]
    fn quantize_small(&self, x: f64) -> f64 {
        if !x.is_finite() || x == 0.0 {
            return x;
        }
        let e = exponent_floor(x);
        if e < self.emin {
            // Result lands in the subnormal range (or underflows entirely):
            // round at the fixed subnormal granularity 2^(emin - M).
            let gexp = self.emin - self.sig_bits as i32;
            let r = scale_by_pow2(scale_by_pow2(x, -gexp).round_ties_even(), gexp);
            if !self.subnormals && r.abs() < self.min_normal {
                return 0.0f64.copysign(x);
            }
            if r == 0.0 {
                return 0.0f64.copysign(x);
            }
            r
        } else {
            // Normal range: granularity 2^(e - M). Both scalings are exact
            // powers of two, so the only rounding is round_ties_even itself.
            let gexp = e - self.sig_bits as i32;
            let r = scale_by_pow2(scale_by_pow2(x, -gexp).round_ties_even(), gexp);
            if r.abs() > self.max_finite {
                f64::INFINITY.copysign(x)
            } else {
                r
            }
        }
    }

    /// Whether `x` is exactly representable (quantization is idempotent).
    pub fn is_representable(&self, x: f64) -> bool {
        x.is_nan() || self.quantize(x) == x
    }
}

/// floor(log2(|x|)) for finite nonzero x, from the bit pattern.
#[inline]
fn exponent_floor(x: f64) -> i32 {
    let bits = x.abs().to_bits();
    let e = (bits >> 52) as i32;
    if e == 0 {
        // f64 subnormal: value = frac * 2^-1074.
        let frac = bits & ((1u64 << 52) - 1);
        63 - frac.leading_zeros() as i32 - 1074
    } else {
        e - 1023
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}m{}", self.exp_bits, self.sig_bits)?;
        if !self.subnormals {
            write!(f, "fz")?;
        }
        Ok(())
    }
}

impl FromStr for FloatFormat {
    type Err = FormatError;

    /// Parse the `e<E>m<M>[fz]` spec string, e.g. `e5m10` or `e5m7fz`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FormatError::Parse(s.to_string());
        let rest = s.strip_prefix('e').ok_or_else(bad)?;
        let m_pos = rest.find('m').ok_or_else(bad)?;
        let exp_bits: u32 = rest[..m_pos].parse().map_err(|_| bad())?;
        let tail = &rest[m_pos + 1..];
        let (sig_str, subnormals) = match tail.strip_suffix("fz") {
            Some(t) => (t, false),
            None => (tail, true),
        };
        let sig_bits: u32 = sig_str.parse().map_err(|_| bad())?;
        FloatFormat::new(exp_bits, sig_bits, subnormals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fp16_constants() {
        let f = FloatFormat::fp16();
        assert_eq!(f.max_finite(), 65504.0);
        assert_eq!(f.min_normal(), pow2(-14));
        assert_eq!(f.min_subnormal(), pow2(-24));
        assert_eq!(f.epsilon(), pow2(-10));
        assert_eq!(f.bias(), 15);
    }

    #[test]
    fn e8m23_matches_single_precision_range() {
        let f = FloatFormat::fp32_like();
        assert_eq!(f.max_finite(), f32::MAX as f64);
        assert_eq!(f.min_normal(), f32::MIN_POSITIVE as f64);
        assert_eq!(f.epsilon(), f32::EPSILON as f64);
    }

    #[test]
    fn invalid_widths_rejected() {
        assert!(FloatFormat::new(1, 10, true).is_err());
        assert!(FloatFormat::new(12, 10, true).is_err());
        assert!(FloatFormat::new(5, 0, true).is_err());
        assert!(FloatFormat::new(5, 53, true).is_err());
    }

    #[test]
    fn spec_string_round_trip() {
        for s in ["e5m10", "e5m3", "e8m23", "e5m7fz", "e2m1"] {
            let f: FloatFormat = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("m10e5".parse::<FloatFormat>().is_err());
        assert!("e5m".parse::<FloatFormat>().is_err());
        assert!("e5m10z".parse::<FloatFormat>().is_err());
    }

    #[test]
    fn quantize_examples() {
        let fp16 = FloatFormat::fp16();
        // Exactly representable.
        assert_eq!(fp16.quantize(1.0), 1.0);
        // Tie between 1 and 1 + 2^-10 resolves to the even significand.
        assert_eq!(fp16.quantize(1.0 + pow2(-11)), 1.0);
        // Half the minimum subnormal ties down to (even) zero; below it
        // underflows outright.
        assert_eq!(fp16.quantize(pow2(-25)), 0.0);
        assert_eq!(fp16.quantize(pow2(-26)), 0.0);
        assert!(fp16.quantize(-pow2(-26)).is_sign_negative());
        // Midpoint between 65504 and 65536 rounds up past max finite.
        assert_eq!(fp16.quantize(65520.0), f64::INFINITY);
        assert_eq!(fp16.quantize(-65520.0), f64::NEG_INFINITY);
        assert_eq!(fp16.quantize(65519.9), 65504.0);
        // Addition spacing at 2048 is 2: tie rounds to even (2048).
        assert_eq!(fp16.quantize(2049.0), 2048.0);
        assert_eq!(fp16.quantize(2051.0), 2052.0);
    }

    #[test]
    fn quantize_specials() {
        let fp16 = FloatFormat::fp16();
        assert!(fp16.quantize(f64::NAN).is_nan());
        assert_eq!(fp16.quantize(f64::INFINITY), f64::INFINITY);
        assert_eq!(fp16.quantize(f64::NEG_INFINITY), f64::NEG_INFINITY);
        let nz = fp16.quantize(-0.0);
        assert_eq!(nz, 0.0);
        assert!(nz.is_sign_negative());
    }

    #[test]
    fn flush_to_zero_variant() {
        let ftz: FloatFormat = "e5m10fz".parse().unwrap();
        assert_eq!(ftz.quantize(pow2(-15)), 0.0);
        // Values that round up to min_normal survive.
        assert_eq!(ftz.quantize(pow2(-14) * 0.9999), pow2(-14));
        assert_eq!(ftz.quantize(pow2(-14)), pow2(-14));
        assert_eq!(ftz.min_positive(), pow2(-14));
        let sub: FloatFormat = "e5m10".parse().unwrap();
        assert_eq!(sub.quantize(pow2(-15)), pow2(-15));
        assert_eq!(sub.min_positive(), pow2(-24));
    }

    #[test]
    fn e11m52_is_identity_on_f64() {
        let f = FloatFormat::fp64_like();
        for x in [
            1.0,
            -3.5e300,
            f64::MIN_POSITIVE,
            5e-324,
            f64::MAX,
            0.1,
            -7.3e-200,
        ] {
            assert_eq!(f.quantize(x), x);
        }
    }

    #[test]
    fn ulp_spacing() {
        let fp16 = FloatFormat::fp16();
        assert_eq!(fp16.ulp(1.0), pow2(-10));
        assert_eq!(fp16.ulp(2048.0), 2.0);
        assert_eq!(fp16.ulp(1e-6), pow2(-24));
        assert_eq!(fp16.ulp(65504.0), 32.0);
    }
}
