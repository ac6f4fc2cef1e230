//! Compensated (Kahan) summation and its two training applications:
//! per-parameter gradient accumulation, and target-network momentum updates
//! made against a scaled weight copy.
//!
//! Every arithmetic step goes through the [`Numerics`] context, so in
//! emulated mode the compensation runs in the narrow format itself, which is
//! the point: the compensation term recovers the low bits that the narrow
//! additions drop.

use lprl_sim::Numerics;
use thiserror::Error;

/// Update shape does not match the buffer shape.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: buffer holds {expected} entries, update has {got}")]
pub struct ShapeMismatch {
    pub expected: usize,
    pub got: usize,
}

/// A running sum plus its compensation term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanAccumulator {
    pub sum: f64,
    pub c: f64,
}

impl KahanAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// One compensated addition: y = val - c; t = sum + y; c = (t - sum) - y;
    /// sum = t, with every step rounded into the active format.
    #[inline]
    pub fn add(&mut self, val: f64, n: &Numerics) {
        let y = n.sub(val, self.c);
        let t = n.add(self.sum, y);
        self.c = n.sub(n.sub(t, self.sum), y);
        self.sum = t;
    }

    pub fn sum_of(values: impl IntoIterator<Item = f64>, n: &Numerics) -> f64 {
        let mut acc = Self::new();
        for v in values {
            acc.add(v, n);
        }
        acc.sum
    }
}

/// Free-function form of [`KahanAccumulator::add`].
pub fn kahan_add(acc: &mut KahanAccumulator, val: f64, n: &Numerics) {
    acc.add(val, n);
}

/// Parameter tensor with a same-shaped compensation array, so that gradient
/// updates far below one ulp of the parameter still accumulate.
#[derive(Debug, Clone)]
pub struct KahanParamBuffer {
    values: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanParamBuffer {
    /// Wrap existing parameter values; compensation starts at zero.
    pub fn new(values: Vec<f64>) -> Self {
        let comp = vec![0.0; values.len()];
        Self { values, comp }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn compensation(&self) -> &[f64] {
        self.comp.as_slice()
    }

    /// Apply `theta <- theta + delta` entrywise through compensated addition.
    pub fn apply_update(&mut self, delta: &[f64], n: &Numerics) -> Result<(), ShapeMismatch> {
        if delta.len() != self.values.len() {
            return Err(ShapeMismatch {
                expected: self.values.len(),
                got: delta.len(),
            });
        }
        for i in 0..delta.len() {
            let y = n.sub(delta[i], self.comp[i]);
            let t = n.add(self.values[i], y);
            self.comp[i] = n.sub(n.sub(t, self.values[i]), y);
            self.values[i] = t;
        }
        Ok(())
    }
}

/// Free-function form of [`KahanParamBuffer::apply_update`].
pub fn kahan_apply_gradient(
    buf: &mut KahanParamBuffer,
    delta: &[f64],
    n: &Numerics,
) -> Result<(), ShapeMismatch> {
    buf.apply_update(delta, n)
}

/// Target-network weights held as a copy scaled by C, with per-entry
/// compensation. The exponential moving average
/// `psi_hat <- beta psi_hat + (1 - beta) psi` is realised by Kahan-adding
/// `C (1 - beta) (psi - psi_hat)` to the scaled copy; read-out divides by C
/// in wide precision before quantizing.
#[derive(Debug, Clone)]
pub struct ScaledTargetBuffer {
    scaled: Vec<f64>,
    comp: Vec<f64>,
    scale: f64,
    beta: f64,
    /// C * (1 - beta), formed in wide precision and quantized once. Applying
    /// it as a single factor keeps small weight differences from underflowing
    /// before the upscale.
    factor: f64,
}

impl ScaledTargetBuffer {
    pub fn new(weights: &[f64], scale: f64, beta: f64, n: &Numerics) -> Self {
        assert!(scale >= 1.0, "scale C must be >= 1");
        assert!(0.0 < beta && beta < 1.0, "beta must lie in (0, 1)");
        let scaled = weights.iter().map(|&w| n.q(scale * w)).collect();
        let comp = vec![0.0; weights.len()];
        let factor = n.q(scale * (1.0 - beta));
        Self {
            scaled,
            comp,
            scale,
            beta,
            factor,
        }
    }

    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn compensation(&self) -> &[f64] {
        self.comp.as_slice()
    }

    /// Current target weights, `scaled / C` rounded once.
    pub fn read_out(&self, n: &Numerics) -> Vec<f64> {
        self.scaled.iter().map(|&s| n.q(s / self.scale)).collect()
    }

    /// One momentum step toward `psi`.
    pub fn update(&mut self, psi: &[f64], n: &Numerics) -> Result<(), ShapeMismatch> {
        if psi.len() != self.scaled.len() {
            return Err(ShapeMismatch {
                expected: self.scaled.len(),
                got: psi.len(),
            });
        }
        for i in 0..psi.len() {
            let target = n.q(self.scaled[i] / self.scale);
            let diff = n.sub(psi[i], target);
            let delta = n.mul(self.factor, diff);
            let y = n.sub(delta, self.comp[i]);
            let t = n.add(self.scaled[i], y);
            self.comp[i] = n.sub(n.sub(t, self.scaled[i]), y);
            self.scaled[i] = t;
        }
        Ok(())
    }
}

/// Free-function form of [`ScaledTargetBuffer::update`].
pub fn kahan_momentum_update(
    tb: &mut ScaledTargetBuffer,
    psi: &[f64],
    n: &Numerics,
) -> Result<(), ShapeMismatch> {
    tb.update(psi, n)
}
