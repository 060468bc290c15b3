//! Compositions and the Dirichlet distribution.
//!
//! Draws are produced through the gamma representation: independent
//! `w_c ~ Gamma(α_c, 1)` normalised by their sum. Variates are generated on
//! the log scale so that small shapes (α ≪ 1) do not underflow before the
//! normalisation.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::Real;
use crate::special::{self, SpecialError};

/// Attempts made to produce a valid composition before giving up.
pub const MAX_SAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositionError {
    #[error("a composition needs at least 2 parts, got {0}")]
    TooFewParts(usize),
    #[error("part {index} is {value}; parts must lie strictly inside (0, 1)")]
    PartOutOfRange { index: usize, value: f64 },
    #[error("parts sum to {sum}, deviating from 1 by more than {tolerance}")]
    SumMismatch { sum: f64, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirichletError {
    #[error("dimension mismatch: expected {expected} parts, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("shape parameter {index} is {value}; all shapes must be finite and > 0")]
    InvalidShape { index: usize, value: f64 },
    #[error("precision {0} must be finite and > 0")]
    InvalidPrecision(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("no valid composition after {0} sampling attempts")]
    DegenerateSample(usize),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// A point in the open simplex: strictly positive parts summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition<T> {
    parts: Vec<T>,
}

impl<T: Real> Composition<T> {
    /// Sum-to-one tolerance applied by [`Composition::new`].
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Validates `parts` and renormalises them exactly to sum to one.
    pub fn new(parts: Vec<T>) -> Result<Self, CompositionError> {
        Self::with_tolerance(parts, Self::SUM_TOLERANCE)
    }

    pub fn with_tolerance(parts: Vec<T>, tolerance: f64) -> Result<Self, CompositionError> {
        if parts.len() < 2 {
            return Err(CompositionError::TooFewParts(parts.len()));
        }
        check_parts(&parts)?;
        let sum: T = parts.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(tolerance) {
            return Err(CompositionError::SumMismatch {
                sum: sum.as_f64(),
                tolerance,
            });
        }
        Self::close(parts)
    }

    /// Closes an arbitrary vector of positive reals onto the simplex.
    pub fn closure(values: Vec<T>) -> Result<Self, CompositionError> {
        if values.len() < 2 {
            return Err(CompositionError::TooFewParts(values.len()));
        }
        for (index, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v > T::zero()) {
                return Err(CompositionError::PartOutOfRange {
                    index,
                    value: v.as_f64(),
                });
            }
        }
        Self::close(values)
    }

    fn close(mut parts: Vec<T>) -> Result<Self, CompositionError> {
        let sum: T = parts.iter().copied().sum();
        // a sum already at one up to accumulated rounding is left alone;
        // dividing would only add error
        let rounding = T::epsilon() * T::from_count(4 * parts.len());
        if (sum - T::one()).abs() > rounding {
            for p in parts.iter_mut() {
                *p = *p / sum;
            }
        }
        check_parts(&parts)?;
        Ok(Self { parts })
    }

    /// The uniform composition (1/C, …, 1/C).
    pub fn uniform(dim: usize) -> Result<Self, CompositionError> {
        Self::closure(vec![T::one(); dim])
    }

    pub fn parts(&self) -> &[T] {
        &self.parts
    }

    pub fn dim(&self) -> usize {
        self.parts.len()
    }

    pub fn into_parts(self) -> Vec<T> {
        self.parts
    }
}

fn check_parts<T: Real>(parts: &[T]) -> Result<(), CompositionError> {
    for (index, &p) in parts.iter().enumerate() {
        if !(p.is_finite() && p > T::zero() && p < T::one()) {
            return Err(CompositionError::PartOutOfRange {
                index,
                value: p.as_f64(),
            });
        }
    }
    Ok(())
}

/// Zero-replacement `y' = (y·(N−1) + 1/C) / N` over a sample of `N` rows.
///
/// Applied to raw rows before validation when the caller opts in; rows must
/// already sum to one.
pub fn adjust_zeros<T: Real>(rows: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = T::from_count(rows.len());
    rows.iter()
        .map(|row| {
            let inv_c = T::from_count(row.len()).recip();
            row.iter()
                .map(|&y| (y * (n - T::one()) + inv_c) / n)
                .collect()
        })
        .collect()
}

/// First and second moments of a Dirichlet distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    pub covariance: Vec<Vec<T>>,
}

/// Dirichlet parameters, stored as the shape vector α.
///
/// The mean–precision form is `μ_c = α_c / φ`, `φ = Σ α_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet<T> {
    alpha: Vec<T>,
}

impl<T: Real> Dirichlet<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self, DirichletError> {
        if alpha.len() < 2 {
            return Err(CompositionError::TooFewParts(alpha.len()).into());
        }
        for (index, &a) in alpha.iter().enumerate() {
            if !(a.is_finite() && a > T::zero()) {
                return Err(DirichletError::InvalidShape {
                    index,
                    value: a.as_f64(),
                });
            }
        }
        Ok(Self { alpha })
    }

    /// Builds `α_c = μ_c · φ`.
    pub fn from_mean_precision(mean: &Composition<T>, precision: T) -> Result<Self, DirichletError> {
        if !(precision.is_finite() && precision > T::zero()) {
            return Err(DirichletError::InvalidPrecision(precision.as_f64()));
        }
        Self::new(mean.parts().iter().map(|&m| m * precision).collect())
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn precision(&self) -> T {
        self.alpha.iter().copied().sum()
    }

    pub fn mean(&self) -> Vec<T> {
        let phi = self.precision();
        self.alpha.iter().map(|&a| a / phi).collect()
    }

    pub fn to_mean_precision(&self) -> (Vec<T>, T) {
        (self.mean(), self.precision())
    }

    fn check_dim(&self, got: usize) -> Result<(), DirichletError> {
        if got != self.dim() {
            return Err(DirichletError::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// ln f(y | α) = ln Γ(φ) − Σ ln Γ(α_c) + Σ (α_c − 1) ln y_c
    pub fn log_density(&self, y: &Composition<T>) -> Result<T, DirichletError> {
        self.check_dim(y.dim())?;
        let mut value = special::log_gamma(self.precision())?;
        for (&a, &yc) in self.alpha.iter().zip(y.parts()) {
            value = value - special::log_gamma(a)? + (a - T::one()) * yc.ln();
        }
        if !value.is_finite() {
            return Err(DirichletError::NonFinite("log density"));
        }
        Ok(value)
    }

    pub fn moments(&self) -> Moments<T> {
        let phi = self.precision();
        let denom = phi * phi * (phi + T::one());
        let mean = self.mean();
        let c = self.dim();
        let mut covariance = vec![vec![T::zero(); c]; c];
        for i in 0..c {
            for j in 0..c {
                covariance[i][j] = if i == j {
                    self.alpha[i] * (phi - self.alpha[i]) / denom
                } else {
                    -(self.alpha[i] * self.alpha[j]) / denom
                };
            }
        }
        let variance = (0..c).map(|i| covariance[i][i]).collect();
        Moments {
            mean,
            variance,
            covariance,
        }
    }

    /// Differential entropy
    /// `H = Σ ln Γ(α_c) − ln Γ(φ) + (φ − C) ψ(φ) − Σ (α_c − 1) ψ(α_c)`.
    pub fn entropy(&self) -> Result<T, DirichletError> {
        let phi = self.precision();
        let c = T::from_count(self.dim());
        let mut h = (phi - c) * special::digamma(phi)? - special::log_gamma(phi)?;
        for &a in &self.alpha {
            h = h + special::log_gamma(a)? - (a - T::one()) * special::digamma(a)?;
        }
        Ok(h)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Composition<T>, DirichletError> {
        let mut log_w = vec![T::zero(); self.dim()];
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            for (lw, &a) in log_w.iter_mut().zip(&self.alpha) {
                *lw = log_gamma_variate(a, rng);
            }
            let total = special::log_sum_exp(&log_w);
            if !total.is_finite() {
                continue;
            }
            let parts = log_w.iter().map(|&lw| (lw - total).exp()).collect();
            if let Ok(y) = Composition::new(parts) {
                return Ok(y);
            }
        }
        Err(DirichletError::DegenerateSample(MAX_SAMPLE_ATTEMPTS))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Composition<T>>, DirichletError> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Recovers gamma-scale components `w_i = S_i · y_i` with
    /// `S_i ~ Gamma(φ, 1)` drawn independently of `y_i`.
    ///
    /// When `y_i ~ Dir(α)` the columns of the result are independent
    /// `Gamma(α_c, 1)` variates, and `w_i / Σ w_i` reproduces `y_i`.
    pub fn gamma_components<R: Rng + ?Sized>(
        &self,
        sample: &[Composition<T>],
        rng: &mut R,
    ) -> Result<Vec<Vec<T>>, DirichletError> {
        let phi = self.precision();
        sample
            .iter()
            .map(|y| {
                self.check_dim(y.dim())?;
                let scale = log_gamma_variate(phi, rng).exp();
                Ok(y.parts().iter().map(|&p| p * scale).collect())
            })
            .collect()
    }
}

/// One `Gamma(shape, 1)` variate.
pub fn sample_gamma<T: Real, R: Rng + ?Sized>(shape: T, rng: &mut R) -> T {
    log_gamma_variate(shape, rng).exp()
}

/// Logarithm of a `Gamma(shape, 1)` variate.
///
/// Marsaglia–Tsang squeeze/rejection for `shape ≥ 1`; for `shape < 1` the
/// boost `G(shape) = G(shape + 1) · U^{1/shape}` is applied on the log scale.
pub fn log_gamma_variate<T: Real, R: Rng + ?Sized>(shape: T, rng: &mut R) -> T {
    if shape < T::one() {
        let u: f64 = 1.0 - rng.random::<f64>();
        return log_gamma_variate(shape + T::one(), rng) + T::lit(u.ln()) / shape;
    }
    let third = T::lit(1.0 / 3.0);
    let d = shape - third;
    let c = third / d.sqrt();
    loop {
        let x: T = T::lit(rng.sample::<f64, _>(StandardNormal));
        let t = T::one() + c * x;
        if t <= T::zero() {
            continue;
        }
        let v = t * t * t;
        let u: T = T::lit(1.0 - rng.random::<f64>());
        let x2 = x * x;
        if u < T::one() - T::lit(0.0331) * x2 * x2 {
            return d.ln() + v.ln();
        }
        if u.ln() < T::lit(0.5) * x2 + d * (T::one() - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}
