//! Objective reference-component selection.
//!
//! A plain Dirichlet is fitted by maximum likelihood; each component is then
//! read through its gamma representation `w_c ~ Gamma(α_c, 1)`, whose
//! skewness `2/√α_c` and kurtosis `3 + 6/α_c` both fall as α_c grows. The
//! component with the largest fitted shape is the best-behaved one and is
//! recommended as the reference.

use serde::Serialize;
use thiserror::Error;

use crate::dirichlet::{Composition, Dirichlet, DirichletError};
use crate::scalar::Real;
use crate::special::{self, SpecialError};

/// Shapes within this distance of the maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} observations for a {dim}-part fit, got {got}")]
    TooFewObservations { needed: usize, got: usize, dim: usize },
    #[error("observation {index} has {got} parts, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("Dirichlet MLE did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e}, last iterate {alpha:?})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        alpha: Vec<f64>,
    },
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient of the
    /// per-observation mean log-likelihood.
    pub gradient_tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
        }
    }
}

/// Result of [`fit_dirichlet_mle_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit<T> {
    pub params: Dirichlet<T>,
    pub iterations: usize,
    pub gradient_norm: T,
    /// Total log-likelihood at the estimate.
    pub log_likelihood: T,
    /// Total log-likelihood at the method-of-moments starting point.
    pub initial_log_likelihood: T,
}

struct Objective<T> {
    mean_log: Vec<T>,
}

impl<T: Real> Objective<T> {
    /// Per-observation mean log-likelihood.
    fn value(&self, alpha: &[T]) -> Result<T, SpecialError> {
        let phi: T = alpha.iter().copied().sum();
        let mut f = special::log_gamma(phi)?;
        for (&a, &l) in alpha.iter().zip(&self.mean_log) {
            f = f - special::log_gamma(a)? + (a - T::one()) * l;
        }
        Ok(f)
    }

    fn gradient(&self, alpha: &[T]) -> Result<Vec<T>, SpecialError> {
        let phi: T = alpha.iter().copied().sum();
        let psi_phi = special::digamma(phi)?;
        alpha
            .iter()
            .zip(&self.mean_log)
            .map(|(&a, &l)| Ok(psi_phi - special::digamma(a)? + l))
            .collect()
    }
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn method_of_moments<T: Real>(data: &[Composition<T>]) -> Vec<T> {
    let c = data[0].dim();
    let n = T::from_count(data.len());
    let mut m1 = vec![T::zero(); c];
    let mut m2 = vec![T::zero(); c];
    for y in data {
        for (k, &p) in y.parts().iter().enumerate() {
            m1[k] = m1[k] + p;
            m2[k] = m2[k] + p * p;
        }
    }
    let mut precision_sum = T::zero();
    let mut used = 0usize;
    for k in 0..c {
        m1[k] = m1[k] / n;
        m2[k] = m2[k] / n;
        let s = (m1[k] - m2[k]) / (m2[k] - m1[k] * m1[k]);
        if s.is_finite() && s > T::zero() {
            precision_sum = precision_sum + s;
            used += 1;
        }
    }
    let precision = if used > 0 {
        precision_sum / T::from_count(used)
    } else {
        T::from_count(c)
    };
    m1.iter().map(|&m| m * precision).collect()
}

/// Maximum-likelihood fit of a plain Dirichlet with default options.
pub fn fit_dirichlet_mle<T: Real>(data: &[Composition<T>]) -> Result<Dirichlet<T>, FitError> {
    fit_dirichlet_mle_with(data, MleOptions::default()).map(|fit| fit.params)
}

/// Damped Newton ascent on the log-likelihood in `ln α` coordinates,
/// started from the method-of-moments estimate.
///
/// The Hessian in log coordinates is diagonal plus rank one and is inverted
/// with Sherman–Morrison. When it is not negative definite the step falls
/// back to the gradient; every step is backtracked until the objective does
/// not decrease.
pub fn fit_dirichlet_mle_with<T: Real>(data: &[Composition<T>], options: MleOptions) -> Result<MleFit<T>, FitError> {
    let dim = data.first().map_or(0, |y| y.dim());
    if data.len() < dim + 1 || dim < 2 {
        return Err(FitError::TooFewObservations {
            needed: dim.max(2) + 1,
            got: data.len(),
            dim,
        });
    }
    let mut mean_log = vec![T::zero(); dim];
    for (index, y) in data.iter().enumerate() {
        if y.dim() != dim {
            return Err(FitError::Dimension {
                index,
                expected: dim,
                got: y.dim(),
            });
        }
        for (acc, &p) in mean_log.iter_mut().zip(y.parts()) {
            *acc = *acc + p.ln();
        }
    }
    let n = T::from_count(data.len());
    for v in mean_log.iter_mut() {
        *v = *v / n;
    }
    let objective = Objective { mean_log };

    let mut alpha = method_of_moments(data);
    let mut value = objective.value(&alpha)?;
    let initial_value = value;
    let max_log_step = T::one();

    for iteration in 0..=options.max_iterations {
        let grad = objective.gradient(&alpha)?;
        let grad_norm = max_abs(&grad);
        if grad_norm <= T::lit(options.gradient_tolerance) {
            return Ok(MleFit {
                params: Dirichlet::new(alpha)?,
                iterations: iteration,
                gradient_norm: grad_norm,
                log_likelihood: value * n,
                initial_log_likelihood: initial_value * n,
            });
        }
        if iteration == options.max_iterations {
            return Err(FitError::NonConvergence {
                iterations: iteration,
                gradient_norm: grad_norm.as_f64(),
                alpha: alpha.iter().map(|a| a.as_f64()).collect(),
            });
        }

        let phi: T = alpha.iter().copied().sum();
        let grad_log: Vec<T> = alpha.iter().zip(&grad).map(|(&a, &g)| a * g).collect();
        let mut direction = newton_direction(&alpha, &grad, &grad_log, special::trigamma(phi)?)?;
        let ascent: T = direction.iter().zip(&grad_log).map(|(&d, &g)| d * g).sum();
        let newton = ascent > T::zero() && direction.iter().all(|d| d.is_finite());
        if !newton {
            direction = grad_log.clone();
        }
        // Near the optimum the predicted gain drops below the rounding noise
        // of the objective and a line search cannot tell steps apart; the
        // Newton step is then taken as is.
        let resolution = T::lit(64.0) * T::epsilon() * (T::one() + value.abs());
        if newton && ascent < resolution && max_abs(&direction) < T::lit(1e-3) {
            alpha = alpha.iter().zip(&direction).map(|(&a, &d)| a * d.exp()).collect();
            value = objective.value(&alpha)?;
            continue;
        }
        let largest = max_abs(&direction);
        if largest > max_log_step {
            for d in direction.iter_mut() {
                *d = *d * max_log_step / largest;
            }
        }

        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = alpha
                .iter()
                .zip(&direction)
                .map(|(&a, &d)| a * (step * d).exp())
                .collect();
            if let Ok(trial_value) = objective.value(&trial) {
                if trial_value >= value {
                    alpha = trial;
                    value = trial_value;
                    accepted = true;
                    break;
                }
            }
            step = step * T::lit(0.5);
        }
        if !accepted {
            // No representable improvement along the direction; the iterate
            // is as good as floating point allows.
            return Err(FitError::NonConvergence {
                iterations: iteration,
                gradient_norm: grad_norm.as_f64(),
                alpha: alpha.iter().map(|a| a.as_f64()).collect(),
            });
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Solves `H δ = −∇` for the log-coordinate Hessian
/// `H = diag(α g − α² ψ′(α)) + ψ′(φ) α αᵀ`.
fn newton_direction<T: Real>(alpha: &[T], grad: &[T], grad_log: &[T], trigamma_phi: T) -> Result<Vec<T>, SpecialError> {
    let mut diag = Vec::with_capacity(alpha.len());
    for (&a, &g) in alpha.iter().zip(grad) {
        diag.push(a * g - a * a * special::trigamma(a)?);
    }
    if diag.iter().any(|&d| d >= T::zero()) {
        return Ok(grad_log.to_vec());
    }
    // (D + k a aᵀ)⁻¹ b = D⁻¹b − k D⁻¹a (aᵀD⁻¹b) / (1 + k aᵀD⁻¹a), b = −∇
    let d_inv_b: Vec<T> = grad_log.iter().zip(&diag).map(|(&g, &d)| -g / d).collect();
    let d_inv_a: Vec<T> = alpha.iter().zip(&diag).map(|(&a, &d)| a / d).collect();
    let a_d_inv_b: T = alpha.iter().zip(&d_inv_b).map(|(&a, &x)| a * x).sum();
    let a_d_inv_a: T = alpha.iter().zip(&d_inv_a).map(|(&a, &x)| a * x).sum();
    let factor = trigamma_phi * a_d_inv_b / (T::one() + trigamma_phi * a_d_inv_a);
    Ok(d_inv_b
        .iter()
        .zip(&d_inv_a)
        .map(|(&x, &y)| x - factor * y)
        .collect())
}

/// Gamma-representation shape statistics of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentShape<T> {
    pub alpha_hat: T,
    pub skewness: T,
    pub kurtosis: T,
}

impl<T: Real> ComponentShape<T> {
    pub fn from_shape(alpha: T) -> Self {
        Self {
            alpha_hat: alpha,
            skewness: T::lit(2.0) / alpha.sqrt(),
            kurtosis: T::lit(3.0) + T::lit(6.0) / alpha,
        }
    }
}

/// Outcome of [`select_reference`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceChoice {
    /// Zero-based component index.
    pub index: usize,
    /// All components tied with the maximum shape (length 1 when unique).
    pub tied: Vec<usize>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport<T> {
    pub components: Vec<ComponentShape<T>>,
    pub phi_hat: T,
    pub entropy_hat: T,
    pub reference: ReferenceChoice,
}

/// Skewness and kurtosis of every component's gamma representation.
pub fn shape_metrics<T: Real>(params: &Dirichlet<T>) -> Result<ShapeReport<T>, DirichletError> {
    let components: Vec<_> = params
        .alpha()
        .iter()
        .map(|&a| ComponentShape::from_shape(a))
        .collect();
    let reference = select_reference(&components);
    Ok(ShapeReport {
        components,
        phi_hat: params.precision(),
        entropy_hat: params.entropy()?,
        reference,
    })
}

/// Picks the component with the largest fitted shape (equivalently the
/// smallest skewness and kurtosis). Ties resolve to the lowest index and
/// carry a warning.
pub fn select_reference<T: Real>(components: &[ComponentShape<T>]) -> ReferenceChoice {
    let max = components
        .iter()
        .map(|c| c.alpha_hat)
        .fold(T::neg_infinity(), T::max);
    let tied: Vec<usize> = components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.alpha_hat >= max - T::lit(TIE_TOLERANCE))
        .map(|(i, _)| i)
        .collect();
    let index = tied[0];
    let warning = (tied.len() > 1).then(|| {
        let message = format!(
            "components {tied:?} tie for the largest shape; using the lowest index {index}"
        );
        log::warn!("{message}");
        message
    });
    ReferenceChoice {
        index,
        tied,
        warning,
    }
}

/// Sample skewness and (non-excess) kurtosis of a column of values.
pub fn empirical_shape<T: Real>(values: &[T]) -> (T, T) {
    let n = T::from_count(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 = m2 + d2;
        m3 = m3 + d2 * d;
        m4 = m4 + d2 * d2;
    }
    m2 = m2 / n;
    m3 = m3 / n;
    m4 = m4 / n;
    (m3 / m2.powf(T::lit(1.5)), m4 / (m2 * m2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_formulas() {
        let s = ComponentShape::from_shape(4.59_f64);
        assert!((s.skewness - 0.9335).abs() < 5e-5);
        assert!((s.kurtosis - 4.3072).abs() < 5e-5);
        let s = ComponentShape::from_shape(5.27_f64);
        assert!((s.skewness - 0.8712).abs() < 5e-5);
        assert!((s.kurtosis - 4.1386).abs() < 1e-4);
        let s = ComponentShape::from_shape(4.0_f64);
        assert_eq!((s.skewness, s.kurtosis), (1.0, 4.5));
    }

    #[test]
    fn selects_scenario_three_reference() {
        let alpha = vec![1.55, 1.44, 4.17, 1.81, 1.72, 1.32, 1.71];
        let report = shape_metrics(&Dirichlet::new(alpha).unwrap()).unwrap();
        assert_eq!(report.reference.index, 2);
        assert!(report.reference.warning.is_none());
    }

    #[test]
    fn tie_uses_lowest_index_and_warns() {
        let report = shape_metrics(&Dirichlet::new(vec![2.0, 2.0, 2.0]).unwrap()).unwrap();
        assert_eq!(report.reference.index, 0);
        assert_eq!(report.reference.tied, vec![0, 1, 2]);
        assert!(report.reference.warning.is_some());
    }

    #[test]
    fn mle_recovers_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = Dirichlet::new(vec![1.0_f64, 1.0]).unwrap().sample(5000, &mut rng).unwrap();
        let fit = fit_dirichlet_mle_with(&data, MleOptions::default()).unwrap();
        for &a in fit.params.alpha() {
            assert!((a - 1.0).abs() < 0.06, "{a}");
        }
        assert!(fit.gradient_norm <= 1e-8);
        assert!(fit.log_likelihood >= fit.initial_log_likelihood);
    }

    #[test]
    fn mle_rejects_tiny_samples() {
        let data = vec![Composition::new(vec![0.2, 0.3, 0.5]).unwrap(); 3];
        assert!(matches!(
            fit_dirichlet_mle(&data),
            Err(FitError::TooFewObservations { needed: 4, got: 3, .. })
        ));
    }

    #[test]
    fn mle_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Dirichlet::new(vec![2.0, 3.0]).unwrap().sample(50, &mut rng).unwrap();
        let options = MleOptions {
            max_iterations: 0,
            gradient_tolerance: 1e-8,
        };
        match fit_dirichlet_mle_with(&data, options) {
            Err(FitError::NonConvergence { alpha, gradient_norm, .. }) => {
                assert_eq!(alpha.len(), 2);
                assert!(gradient_norm > 1e-8);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn empirical_shape_of_symmetric_sample() {
        let (skew, kurt) = empirical_shape(&[-1.0_f64, 1.0, -1.0, 1.0]);
        assert_eq!(skew, 0.0);
        assert_eq!(kurt, 1.0);
    }
}
