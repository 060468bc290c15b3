use rand::Rng;
use serde::Serialize;

use crate::dirichlet::{Composition, Dirichlet};
use crate::metrics::quantile;
use crate::sampler::PosteriorDraws;

use super::params::GroupEffects;
use super::{ModelError, ModelSpec, PRECISION_EXPONENT_LIMIT};

/// Componentwise posterior predictive summary of one observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveSummary {
    pub q025: Vec<f64>,
    pub q05: Vec<f64>,
    pub mean: Vec<f64>,
    pub q95: Vec<f64>,
    pub q975: Vec<f64>,
}

impl PredictiveSummary {
    fn from_draws(draws: &[Composition<f64>]) -> Self {
        let c = draws[0].dim();
        let mut summary = Self {
            q025: Vec::with_capacity(c),
            q05: Vec::with_capacity(c),
            mean: Vec::with_capacity(c),
            q95: Vec::with_capacity(c),
            q975: Vec::with_capacity(c),
        };
        for k in 0..c {
            let values: Vec<f64> = draws.iter().map(|d| d.parts()[k]).collect();
            summary.q025.push(quantile(&values, 0.025));
            summary.q05.push(quantile(&values, 0.05));
            summary.mean.push(values.iter().sum::<f64>() / values.len() as f64);
            summary.q95.push(quantile(&values, 0.95));
            summary.q975.push(quantile(&values, 0.975));
        }
        summary
    }
}

/// Posterior predictive output for a batch of covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// One predictive composition per posterior draw, per observation.
    pub draws: Vec<Vec<Composition<f64>>>,
    /// Posterior mean of μ per observation.
    pub expected: Vec<Composition<f64>>,
    /// Posterior mean of φ per observation.
    pub precision: Vec<f64>,
    pub summaries: Vec<PredictiveSummary>,
}

/// Draws one composition per posterior draw and observation from
/// Dirichlet(μ φ) evaluated at that draw.
pub fn predict<R: Rng + ?Sized>(
    spec: &ModelSpec,
    posterior: &PosteriorDraws,
    new_x: &[Vec<f64>],
    new_z: &[Vec<f64>],
    groups: &[usize],
    rng: &mut R,
) -> Result<Prediction, ModelError> {
    let layout = spec.layout();
    if posterior.total() == 0 {
        return Err(ModelError::InvalidData("no posterior draws".into()));
    }
    if posterior.dim() != layout.dim() {
        return Err(ModelError::Dimension {
            what: "posterior draws",
            expected: layout.dim(),
            got: posterior.dim(),
        });
    }
    let n = new_x.len();
    for (what, len) in [("precision covariate rows", new_z.len()), ("group labels", groups.len())] {
        if len != n {
            return Err(ModelError::Dimension { what, expected: n, got: len });
        }
    }
    for i in 0..n {
        if new_x[i].len() != spec.mean_covariates {
            return Err(ModelError::Dimension {
                what: "mean covariates",
                expected: spec.mean_covariates,
                got: new_x[i].len(),
            });
        }
        if new_z[i].len() != spec.precision_covariates {
            return Err(ModelError::Dimension {
                what: "precision covariates",
                expected: spec.precision_covariates,
                got: new_z[i].len(),
            });
        }
        if groups[i] >= spec.groups {
            return Err(ModelError::Group {
                observation: i,
                label: groups[i],
                groups: spec.groups,
            });
        }
    }

    let c = spec.components;
    let total = posterior.total();
    let mut draws: Vec<Vec<Composition<f64>>> = (0..n).map(|_| Vec::with_capacity(total)).collect();
    let mut mu_sum = vec![vec![0.0; c]; n];
    let mut phi_sum = vec![0.0; n];
    let mut mu = vec![0.0; c];
    for values in posterior.iter() {
        let effects = GroupEffects::from_values(&layout, values);
        for i in 0..n {
            let group = groups[i];
            for (k, m) in mu.iter_mut().enumerate() {
                *m = effects.beta(group, k).iter().zip(&new_x[i]).map(|(b, x)| b * x).sum();
            }
            let max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(ModelError::NonFinite {
                    observation: i,
                    what: "linear predictor",
                });
            }
            let mut norm = 0.0;
            for m in mu.iter_mut() {
                *m = (*m - max).exp();
                norm += *m;
            }
            mu.iter_mut().for_each(|m| *m /= norm);
            let exponent: f64 = effects.theta(group).iter().zip(&new_z[i]).map(|(t, z)| t * z).sum();
            if !(exponent.abs() <= PRECISION_EXPONENT_LIMIT) {
                return Err(ModelError::PrecisionOverflow { observation: i, exponent });
            }
            let phi = exponent.exp();
            for (s, m) in mu_sum[i].iter_mut().zip(&mu) {
                *s += m;
            }
            phi_sum[i] += phi;
            let alpha: Vec<f64> = mu.iter().map(|m| m * phi).collect();
            draws[i].push(Dirichlet::new(alpha)?.sample_one(rng)?);
        }
    }

    let expected = mu_sum
        .into_iter()
        .map(|s| Composition::closure(s).map_err(|e| ModelError::Dirichlet(e.into())))
        .collect::<Result<Vec<_>, _>>()?;
    let summaries = draws.iter().map(|d| PredictiveSummary::from_draws(d)).collect();
    Ok(Prediction {
        draws,
        expected,
        precision: phi_sum.into_iter().map(|s| s / total as f64).collect(),
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_effects_predict_uniform_mean() {
        let spec = ModelSpec::new(3, 1, 1, 1, 2).unwrap();
        let dim = spec.layout().dim();
        let names = (0..dim).map(|i| format!("p{i}")).collect();
        let posterior = PosteriorDraws::from_chains(names, vec![vec![vec![0.0; dim]; 10_000]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prediction = predict(&spec, &posterior, &[vec![1.0]], &[vec![1.0]], &[0], &mut rng).unwrap();
        // Dirichlet(1/3, 1/3, 1/3): each part has variance (2/9)/2 / 10000.
        let se = ((1.0 / 3.0) * (2.0 / 3.0) / 2.0 / 10_000.0_f64).sqrt();
        for &m in &prediction.summaries[0].mean {
            assert!((m - 1.0 / 3.0).abs() < 4.0 * se, "{m}");
        }
        for &m in prediction.expected[0].parts() {
            assert!((m - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(prediction.draws[0].len(), 10_000);
        assert!((prediction.precision[0] - 1.0).abs() < 1e-12);
        let s = &prediction.summaries[0];
        for k in 0..3 {
            assert!(s.q025[k] <= s.q05[k] && s.q05[k] <= s.q95[k] && s.q95[k] <= s.q975[k]);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = ModelSpec::new(3, 1, 1, 1, 2).unwrap();
        let dim = spec.layout().dim();
        let names = (0..dim).map(|i| format!("p{i}")).collect();
        let posterior = PosteriorDraws::from_chains(names, vec![vec![vec![0.0; dim]; 2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(matches!(
            predict(&spec, &posterior, &[vec![1.0, 2.0]], &[vec![1.0]], &[0], &mut rng),
            Err(ModelError::Dimension { .. })
        ));
        assert!(matches!(
            predict(&spec, &posterior, &[vec![1.0]], &[vec![1.0]], &[3], &mut rng),
            Err(ModelError::Group { .. })
        ));
    }
}
