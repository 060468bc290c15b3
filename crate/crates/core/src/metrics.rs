//! Fit and prediction diagnostics: Aitchison distance, Kullback–Leibler
//! divergence, predictive coverage, root mean squared error, DIC and WAIC.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dirichlet::Composition;
use crate::model::{pointwise_log_likelihood, CoDaTable, ModelError, ModelSpec, Prediction};
use crate::sampler::PosteriorDraws;
use crate::scalar::Real;

/// Minimum posterior or predictive draws required by the interval and
/// information criteria.
pub const MIN_DRAWS: usize = 100;

/// Fraction of post-warmup divergences above which a fit is flagged.
pub const SUSPECT_DIVERGENCE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("compositions have {0} and {1} parts")]
    Dimension(usize, usize),
    #[error("vectors have lengths {0} and {1}")]
    Length(usize, usize),
    #[error("part {index} is not strictly positive")]
    ZeroPart { index: usize },
    #[error("empty input")]
    Empty,
    #[error("observation {observation} has {got} draws, at least {needed} needed")]
    TooFewDraws { observation: usize, needed: usize, got: usize },
    #[error("deviance at the posterior mean is not finite")]
    NonFiniteDeviance,
    #[error("observation {observation}: predictive density underflows in every draw")]
    Underflow { observation: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_pair<T: Real>(a: &Composition<T>, b: &Composition<T>) -> Result<(), MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::Dimension(a.dim(), b.dim()));
    }
    for (index, (&x, &y)) in a.parts().iter().zip(b.parts()).enumerate() {
        if !(x > T::zero() && y > T::zero()) {
            return Err(MetricError::ZeroPart { index });
        }
    }
    Ok(())
}

/// Centred log-ratio transform.
pub fn clr<T: Real>(y: &Composition<T>) -> Vec<T> {
    let logs: Vec<T> = y.parts().iter().map(|p| p.ln()).collect();
    let centre = logs.iter().copied().sum::<T>() / T::from_count(logs.len());
    logs.into_iter().map(|l| l - centre).collect()
}

/// Δ(y1, y2) = √Σ_c (ln r_c − mean ln r)², r_c = y1_c / y2_c.
pub fn aitchison_distance<T: Real>(y1: &Composition<T>, y2: &Composition<T>) -> Result<T, MetricError> {
    check_pair(y1, y2)?;
    let log_ratio: Vec<T> = y1.parts().iter().zip(y2.parts()).map(|(&a, &b)| (a / b).ln()).collect();
    let centre = log_ratio.iter().copied().sum::<T>() / T::from_count(log_ratio.len());
    Ok(log_ratio.iter().map(|&r| (r - centre) * (r - centre)).sum::<T>().sqrt())
}

/// KL(y1 ‖ y2) = Σ_c y1_c ln(y1_c / y2_c).
pub fn kl_divergence<T: Real>(y1: &Composition<T>, y2: &Composition<T>) -> Result<T, MetricError> {
    check_pair(y1, y2)?;
    let kl = y1.parts().iter().zip(y2.parts()).map(|(&a, &b)| a * (a / b).ln()).sum::<T>();
    Ok(kl.max(T::zero()))
}

/// Sample quantile by linear interpolation between order statistics
/// (Hyndman–Fan type 7). `values` need not be sorted.
pub fn quantile<T: Real>(values: &[T], p: f64) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_sorted(&sorted, p)
}

pub fn quantile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    if n == 0 {
        return T::nan();
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + T::lit(h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Whether `value` lies in the closed central interval of `draws` with the
/// given coverage.
pub fn in_central_interval<T: Real>(value: T, draws: &[T], level: f64) -> bool {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let tail = 0.5 * (1.0 - level);
    quantile_sorted(&sorted, tail) <= value && value <= quantile_sorted(&sorted, 1.0 - tail)
}

/// Componentwise coverage of observed compositions by predictive intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    /// Mean over components.
    pub mean: f64,
    pub by_component: Vec<f64>,
}

/// Fraction of observations inside the componentwise central predictive
/// interval of width `level`, per component and averaged over components.
pub fn coverage<T: Real>(
    observed: &[Composition<T>],
    predictive: &[Vec<Composition<T>>],
    level: f64,
) -> Result<Coverage, MetricError> {
    if observed.is_empty() {
        return Err(MetricError::Empty);
    }
    if observed.len() != predictive.len() {
        return Err(MetricError::Length(observed.len(), predictive.len()));
    }
    let c = observed[0].dim();
    let mut hits = vec![0usize; c];
    for (i, (y, draws)) in observed.iter().zip(predictive).enumerate() {
        if draws.len() < MIN_DRAWS {
            return Err(MetricError::TooFewDraws {
                observation: i,
                needed: MIN_DRAWS,
                got: draws.len(),
            });
        }
        if y.dim() != c {
            return Err(MetricError::Dimension(c, y.dim()));
        }
        for (k, hit) in hits.iter_mut().enumerate() {
            let column: Vec<T> = draws.iter().map(|d| d.parts()[k]).collect();
            if in_central_interval(y.parts()[k], &column, level) {
                *hit += 1;
            }
        }
    }
    let n = observed.len() as f64;
    let by_component: Vec<f64> = hits.iter().map(|&h| h as f64 / n).collect();
    Ok(Coverage {
        mean: by_component.iter().sum::<f64>() / c as f64,
        by_component,
    })
}

pub fn coverage_95<T: Real>(observed: &[Composition<T>], predictive: &[Vec<Composition<T>>]) -> Result<Coverage, MetricError> {
    coverage(observed, predictive, 0.95)
}

/// 100 · √(mean squared error).
pub fn rmse_percent<T: Real>(estimated: &[T], truth: &[T]) -> Result<T, MetricError> {
    if estimated.len() != truth.len() {
        return Err(MetricError::Length(estimated.len(), truth.len()));
    }
    if estimated.is_empty() {
        return Err(MetricError::Empty);
    }
    let mse = estimated.iter().zip(truth).map(|(&e, &t)| (e - t) * (e - t)).sum::<T>() / T::from_count(truth.len());
    Ok(T::lit(100.0) * mse.sqrt())
}

fn check_draws(draws: &PosteriorDraws) -> Result<(), MetricError> {
    if draws.total() < MIN_DRAWS {
        return Err(MetricError::TooFewDraws {
            observation: 0,
            needed: MIN_DRAWS,
            got: draws.total(),
        });
    }
    Ok(())
}

/// log p(y_i | θ^(j)) for every draw j (rows) and observation i (columns).
pub fn log_likelihood_matrix(draws: &PosteriorDraws, data: &CoDaTable, spec: &ModelSpec) -> Result<Vec<Vec<f64>>, MetricError> {
    let draws: Vec<&[f64]> = draws.iter().collect();
    draws
        .par_iter()
        .map(|values| pointwise_log_likelihood(spec, values, data).map_err(MetricError::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
}

/// DIC = D(Θ̄) + 2 p_D with D = −2 log-likelihood and Θ̄ the posterior mean in
/// the sampler's unconstrained coordinates.
pub fn dic(draws: &PosteriorDraws, data: &CoDaTable, spec: &ModelSpec) -> Result<Dic, MetricError> {
    dic_with(draws, |values| Ok(pointwise_log_likelihood(spec, values, data)?))
}

/// DIC for any model given its pointwise log-likelihood at a parameter point.
pub fn dic_with<F>(draws: &PosteriorDraws, log_likelihood: F) -> Result<Dic, MetricError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, MetricError> + Sync,
{
    check_draws(draws)?;
    let points: Vec<&[f64]> = draws.iter().collect();
    let deviances: Vec<f64> = points
        .par_iter()
        .map(|values| Ok(-2.0 * log_likelihood(values)?.iter().sum::<f64>()))
        .collect::<Result<_, MetricError>>()?;
    let mean_deviance = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let deviance_at_mean = -2.0
        * log_likelihood(&draws.mean())
            .map_err(|_| MetricError::NonFiniteDeviance)?
            .iter()
            .sum::<f64>();
    if !deviance_at_mean.is_finite() {
        return Err(MetricError::NonFiniteDeviance);
    }
    let p_d = mean_deviance - deviance_at_mean;
    Ok(Dic {
        dic: deviance_at_mean + 2.0 * p_d,
        p_d,
        mean_deviance,
        deviance_at_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Waic {
    /// −2 · elppd.
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
    pub elppd: f64,
}

/// WAIC from a draws × observations matrix of pointwise log-likelihoods.
pub fn waic_from_matrix(matrix: &[Vec<f64>]) -> Result<Waic, MetricError> {
    let draws = matrix.len();
    if draws < MIN_DRAWS {
        return Err(MetricError::TooFewDraws {
            observation: 0,
            needed: MIN_DRAWS,
            got: draws,
        });
    }
    let n = matrix[0].len();
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut column = vec![0.0; draws];
    for i in 0..n {
        for (c, row) in column.iter_mut().zip(matrix) {
            *c = row[i];
        }
        let log_mean = crate::special::log_sum_exp(&column) - (draws as f64).ln();
        if !log_mean.is_finite() {
            return Err(MetricError::Underflow { observation: i });
        }
        lppd += log_mean;
        // Shifted by the first draw so identical draws give exactly zero.
        let shift = column[0];
        let sum: f64 = column.iter().map(|v| v - shift).sum();
        let sum_sq: f64 = column.iter().map(|v| (v - shift).powi(2)).sum();
        p_waic += ((sum_sq - sum * sum / draws as f64) / (draws as f64 - 1.0)).max(0.0);
    }
    let elppd = lppd - p_waic;
    Ok(Waic {
        waic: -2.0 * elppd,
        p_waic,
        lppd,
        elppd,
    })
}

pub fn waic(draws: &PosteriorDraws, data: &CoDaTable, spec: &ModelSpec) -> Result<Waic, MetricError> {
    check_draws(draws)?;
    waic_from_matrix(&log_likelihood_matrix(draws, data, spec)?)
}

/// Every diagnostic of a fitted model in one place.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    /// Mean Aitchison distance between observed and fitted compositions.
    pub aitchison_mean: f64,
    /// Mean KL(observed ‖ fitted).
    pub kl_mean: f64,
    pub coverage_95: f64,
    pub coverage_by_component: Vec<f64>,
    /// Parameter recovery error, when true values are known.
    pub rmse_percent: Option<f64>,
    /// 100 · RMSE between observed and fitted parts, per component.
    pub rmse_by_component: Vec<f64>,
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
    pub elppd: f64,
    pub divergences: usize,
    pub divergence_rate: f64,
    /// Set when more than 1 % of post-warmup transitions diverged.
    pub suspect: bool,
}

impl FitReport {
    /// Builds the report from the observed table, its posterior draws and a
    /// posterior predictive for the same rows.
    pub fn new(
        spec: &ModelSpec,
        data: &CoDaTable,
        draws: &PosteriorDraws,
        prediction: &Prediction,
    ) -> Result<Self, MetricError> {
        let observed = data.compositions();
        if observed.len() != prediction.expected.len() {
            return Err(MetricError::Length(observed.len(), prediction.expected.len()));
        }
        let n = observed.len() as f64;
        let mut aitchison = 0.0;
        let mut kl = 0.0;
        let c = spec.components;
        let mut squared = vec![0.0; c];
        for (y, fitted) in observed.iter().zip(&prediction.expected) {
            aitchison += aitchison_distance(y, fitted)?;
            kl += kl_divergence(y, fitted)?;
            for (s, (a, b)) in squared.iter_mut().zip(y.parts().iter().zip(fitted.parts())) {
                *s += (a - b) * (a - b);
            }
        }
        let cover = coverage_95(observed, &prediction.draws)?;
        let matrix = log_likelihood_matrix(draws, data, spec)?;
        let w = waic_from_matrix(&matrix)?;
        let d = dic(draws, data, spec)?;
        let divergence_rate = draws.divergence_rate();
        Ok(Self {
            aitchison_mean: aitchison / n,
            kl_mean: kl / n,
            coverage_95: cover.mean,
            coverage_by_component: cover.by_component,
            rmse_percent: None,
            rmse_by_component: squared.iter().map(|s| 100.0 * (s / n).sqrt()).collect(),
            dic: d.dic,
            p_d: d.p_d,
            waic: w.waic,
            p_waic: w.p_waic,
            lppd: w.lppd,
            elppd: w.elppd,
            divergences: draws.divergences(),
            divergence_rate,
            suspect: divergence_rate > SUSPECT_DIVERGENCE_RATE,
        })
    }

    /// Records the parameter recovery error against known true values.
    pub fn with_parameter_error(mut self, estimated: &[f64], truth: &[f64]) -> Result<Self, MetricError> {
        self.rmse_percent = Some(rmse_percent(estimated, truth)?);
        Ok(self)
    }
}
