use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::dirichlet::Composition;
use crate::sampler::{LogDensity, TargetError};
use crate::special;

use super::params::{GroupEffects, ParameterLayout, ParameterNames, ParameterVector};
use super::{CoDaTable, ModelError, ModelSpec, LINEAR_PREDICTOR_WARNING, PRECISION_EXPONENT_LIMIT};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Strategy used to evaluate the log-posterior gradient.
///
/// Both paths compute identical quantities. `PerObservation` rebuilds the
/// group coefficients inside the observation loop and back-propagates into
/// the shared and raw parameters observation by observation.
/// `Vectorized` rebuilds each group's coefficients once, accumulates
/// gradients against the group-level effects in flat buffers and applies the
/// hierarchical chain rule once per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientPath {
    PerObservation,
    #[default]
    Vectorized,
}

/// Log-likelihood of one observation from its linear predictors.
///
/// On return `eta` holds μ. When `d_eta` is given it receives ∂ℓ/∂η_c and
/// the second tuple entry is ∂ℓ/∂ln φ.
#[inline]
fn observation_terms(
    observation: usize,
    log_y: &[f64],
    eta: &mut [f64],
    log_phi: f64,
    d_eta: Option<&mut [f64]>,
) -> Result<(f64, f64), ModelError> {
    if log_phi.abs() > PRECISION_EXPONENT_LIMIT || !log_phi.is_finite() {
        return Err(ModelError::PrecisionOverflow {
            observation,
            exponent: log_phi,
        });
    }
    let wrap = |source| ModelError::Special { observation, source };
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(ModelError::NonFinite {
            observation,
            what: "linear predictor",
        });
    }
    let mut total = 0.0;
    for e in eta.iter_mut() {
        *e = (*e - max).exp();
        total += *e;
    }
    let phi = log_phi.exp();
    let mut ll = special::log_gamma(phi).map_err(wrap)?;
    match d_eta {
        None => {
            for (mu, &ly) in eta.iter_mut().zip(log_y) {
                *mu /= total;
                let alpha = *mu * phi;
                ll += (alpha - 1.0) * ly - special::log_gamma(alpha).map_err(wrap)?;
            }
            Ok((ll, 0.0))
        }
        Some(d_eta) => {
            let mut mean_g = 0.0;
            for ((mu, &ly), g) in eta.iter_mut().zip(log_y).zip(d_eta.iter_mut()) {
                *mu /= total;
                let alpha = *mu * phi;
                ll += (alpha - 1.0) * ly - special::log_gamma(alpha).map_err(wrap)?;
                *g = ly - special::digamma(alpha).map_err(wrap)?;
                mean_g += *mu * *g;
            }
            for (g, &mu) in d_eta.iter_mut().zip(eta.iter()) {
                *g = phi * mu * (*g - mean_g);
            }
            let d_log_phi = phi * (special::digamma(phi).map_err(wrap)? + mean_g);
            Ok((ll, d_log_phi))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_params(layout: &ParameterLayout, values: &[f64]) -> Result<(), ModelError> {
    if values.len() != layout.dim() {
        return Err(ModelError::Dimension {
            what: "parameter vector",
            expected: layout.dim(),
            got: values.len(),
        });
    }
    Ok(())
}

fn check_group(layout: &ParameterLayout, group: usize) -> Result<(), ModelError> {
    if group >= layout.groups {
        return Err(ModelError::Group {
            observation: 0,
            label: group,
            groups: layout.groups,
        });
    }
    Ok(())
}

/// Linear predictors `η_c = x′β_cl` for every component (reference at 0).
fn linear_predictors(effects: &GroupEffects, components: usize, x_row: &[f64], group: usize, eta: &mut [f64]) {
    for (c, e) in eta.iter_mut().enumerate().take(components) {
        *e = dot(x_row, effects.beta(group, c));
    }
}

/// Mean composition μ for one covariate row of dataset `group`.
///
/// Errors name observation 0; table-level functions report real indices.
pub fn mean_link(
    spec: &ModelSpec,
    params: &ParameterVector,
    x_row: &[f64],
    group: usize,
) -> Result<Composition<f64>, ModelError> {
    let layout = spec.layout();
    check_params(&layout, params.as_slice())?;
    check_group(&layout, group)?;
    if x_row.len() != spec.mean_covariates {
        return Err(ModelError::Dimension {
            what: "mean covariates",
            expected: spec.mean_covariates,
            got: x_row.len(),
        });
    }
    let effects = GroupEffects::from_values(&layout, params.as_slice());
    let mut eta = vec![0.0; spec.components];
    linear_predictors(&effects, spec.components, x_row, group, &mut eta);
    if let Some(big) = eta.iter().find(|e| e.abs() > LINEAR_PREDICTOR_WARNING) {
        log::warn!("linear predictor {big} exceeds ±{LINEAR_PREDICTOR_WARNING}");
    }
    softmax(&mut eta)?;
    Ok(Composition::new(eta).map_err(crate::dirichlet::DirichletError::from)?)
}

fn softmax(eta: &mut [f64]) -> Result<(), ModelError> {
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(ModelError::NonFinite {
            observation: 0,
            what: "linear predictor",
        });
    }
    let mut total = 0.0;
    for e in eta.iter_mut() {
        *e = (*e - max).exp();
        total += *e;
    }
    for e in eta.iter_mut() {
        *e /= total;
    }
    Ok(())
}

/// Precision φ = exp(z′θ_l) for one covariate row of dataset `group`.
pub fn precision_link(spec: &ModelSpec, params: &ParameterVector, z_row: &[f64], group: usize) -> Result<f64, ModelError> {
    let layout = spec.layout();
    check_params(&layout, params.as_slice())?;
    check_group(&layout, group)?;
    if z_row.len() != spec.precision_covariates {
        return Err(ModelError::Dimension {
            what: "precision covariates",
            expected: spec.precision_covariates,
            got: z_row.len(),
        });
    }
    let effects = GroupEffects::from_values(&layout, params.as_slice());
    let exponent = dot(z_row, effects.theta(group));
    if !(exponent.abs() <= PRECISION_EXPONENT_LIMIT) {
        return Err(ModelError::PrecisionOverflow {
            observation: 0,
            exponent,
        });
    }
    Ok(exponent.exp())
}

/// Per-observation log-likelihood contributions.
pub fn pointwise_log_likelihood(spec: &ModelSpec, params: &[f64], data: &CoDaTable) -> Result<Vec<f64>, ModelError> {
    let layout = spec.layout();
    check_params(&layout, params)?;
    spec.check_table(data)?;
    let effects = GroupEffects::from_values(&layout, params);
    let mut eta = vec![0.0; spec.components];
    (0..data.len())
        .map(|i| {
            let group = data.group(i);
            linear_predictors(&effects, spec.components, data.x(i), group, &mut eta);
            let log_phi = dot(data.z(i), effects.theta(group));
            let (ll, _) = observation_terms(i, data.log_y(i), &mut eta, log_phi, None)?;
            if !ll.is_finite() {
                return Err(ModelError::NonFinite {
                    observation: i,
                    what: "log-likelihood",
                });
            }
            Ok(ll)
        })
        .collect()
}

/// Σ_i ln Dir(y_i | μ_i φ_i).
pub fn log_likelihood(spec: &ModelSpec, params: &ParameterVector, data: &CoDaTable) -> Result<f64, ModelError> {
    Ok(pointwise_log_likelihood(spec, params.as_slice(), data)?.iter().sum())
}

fn normal_log_density(x: f64, scale: f64) -> f64 {
    -HALF_LN_TWO_PI - scale.ln() - 0.5 * (x / scale).powi(2)
}

/// Half-Cauchy(0, h) density of σ = e^u, including the Jacobian e^u.
fn log_half_cauchy_on_log_scale(u: f64, scale: f64) -> f64 {
    LN_2 - PI.ln() - scale.ln() - (1.0 + (u.exp() / scale).powi(2)).ln() + u
}

fn log_prior_values(layout: &ParameterLayout, spec: &ModelSpec, values: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let priors = spec.priors;
    let mut lp = 0.0;
    for &v in &values[layout.beta_global.clone()] {
        lp += normal_log_density(v, priors.beta);
    }
    for &v in &values[layout.theta_global.clone()] {
        lp += normal_log_density(v, priors.theta);
    }
    for &v in values[layout.beta_raw.clone()].iter().chain(&values[layout.theta_raw.clone()]) {
        lp += normal_log_density(v, 1.0);
    }
    for &u in values[layout.log_sigma_beta.clone()]
        .iter()
        .chain(&values[layout.log_sigma_theta.clone()])
    {
        lp += log_half_cauchy_on_log_scale(u, priors.hyper);
    }
    if let Some(grad) = grad {
        let h2 = priors.hyper * priors.hyper;
        for i in layout.beta_global.clone() {
            grad[i] -= values[i] / (priors.beta * priors.beta);
        }
        for i in layout.theta_global.clone() {
            grad[i] -= values[i] / (priors.theta * priors.theta);
        }
        for i in layout.beta_raw.clone().chain(layout.theta_raw.clone()) {
            grad[i] -= values[i];
        }
        for i in layout.log_sigma_beta.clone().chain(layout.log_sigma_theta.clone()) {
            let s2 = (2.0 * values[i]).exp();
            grad[i] += 1.0 - 2.0 * s2 / (h2 + s2);
        }
    }
    lp
}

/// Sum of the log prior densities, with the log-σ Jacobians.
pub fn log_prior(spec: &ModelSpec, params: &ParameterVector) -> Result<f64, ModelError> {
    let layout = spec.layout();
    check_params(&layout, params.as_slice())?;
    Ok(log_prior_values(&layout, spec, params.as_slice(), None))
}

pub fn log_posterior(spec: &ModelSpec, params: &ParameterVector, data: &CoDaTable) -> Result<f64, ModelError> {
    Ok(log_likelihood(spec, params, data)? + log_prior(spec, params)?)
}

/// Analytic gradient of [`log_posterior`] in the unconstrained coordinates.
pub fn gradient(spec: &ModelSpec, params: &ParameterVector, data: &CoDaTable) -> Result<Vec<f64>, ModelError> {
    let mut grad = vec![0.0; params.as_slice().len()];
    log_posterior_and_gradient(spec, params.as_slice(), data, GradientPath::default(), &mut grad)?;
    Ok(grad)
}

/// Log-posterior and its gradient in one pass.
pub fn log_posterior_and_gradient(
    spec: &ModelSpec,
    values: &[f64],
    data: &CoDaTable,
    path: GradientPath,
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    let layout = spec.layout();
    check_params(&layout, values)?;
    spec.check_table(data)?;
    if grad.len() != values.len() {
        return Err(ModelError::Dimension {
            what: "gradient buffer",
            expected: values.len(),
            got: grad.len(),
        });
    }
    grad.fill(0.0);
    let ll = match path {
        GradientPath::PerObservation => likelihood_per_observation(&layout, values, data, grad)?,
        GradientPath::Vectorized => likelihood_vectorized(&layout, values, data, grad)?,
    };
    let lp = ll + log_prior_values(&layout, spec, values, Some(grad));
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        let names = layout.names(&ParameterNames::generic(spec));
        return Err(ModelError::NonFiniteGradient {
            parameter: names[i].clone(),
        });
    }
    if !lp.is_finite() {
        return Err(ModelError::NonFinite {
            observation: 0,
            what: "log-posterior",
        });
    }
    Ok(lp)
}

fn likelihood_per_observation(
    layout: &ParameterLayout,
    values: &[f64],
    data: &CoDaTable,
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    let (c, p, q) = (layout.components, layout.mean_covariates, layout.precision_covariates);
    let mut ll = 0.0;
    for i in 0..data.len() {
        let group = data.group(i);
        let x = data.x(i);
        let z = data.z(i);

        let mut beta = vec![vec![0.0; p]; c];
        for slot in 0..c - 1 {
            let comp = layout.component_of(slot);
            for k in 0..p {
                let sigma = values[layout.sigma_beta_index(slot * p + k)].exp();
                beta[comp][k] = values[layout.beta_global_index(slot, k)] + sigma * values[layout.beta_raw_index(group, slot, k)];
            }
        }
        let mut theta = vec![0.0; q];
        for (k, t) in theta.iter_mut().enumerate() {
            let sigma = values[layout.sigma_theta_index(k)].exp();
            *t = values[layout.theta_global_index(k)] + sigma * values[layout.theta_raw_index(group, k)];
        }

        let mut eta: Vec<f64> = beta.iter().map(|b| dot(x, b)).collect();
        let mut d_eta = vec![0.0; c];
        let (term, d_log_phi) = observation_terms(i, data.log_y(i), &mut eta, dot(z, &theta), Some(&mut d_eta))?;
        ll += term;

        for slot in 0..c - 1 {
            let comp = layout.component_of(slot);
            for k in 0..p {
                let g = d_eta[comp] * x[k];
                let sigma_index = layout.sigma_beta_index(slot * p + k);
                let raw_index = layout.beta_raw_index(group, slot, k);
                let sigma = values[sigma_index].exp();
                grad[layout.beta_global_index(slot, k)] += g;
                grad[raw_index] += sigma * g;
                grad[sigma_index] += sigma * values[raw_index] * g;
            }
        }
        for k in 0..q {
            let g = d_log_phi * z[k];
            let sigma_index = layout.sigma_theta_index(k);
            let raw_index = layout.theta_raw_index(group, k);
            let sigma = values[sigma_index].exp();
            grad[layout.theta_global_index(k)] += g;
            grad[raw_index] += sigma * g;
            grad[sigma_index] += sigma * values[raw_index] * g;
        }
    }
    Ok(ll)
}

fn likelihood_vectorized(layout: &ParameterLayout, values: &[f64], data: &CoDaTable, grad: &mut [f64]) -> Result<f64, ModelError> {
    let (c, p, q, groups) = (
        layout.components,
        layout.mean_covariates,
        layout.precision_covariates,
        layout.groups,
    );
    let effects = GroupEffects::from_values(layout, values);
    let mut grad_beta = vec![0.0; groups * c * p];
    let mut grad_theta = vec![0.0; groups * q];
    let mut eta = vec![0.0; c];
    let mut d_eta = vec![0.0; c];
    let mut ll = 0.0;

    for i in 0..data.len() {
        let group = data.group(i);
        let x = data.x(i);
        let z = data.z(i);
        linear_predictors(&effects, c, x, group, &mut eta);
        let log_phi = dot(z, effects.theta(group));
        let (term, d_log_phi) = observation_terms(i, data.log_y(i), &mut eta, log_phi, Some(&mut d_eta))?;
        ll += term;
        let gb = &mut grad_beta[group * c * p..(group + 1) * c * p];
        for (comp, &de) in d_eta.iter().enumerate() {
            for (g, &xk) in gb[comp * p..(comp + 1) * p].iter_mut().zip(x) {
                *g += de * xk;
            }
        }
        for (g, &zk) in grad_theta[group * q..(group + 1) * q].iter_mut().zip(z) {
            *g += d_log_phi * zk;
        }
    }

    for l in 0..groups {
        for slot in 0..c - 1 {
            let comp = layout.component_of(slot);
            for k in 0..p {
                let g = grad_beta[(l * c + comp) * p + k];
                let sigma_index = layout.sigma_beta_index(slot * p + k);
                let raw_index = layout.beta_raw_index(l, slot, k);
                let sigma = values[sigma_index].exp();
                grad[layout.beta_global_index(slot, k)] += g;
                grad[raw_index] += sigma * g;
                grad[sigma_index] += sigma * values[raw_index] * g;
            }
        }
        for k in 0..q {
            let g = grad_theta[l * q + k];
            let sigma_index = layout.sigma_theta_index(k);
            let raw_index = layout.theta_raw_index(l, k);
            let sigma = values[sigma_index].exp();
            grad[layout.theta_global_index(k)] += g;
            grad[raw_index] += sigma * g;
            grad[sigma_index] += sigma * values[raw_index] * g;
        }
    }
    Ok(ll)
}

/// The posterior of a [`ModelSpec`] on a [`CoDaTable`], as a sampler target.
#[derive(Debug, Clone)]
pub struct DirichletRegression<'a> {
    spec: &'a ModelSpec,
    data: &'a CoDaTable,
    path: GradientPath,
    dim: usize,
}

impl<'a> DirichletRegression<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a CoDaTable, path: GradientPath) -> Result<Self, ModelError> {
        spec.validate()?;
        spec.check_table(data)?;
        Ok(Self {
            spec,
            data,
            path,
            dim: spec.layout().dim(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn data(&self) -> &CoDaTable {
        self.data
    }
}

impl LogDensity for DirichletRegression<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> Result<f64, TargetError> {
        log_posterior_and_gradient(self.spec, position, self.data, self.path, gradient).map_err(|e| TargetError(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::Dirichlet;

    fn single_observation_table(parts: &[f64]) -> CoDaTable {
        CoDaTable::new(
            vec![Composition::new(parts.to_vec()).unwrap()],
            vec![vec![1.0]],
            vec![vec![1.0]],
            vec![0],
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficients_give_uniform_mean_and_unit_precision() {
        let spec = ModelSpec::new(4, 1, 1, 1, 3).unwrap();
        let params = ParameterVector::zeros(&spec.layout());
        let mu = mean_link(&spec, &params, &[1.0], 0).unwrap();
        for &m in mu.parts() {
            assert!((m - 0.25).abs() < 1e-15);
        }
        assert_eq!(precision_link(&spec, &params, &[1.0], 0).unwrap(), 1.0);
    }

    #[test]
    fn mean_link_matches_closed_form() {
        let spec = ModelSpec::new(3, 1, 1, 1, 2).unwrap();
        let layout = spec.layout();
        let mut params = ParameterVector::zeros(&layout);
        params.as_mut_slice()[layout.beta_global_index(0, 0)] = 2.0;
        params.as_mut_slice()[layout.beta_global_index(1, 0)] = 3.0;
        let mu = mean_link(&spec, &params, &[1.0], 0).unwrap();
        let e2 = 2.0_f64.exp();
        let e3 = 3.0_f64.exp();
        let total = e2 + e3 + 1.0;
        let expected = [e2 / total, e3 / total, 1.0 / total];
        for (m, e) in mu.parts().iter().zip(expected) {
            assert!((m - e).abs() < 1e-14);
        }
        assert!((mu.parts()[0] - 0.25949).abs() < 1e-5);
        // 1 / (e² + e³ + 1) = 0.035119; printed elsewhere rounded as 0.03513.
        assert!((mu.parts()[2] - 0.03513).abs() < 2e-5);
    }

    #[test]
    fn precision_link_examples() {
        let spec = ModelSpec::new(3, 1, 1, 2, 2).unwrap();
        let layout = spec.layout();
        let mut params = ParameterVector::zeros(&layout);
        params.as_mut_slice()[layout.theta_global_index(0)] = 13.0_f64.ln();
        // σ_θ = e⁰ = 1 multiplies the standardized deviation directly.
        let phi = precision_link(&spec, &params, &[1.0], 0).unwrap();
        assert!((phi - 13.0).abs() < 1e-12);

        params.as_mut_slice()[layout.theta_global_index(0)] = 5.0_f64.ln();
        params.as_mut_slice()[layout.theta_raw_index(1, 0)] = 0.003;
        let phi = precision_link(&spec, &params, &[1.0], 1).unwrap();
        assert!((phi - (5.0_f64.ln() + 0.003).exp()).abs() < 1e-12);

        params.as_mut_slice()[layout.theta_global_index(0)] = 800.0;
        assert!(matches!(
            precision_link(&spec, &params, &[1.0], 0),
            Err(ModelError::PrecisionOverflow { .. })
        ));
    }

    #[test]
    fn single_observation_log_likelihood() {
        let spec = ModelSpec::new(2, 1, 1, 1, 1).unwrap();
        let data = single_observation_table(&[0.5, 0.5]);
        let params = ParameterVector::zeros(&spec.layout());
        let ll = log_likelihood(&spec, &params, &data).unwrap();
        assert!((ll - (2.0_f64.ln() - PI.ln())).abs() < 1e-12);
        let direct = Dirichlet::new(vec![0.5, 0.5]).unwrap().log_density(data.y(0)).unwrap();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn precision_overflow_names_observation() {
        let spec = ModelSpec::new(2, 1, 1, 1, 1).unwrap();
        let layout = spec.layout();
        let data = single_observation_table(&[0.4, 0.6]);
        let data = data.concat(&data).unwrap();
        let mut params = ParameterVector::zeros(&layout);
        params.as_mut_slice()[layout.theta_global_index(0)] = 701.0;
        match log_likelihood(&spec, &params, &data) {
            Err(ModelError::PrecisionOverflow { observation: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_dispersion_shares_effects() {
        let spec = ModelSpec::new(3, 2, 1, 3, 0).unwrap();
        let layout = spec.layout();
        let mut values: Vec<f64> = (0..layout.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        values[layout.log_sigma_beta.start] = f64::NEG_INFINITY;
        values[layout.log_sigma_theta.start] = f64::NEG_INFINITY;
        let effects = GroupEffects::from_values(&layout, &values);
        for l in 1..3 {
            for c in 0..3 {
                assert_eq!(effects.beta(l, c), effects.beta(0, c));
            }
            assert_eq!(effects.theta(l), effects.theta(0));
        }
        assert!(effects.beta(1, 0).iter().all(|&b| b == 0.0));
    }
}
