use std::ops::Range;

use super::{Dispersion, ModelError, ModelSpec};

/// Position of every block inside the flat unconstrained parameter vector.
///
/// Block order: shared β (non-reference components × P), standardized group
/// deviations of β (L × (C−1) × P), shared θ (Q), standardized group
/// deviations of θ (L × Q), log σ_β, log σ_θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub components: usize,
    pub mean_covariates: usize,
    pub precision_covariates: usize,
    pub groups: usize,
    pub reference: usize,
    pub dispersion: Dispersion,
    pub beta_global: Range<usize>,
    pub beta_raw: Range<usize>,
    pub theta_global: Range<usize>,
    pub theta_raw: Range<usize>,
    pub log_sigma_beta: Range<usize>,
    pub log_sigma_theta: Range<usize>,
}

fn block(start: &mut usize, len: usize) -> Range<usize> {
    let range = *start..*start + len;
    *start += len;
    range
}

impl ParameterLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        let coefficients = (spec.components - 1) * spec.mean_covariates;
        let q = spec.precision_covariates;
        let (sigma_beta_len, sigma_theta_len) = match spec.dispersion {
            Dispersion::Shared => (1, 1),
            Dispersion::PerCoefficient => (coefficients, q),
        };
        let mut next = 0;
        Self {
            components: spec.components,
            mean_covariates: spec.mean_covariates,
            precision_covariates: q,
            groups: spec.groups,
            reference: spec.reference,
            dispersion: spec.dispersion,
            beta_global: block(&mut next, coefficients),
            beta_raw: block(&mut next, spec.groups * coefficients),
            theta_global: block(&mut next, q),
            theta_raw: block(&mut next, spec.groups * q),
            log_sigma_beta: block(&mut next, sigma_beta_len),
            log_sigma_theta: block(&mut next, sigma_theta_len),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_sigma_theta.end
    }

    /// Number of stored mean coefficients per group, (C−1)·P.
    pub fn coefficients(&self) -> usize {
        (self.components - 1) * self.mean_covariates
    }

    /// Component index of the `slot`-th stored (non-reference) component.
    pub fn component_of(&self, slot: usize) -> usize {
        if slot < self.reference {
            slot
        } else {
            slot + 1
        }
    }

    /// Storage slot of component `c`, `None` for the reference.
    pub fn slot_of(&self, component: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match component.cmp(&self.reference) {
            Less => Some(component),
            Equal => None,
            Greater => Some(component - 1),
        }
    }

    pub fn beta_global_index(&self, slot: usize, covariate: usize) -> usize {
        self.beta_global.start + slot * self.mean_covariates + covariate
    }

    pub fn beta_raw_index(&self, group: usize, slot: usize, covariate: usize) -> usize {
        self.beta_raw.start + group * self.coefficients() + slot * self.mean_covariates + covariate
    }

    pub fn theta_global_index(&self, covariate: usize) -> usize {
        self.theta_global.start + covariate
    }

    pub fn theta_raw_index(&self, group: usize, covariate: usize) -> usize {
        self.theta_raw.start + group * self.precision_covariates + covariate
    }

    /// Index of the log-dispersion scaling flat β coefficient `j = slot·P + p`.
    pub fn sigma_beta_index(&self, coefficient: usize) -> usize {
        match self.dispersion {
            Dispersion::Shared => self.log_sigma_beta.start,
            Dispersion::PerCoefficient => self.log_sigma_beta.start + coefficient,
        }
    }

    pub fn sigma_theta_index(&self, covariate: usize) -> usize {
        match self.dispersion {
            Dispersion::Shared => self.log_sigma_theta.start,
            Dispersion::PerCoefficient => self.log_sigma_theta.start + covariate,
        }
    }

    /// Column labels for every entry of the flat vector.
    pub fn names(&self, labels: &ParameterNames) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        let coefficient_label = |slot: usize, p: usize| {
            format!("{}.{}", labels.components[self.component_of(slot)], labels.mean[p])
        };
        for slot in 0..self.components - 1 {
            for p in 0..self.mean_covariates {
                names.push(format!("beta.{}", coefficient_label(slot, p)));
            }
        }
        for group in &labels.groups {
            for slot in 0..self.components - 1 {
                for p in 0..self.mean_covariates {
                    names.push(format!("beta_raw.{group}.{}", coefficient_label(slot, p)));
                }
            }
        }
        for q in &labels.precision {
            names.push(format!("theta.{q}"));
        }
        for group in &labels.groups {
            for q in &labels.precision {
                names.push(format!("theta_raw.{group}.{q}"));
            }
        }
        match self.dispersion {
            Dispersion::Shared => {
                names.push("log_sigma_beta".into());
                names.push("log_sigma_theta".into());
            }
            Dispersion::PerCoefficient => {
                for slot in 0..self.components - 1 {
                    for p in 0..self.mean_covariates {
                        names.push(format!("log_sigma_beta.{}", coefficient_label(slot, p)));
                    }
                }
                for q in &labels.precision {
                    names.push(format!("log_sigma_theta.{q}"));
                }
            }
        }
        names
    }

    /// Labels of the reconstructed group-level effects, in
    /// [`GroupEffects::flatten`] order.
    pub fn effect_names(&self, labels: &ParameterNames) -> Vec<String> {
        let mut names = Vec::new();
        for group in &labels.groups {
            for slot in 0..self.components - 1 {
                for p in &labels.mean {
                    names.push(format!("beta.{group}.{}.{p}", labels.components[self.component_of(slot)]));
                }
            }
            for q in &labels.precision {
                names.push(format!("theta.{group}.{q}"));
            }
        }
        names
    }
}

/// Human-readable labels used to name parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterNames {
    pub components: Vec<String>,
    pub mean: Vec<String>,
    pub precision: Vec<String>,
    pub groups: Vec<String>,
}

impl ParameterNames {
    /// `c1.., x0.., z0.., g1..` labels, with `intercept` for the first covariate.
    pub fn generic(spec: &ModelSpec) -> Self {
        let covariates = |prefix: &str, n: usize| {
            (0..n)
                .map(|i| if i == 0 { "intercept".to_string() } else { format!("{prefix}{i}") })
                .collect()
        };
        Self {
            components: (1..=spec.components).map(|c| format!("c{c}")).collect(),
            mean: covariates("x", spec.mean_covariates),
            precision: covariates("z", spec.precision_covariates),
            groups: (1..=spec.groups).map(|g| format!("g{g}")).collect(),
        }
    }
}

/// A point in the sampler's unconstrained space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(layout: &ParameterLayout, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != layout.dim() {
            return Err(ModelError::Dimension {
                what: "parameter vector",
                expected: layout.dim(),
                got: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(layout: &ParameterLayout) -> Self {
        Self {
            values: vec![0.0; layout.dim()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Group-level effects rebuilt from the non-centred parameters.
///
/// `beta` is L × C × P with the reference rows identically zero; `theta` is
/// L × Q.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEffects {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    components: usize,
    mean_covariates: usize,
    precision_covariates: usize,
    reference: usize,
}

impl GroupEffects {
    pub fn from_values(layout: &ParameterLayout, values: &[f64]) -> Self {
        let (c, p, q) = (layout.components, layout.mean_covariates, layout.precision_covariates);
        let mut beta = vec![0.0; layout.groups * c * p];
        let mut theta = vec![0.0; layout.groups * q];
        for l in 0..layout.groups {
            for slot in 0..c - 1 {
                let comp = layout.component_of(slot);
                for k in 0..p {
                    let sigma = values[layout.sigma_beta_index(slot * p + k)].exp();
                    beta[(l * c + comp) * p + k] = values[layout.beta_global_index(slot, k)]
                        + sigma * values[layout.beta_raw_index(l, slot, k)];
                }
            }
            for k in 0..q {
                let sigma = values[layout.sigma_theta_index(k)].exp();
                theta[l * q + k] = values[layout.theta_global_index(k)] + sigma * values[layout.theta_raw_index(l, k)];
            }
        }
        Self {
            beta,
            theta,
            components: c,
            mean_covariates: p,
            precision_covariates: q,
            reference: layout.reference,
        }
    }

    /// Coefficients β_cl (length P).
    pub fn beta(&self, group: usize, component: usize) -> &[f64] {
        let start = (group * self.components + component) * self.mean_covariates;
        &self.beta[start..start + self.mean_covariates]
    }

    /// Coefficients θ_l (length Q).
    pub fn theta(&self, group: usize) -> &[f64] {
        let start = group * self.precision_covariates;
        &self.theta[start..start + self.precision_covariates]
    }

    /// Non-reference β_cl and θ_l per group, in
    /// [`ParameterLayout::effect_names`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let groups = self.theta.len() / self.precision_covariates;
        let mut out = Vec::new();
        for l in 0..groups {
            for c in (0..self.components).filter(|&c| c != self.reference) {
                out.extend_from_slice(self.beta(l, c));
            }
            out.extend_from_slice(self.theta(l));
        }
        out
    }
}
