//! Hierarchical Dirichlet regression.
//!
//! For observation `i` in dataset `l`:
//!
//! ```text
//! μ_icl = exp(x_i′β_cl) / Σ_d exp(x_i′β_dl)      β_c*l ≡ 0
//! φ_il  = exp(z_i′θ_l)
//! β_cl  = β_c + σ_β · b_cl,   b_cl ~ N(0, 1)
//! θ_l   = θ   + σ_θ · t_l,    t_l  ~ N(0, 1)
//! y_il  ~ Dirichlet(μ_il · φ_il)
//! ```
//!
//! The group deviations are non-centred. Coefficients of the reference
//! component `c*` are not part of the parameter vector at all.

mod data;
mod params;
mod posterior;
mod predict;

use thiserror::Error;

use crate::dirichlet::DirichletError;
use crate::special::SpecialError;

pub use data::CoDaTable;
pub use params::{GroupEffects, ParameterLayout, ParameterNames, ParameterVector};
pub use posterior::{
    gradient, log_likelihood, log_posterior, log_posterior_and_gradient, log_prior, mean_link, pointwise_log_likelihood,
    precision_link, DirichletRegression, GradientPath,
};
pub use predict::{predict, Prediction, PredictiveSummary};

/// Linear predictors beyond this magnitude trigger a diagnostic warning.
pub const LINEAR_PREDICTOR_WARNING: f64 = 30.0;
/// `|z′θ|` beyond this overflows the precision link.
pub const PRECISION_EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("observation {observation}: group label {label} outside 0..{groups}")]
    Group { observation: usize, label: usize, groups: usize },
    #[error("observation {observation}: precision exponent z'θ = {exponent} overflows")]
    PrecisionOverflow { observation: usize, exponent: f64 },
    #[error("observation {observation}: non-finite {what}")]
    NonFinite { observation: usize, what: &'static str },
    #[error("non-finite gradient for parameter {parameter}")]
    NonFiniteGradient { parameter: String },
    #[error("observation {observation}: {source}")]
    Special { observation: usize, source: SpecialError },
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
}

/// How the group-deviation dispersions are shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dispersion {
    /// One σ_β for every mean coefficient and one σ_θ for every precision
    /// coefficient.
    #[default]
    Shared,
    /// One σ per coefficient. Experimental.
    PerCoefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PriorScales {
    /// Normal prior scale of the shared mean coefficients β_c.
    pub beta: f64,
    /// Normal prior scale of the shared precision coefficients θ.
    pub theta: f64,
    /// Half-Cauchy scale of the dispersions σ_β and σ_θ.
    pub hyper: f64,
}

impl Default for PriorScales {
    fn default() -> Self {
        Self {
            beta: 5.0,
            theta: 5.0,
            hyper: 2.5,
        }
    }
}

/// Dimensions, reference component and priors of a model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    /// Number of components C.
    pub components: usize,
    /// Mean covariates P, intercept included.
    pub mean_covariates: usize,
    /// Precision covariates Q, intercept included.
    pub precision_covariates: usize,
    /// Number of datasets L.
    pub groups: usize,
    /// Zero-based reference component c*.
    pub reference: usize,
    pub priors: PriorScales,
    pub dispersion: Dispersion,
}

impl ModelSpec {
    pub fn new(
        components: usize,
        mean_covariates: usize,
        precision_covariates: usize,
        groups: usize,
        reference: usize,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            components,
            mean_covariates,
            precision_covariates,
            groups,
            reference,
            priors: PriorScales::default(),
            dispersion: Dispersion::Shared,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec matching the shape of `data`.
    pub fn for_table(data: &CoDaTable, reference: usize) -> Result<Self, ModelError> {
        Self::new(
            data.components(),
            data.mean_covariates(),
            data.precision_covariates(),
            data.groups(),
            reference,
        )
    }

    pub fn with_priors(mut self, priors: PriorScales) -> Result<Self, ModelError> {
        self.priors = priors;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dispersion(mut self, dispersion: Dispersion) -> Self {
        self.dispersion = dispersion;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.components < 2 {
            return Err(ModelError::InvalidSpec(format!("need at least 2 components, got {}", self.components)));
        }
        if self.mean_covariates == 0 || self.precision_covariates == 0 || self.groups == 0 {
            return Err(ModelError::InvalidSpec("P, Q and L must be at least 1".into()));
        }
        if self.reference >= self.components {
            return Err(ModelError::InvalidSpec(format!(
                "reference {} outside 0..{}",
                self.reference, self.components
            )));
        }
        for (name, value) in [
            ("prior_scale_beta", self.priors.beta),
            ("prior_scale_theta", self.priors.theta),
            ("hyper_scale", self.priors.hyper),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidSpec(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout::new(self)
    }

    /// Checks that `data` has the shape this spec describes.
    pub fn check_table(&self, data: &CoDaTable) -> Result<(), ModelError> {
        for (what, expected, got) in [
            ("components", self.components, data.components()),
            ("mean covariates", self.mean_covariates, data.mean_covariates()),
            ("precision covariates", self.precision_covariates, data.precision_covariates()),
            ("groups", self.groups, data.groups()),
        ] {
            if expected != got {
                return Err(ModelError::Dimension { what, expected, got });
            }
        }
        Ok(())
    }
}
