//! Dirichlet regression for compositional data.
//!
//! Distribution, reference-selection and metric code is generic over the
//! floating-point type through [`scalar::Real`]; concrete `f64` and `f32`
//! aliases are exported below. The regression model and sampler work in
//! `f64`.

pub mod dirichlet;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod sampler;
pub mod scalar;
pub mod sim;
pub mod special;

pub use dirichlet::{CompositionError, DirichletError, Moments};
pub use model::{CoDaTable, DirichletRegression, GradientPath, ModelError, ModelSpec, ParameterVector};
pub use reference::{ReferenceChoice, ShapeReport};
pub use sampler::{nuts_sample, LogDensity, PosteriorDraws, SamplerConfig, SamplerError};
pub use scalar::Real;

pub type Composition64 = dirichlet::Composition<f64>;
pub type Composition32 = dirichlet::Composition<f32>;
pub type Dirichlet64 = dirichlet::Dirichlet<f64>;
pub type Dirichlet32 = dirichlet::Dirichlet<f32>;
pub type ComponentShape64 = reference::ComponentShape<f64>;
pub type ShapeReport64 = reference::ShapeReport<f64>;
pub type MleFit64 = reference::MleFit<f64>;
