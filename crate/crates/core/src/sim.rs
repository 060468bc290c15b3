//! Seeded simulation studies: reference selection on boosted Dirichlet
//! vectors, the entropy–precision sweep and hierarchical regression
//! recovery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{Composition, Dirichlet, DirichletError};
use crate::metrics::{self, aitchison_distance, in_central_interval, kl_divergence, rmse_percent, MetricError};
use crate::model::{
    predict, CoDaTable, DirichletRegression, GradientPath, GroupEffects, ModelError, ModelSpec, ParameterNames,
};
use crate::reference::{fit_dirichlet_mle, select_reference, shape_metrics, ComponentShape, FitError};
use crate::sampler::{nuts_sample, summarize, SamplerConfig, SamplerError};

/// Largest tolerated fraction of failed MLE fits in the reference study.
pub const MAX_MLE_FAILURE_RATE: f64 = 0.05;
/// Largest tolerated fraction of failed replicates in the regression study.
pub const MAX_REPLICATE_FAILURE_RATE: f64 = 0.10;

/// Per-group deviations added to every true coefficient.
pub const GROUP_DEVIATIONS: [f64; 4] = [0.002, 0.003, -0.002, -0.003];
/// True shared mean coefficients; the last component is the reference.
pub const TRUE_BETA: [f64; 3] = [2.0, 3.0, 0.0];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario {scenario}: MLE failed in {failed} of {replicates} replicates (last: {last})")]
    MleFailures {
        scenario: usize,
        failed: usize,
        replicates: usize,
        last: String,
    },
    #[error("{failed} of {replicates} replicates failed (last: {last})")]
    ReplicateFailures { failed: usize, replicates: usize, last: String },
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Failure of a single regression replicate.
#[derive(Debug, Error)]
pub enum ReplicateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    ReferenceIllustration,
    EntropySweep,
    RegressionSim,
}

/// Parameters of one simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub components: usize,
    pub groups: usize,
    /// Observations per fit (reference study) or per group (regression).
    pub n: usize,
    pub phi: f64,
    pub replicates: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub gradient_path: GradientPath,
    /// Reference study only: true shape vectors, one per scenario. When
    /// absent each scenario draws its own vector once.
    #[serde(default)]
    pub alpha: Option<Vec<Vec<f64>>>,
}

impl ScenarioSpec {
    /// Seven components, each boosted in turn, 2000 observations per fit.
    pub fn reference_illustration(replicates: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::ReferenceIllustration,
            components: 7,
            groups: 1,
            n: 2000,
            phi: f64::NAN,
            replicates,
            seed,
            sampler: SamplerConfig::light(),
            gradient_path: GradientPath::default(),
            alpha: None,
        }
    }

    /// Three components, four groups, `n` observations per group.
    pub fn regression(phi: f64, n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::RegressionSim,
            components: 3,
            groups: 4,
            n,
            phi,
            replicates,
            seed,
            sampler: SamplerConfig::light(),
            gradient_path: GradientPath::default(),
            alpha: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidScenario(m));
        if self.replicates < 1 {
            return fail("replicates must be at least 1".into());
        }
        match self.kind {
            ScenarioKind::ReferenceIllustration => {
                if self.components < 2 || self.n < 2 {
                    return fail("reference illustration needs C ≥ 2 and n ≥ 2".into());
                }
                if let Some(alpha) = &self.alpha {
                    let c = self.components;
                    if alpha.len() != c || alpha.iter().any(|a| a.len() != c || a.iter().any(|&v| !(v > 0.0))) {
                        return fail(format!("alpha must hold {c} positive vectors of length {c}"));
                    }
                }
            }
            ScenarioKind::EntropySweep => {}
            ScenarioKind::RegressionSim => {
                if self.components != 3 {
                    return fail(format!("regression study is defined for C = 3, got {}", self.components));
                }
                if self.groups < 1 || self.groups > GROUP_DEVIATIONS.len() {
                    return fail(format!("groups must lie in 1..={}", GROUP_DEVIATIONS.len()));
                }
                if !(self.phi.is_finite() && self.phi > 0.0) {
                    return fail(format!("phi must be positive, got {}", self.phi));
                }
                if self.n < 1 {
                    return fail("n must be at least 1".into());
                }
                self.sampler.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            }
        }
        Ok(())
    }
}

fn replicate_rng(seed: u64, scenario: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(scenario));
    rng.set_stream(replicate);
    rng
}

/// One fitted replicate of the reference study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceReplicate {
    pub scenario: usize,
    pub replicate: usize,
    pub alpha_true: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub selected: usize,
}

/// Replicate-averaged summary of one boosted scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceScenario {
    pub alpha_true: Vec<f64>,
    /// Zero-based boosted component.
    pub boosted: usize,
    pub alpha_hat: Vec<f64>,
    pub phi_hat: f64,
    /// Entropy at the averaged α̂.
    pub entropy: f64,
    pub skewness: Vec<f64>,
    pub kurtosis: Vec<f64>,
    /// How often each component was selected as reference.
    pub selected_counts: Vec<usize>,
    pub selection_rate: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceStudy {
    pub scenarios: Vec<ReferenceScenario>,
    pub replicates: Vec<ReferenceReplicate>,
}

/// Draws the true shapes of one scenario: α_c ~ U(1.1, 1.9) with component
/// `boosted` raised by N(4, 1).
pub fn draw_scenario_alpha<R: Rng + ?Sized>(components: usize, boosted: usize, rng: &mut R) -> Vec<f64> {
    let boost = Normal::new(4.0, 1.0).expect("valid normal");
    let mut alpha: Vec<f64> = (0..components).map(|_| rng.random_range(1.1..1.9)).collect();
    alpha[boosted] += boost.sample(rng);
    alpha
}

/// Boosted-component study. Each scenario boosts one component and keeps its
/// true shape vector fixed; every replicate draws n observations and feeds
/// the MLE into reference selection.
pub fn run_reference_illustration(spec: &ScenarioSpec) -> Result<ReferenceStudy, SimError> {
    spec.validate()?;
    let c = spec.components;
    let mut scenarios = Vec::with_capacity(c);
    let mut all = Vec::new();
    for scenario in 0..c {
        // stream 0 is reserved for the scenario's truth, replicates use 1..
        let alpha = match &spec.alpha {
            Some(fixed) => fixed[scenario].clone(),
            None => draw_scenario_alpha(c, scenario, &mut replicate_rng(spec.seed, scenario as u64, 0)),
        };
        let truth = Dirichlet::new(alpha.clone())?;
        let results: Vec<Result<ReferenceReplicate, String>> = (0..spec.replicates)
            .into_par_iter()
            .map(|replicate| {
                let mut rng = replicate_rng(spec.seed, scenario as u64, replicate as u64 + 1);
                let sample = truth.sample(spec.n, &mut rng).map_err(|e| e.to_string())?;
                let fit = fit_dirichlet_mle(&sample).map_err(|e: FitError| e.to_string())?;
                let shapes: Vec<ComponentShape<f64>> = fit.alpha().iter().map(|&a| ComponentShape::from_shape(a)).collect();
                Ok(ReferenceReplicate {
                    scenario,
                    replicate,
                    alpha_true: alpha.clone(),
                    alpha_hat: fit.alpha().to_vec(),
                    selected: select_reference(&shapes).index,
                })
            })
            .collect();
        let mut ok = Vec::new();
        let mut last = String::new();
        for r in results {
            match r {
                Ok(rep) => ok.push(rep),
                Err(e) => last = e,
            }
        }
        let failures = spec.replicates - ok.len();
        if failures as f64 > MAX_MLE_FAILURE_RATE * spec.replicates as f64 || ok.is_empty() {
            return Err(SimError::MleFailures {
                scenario,
                failed: failures,
                replicates: spec.replicates,
                last,
            });
        }
        let mut alpha_hat = vec![0.0; c];
        let mut selected_counts = vec![0; c];
        for rep in &ok {
            for (a, v) in alpha_hat.iter_mut().zip(&rep.alpha_hat) {
                *a += v;
            }
            selected_counts[rep.selected] += 1;
        }
        alpha_hat.iter_mut().for_each(|a| *a /= ok.len() as f64);
        let mean_fit = Dirichlet::new(alpha_hat.clone())?;
        let report = shape_metrics(&mean_fit)?;
        scenarios.push(ReferenceScenario {
            alpha_true: alpha,
            boosted: scenario,
            phi_hat: mean_fit.precision(),
            entropy: report.entropy_hat,
            skewness: report.components.iter().map(|s| s.skewness).collect(),
            kurtosis: report.components.iter().map(|s| s.kurtosis).collect(),
            alpha_hat,
            selection_rate: selected_counts[scenario] as f64 / ok.len() as f64,
            selected_counts,
            failures,
        });
        all.extend(ok);
    }
    Ok(ReferenceStudy {
        scenarios,
        replicates: all,
    })
}

/// One grid point of the entropy sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyPoint {
    pub components: usize,
    pub phi: f64,
    pub entropy: f64,
    /// Set on the grid point with the largest entropy for this C.
    pub argmax: bool,
}

/// φ from 0.25 to 30 in steps of 0.25; contains every integer C of interest.
pub fn default_phi_grid() -> Vec<f64> {
    (1..=120).map(|k| 0.25 * k as f64).collect()
}

/// Entropy of the symmetric Dirichlet α_c = φ / C over a grid of φ.
pub fn run_entropy_sweep(
    components: impl IntoIterator<Item = usize>,
    phi_grid: &[f64],
) -> Result<Vec<EntropyPoint>, SimError> {
    if phi_grid.is_empty() {
        return Err(SimError::InvalidScenario("empty φ grid".into()));
    }
    let mut rows = Vec::new();
    for c in components {
        let start = rows.len();
        let mut best = (f64::NEG_INFINITY, start);
        for &phi in phi_grid {
            let entropy = Dirichlet::new(vec![phi / c as f64; c])?.entropy()?;
            if entropy > best.0 {
                best = (entropy, rows.len());
            }
            rows.push(EntropyPoint {
                components: c,
                phi,
                entropy,
                argmax: false,
            });
        }
        rows[best.1].argmax = true;
    }
    Ok(rows)
}

/// True group-level effects in [`GroupEffects::flatten`] order.
pub fn true_effects(phi: f64, groups: usize) -> Vec<f64> {
    let mut truth = Vec::with_capacity(groups * 3);
    for &d in &GROUP_DEVIATIONS[..groups] {
        truth.push(TRUE_BETA[0] + d);
        truth.push(TRUE_BETA[1] + d);
        truth.push(phi.ln() + d);
    }
    truth
}

/// Simulates `n` observations per group from the true model.
pub fn simulate_table<R: Rng + ?Sized>(phi: f64, groups: usize, n: usize, rng: &mut R) -> Result<CoDaTable, SimError> {
    let truth = true_effects(phi, groups);
    let mut y = Vec::with_capacity(groups * n);
    let mut labels = Vec::with_capacity(groups * n);
    for l in 0..groups {
        let eta = [truth[3 * l], truth[3 * l + 1], TRUE_BETA[2]];
        let phi_l = truth[3 * l + 2].exp();
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
        let mean = Composition::closure(weights).map_err(DirichletError::from)?;
        let dist = Dirichlet::from_mean_precision(&mean, phi_l)?;
        for _ in 0..n {
            y.push(dist.sample_one(rng)?);
            labels.push(l);
        }
    }
    let rows = y.len();
    Ok(CoDaTable::new(y, vec![vec![1.0]; rows], vec![vec![1.0]; rows], labels, groups)?)
}

/// Scores of one regression replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReplicate {
    pub replicate: usize,
    /// Fraction of group-level parameters inside their 95% posterior interval.
    pub parameter_coverage: f64,
    pub parameter_hits: usize,
    pub parameter_count: usize,
    /// 100 · RMSE of posterior-mean group-level parameters.
    pub parameter_rmse_percent: f64,
    pub parameter_squared_error: f64,
    /// 100 · RMSE of every posterior draw of the group-level parameters,
    /// so posterior spread counts alongside bias.
    pub parameter_rmse_draws_percent: f64,
    pub aitchison: f64,
    pub kl: f64,
    pub predictive_coverage: f64,
    /// 100 · RMSE of held-out parts against the predicted mean.
    pub predictive_rmse_percent: f64,
    pub max_rhat: f64,
    pub divergence_rate: f64,
}

/// Replicate-averaged results of one (φ, N) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub phi: f64,
    pub n: usize,
    pub gradient_path: GradientPath,
    pub replicates: usize,
    pub failures: usize,
    /// Hits over all parameters and replicates.
    pub parameter_coverage_pooled: f64,
    /// Mean of per-replicate coverage fractions.
    pub parameter_coverage_averaged: f64,
    /// 100 · √(squared error pooled over parameters and replicates).
    pub parameter_rmse_percent_pooled: f64,
    /// Mean of per-replicate values.
    pub parameter_rmse_percent_averaged: f64,
    pub parameter_rmse_draws_percent_averaged: f64,
    pub aitchison: f64,
    pub predictive_coverage: f64,
    pub predictive_rmse_percent: f64,
    pub kl: f64,
    pub max_rhat: f64,
    pub mean_divergence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionStudy {
    pub summary: RegressionSummary,
    pub replicates: Vec<RegressionReplicate>,
}

/// Fits one simulated replicate and scores it on a held-out batch of the
/// same size.
pub fn run_regression_replicate(spec: &ScenarioSpec, replicate: usize) -> Result<RegressionReplicate, ReplicateError> {
    let mut rng = replicate_rng(spec.seed, 0, replicate as u64);
    let train = simulate_table(spec.phi, spec.groups, spec.n, &mut rng).map_err(sim_to_replicate)?;
    let test = simulate_table(spec.phi, spec.groups, spec.n, &mut rng).map_err(sim_to_replicate)?;

    let model = ModelSpec::new(3, 1, 1, spec.groups, 2)?;
    let layout = model.layout();
    let target = DirichletRegression::new(&model, &train, spec.gradient_path)?;
    let sampler = SamplerConfig {
        seed: spec.seed,
        stream: replicate as u64 + 1,
        ..spec.sampler.clone()
    };
    let names = layout.names(&ParameterNames::generic(&model));
    let draws = nuts_sample(&target, &sampler, &vec![0.0; layout.dim()], names)?;

    let effects: Vec<Vec<f64>> = draws
        .iter()
        .map(|values| GroupEffects::from_values(&layout, values).flatten())
        .collect();
    let truth = true_effects(spec.phi, spec.groups);
    let mut hits = 0;
    let mut estimate = Vec::with_capacity(truth.len());
    let mut draw_squared = 0.0;
    for (j, &t) in truth.iter().enumerate() {
        let column: Vec<f64> = effects.iter().map(|e| e[j]).collect();
        draw_squared += column.iter().map(|v| (v - t).powi(2)).sum::<f64>();
        if in_central_interval(t, &column, 0.95) {
            hits += 1;
        }
        estimate.push(column.iter().sum::<f64>() / column.len() as f64);
    }
    let squared_error: f64 = estimate.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum();

    let prediction = predict(&model, &draws, &test.x_rows(), &test.z_rows(), test.group_labels(), &mut rng)?;
    let observed = test.compositions();
    let n = observed.len() as f64;
    let mut aitchison = 0.0;
    let mut kl = 0.0;
    let mut observed_parts = Vec::with_capacity(observed.len() * 3);
    let mut fitted_parts = Vec::with_capacity(observed.len() * 3);
    for (y, fitted) in observed.iter().zip(&prediction.expected) {
        aitchison += aitchison_distance(y, fitted)?;
        kl += kl_divergence(y, fitted)?;
        observed_parts.extend_from_slice(y.parts());
        fitted_parts.extend_from_slice(fitted.parts());
    }
    let coverage = metrics::coverage_95(observed, &prediction.draws)?;
    let max_rhat = summarize(&draws)
        .map(|s| s.iter().map(|p| p.rhat).fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(f64::NAN);

    Ok(RegressionReplicate {
        replicate,
        parameter_coverage: hits as f64 / truth.len() as f64,
        parameter_hits: hits,
        parameter_count: truth.len(),
        parameter_rmse_percent: rmse_percent(&estimate, &truth)?,
        parameter_squared_error: squared_error,
        parameter_rmse_draws_percent: 100.0 * (draw_squared / (truth.len() * effects.len()) as f64).sqrt(),
        aitchison: aitchison / n,
        kl: kl / n,
        predictive_coverage: coverage.mean,
        predictive_rmse_percent: rmse_percent(&fitted_parts, &observed_parts)?,
        max_rhat,
        divergence_rate: draws.divergence_rate(),
    })
}

fn sim_to_replicate(e: SimError) -> ReplicateError {
    match e {
        SimError::Dirichlet(e) => ReplicateError::Dirichlet(e),
        SimError::Model(e) => ReplicateError::Model(e),
        other => ReplicateError::Model(ModelError::InvalidData(other.to_string())),
    }
}

/// Runs every replicate of a regression cell concurrently and aggregates in
/// replicate order.
pub fn run_regression_sim(spec: &ScenarioSpec) -> Result<RegressionStudy, SimError> {
    spec.validate()?;
    if spec.kind != ScenarioKind::RegressionSim {
        return Err(SimError::InvalidScenario("not a regression scenario".into()));
    }
    let results: Vec<Result<RegressionReplicate, ReplicateError>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| run_regression_replicate(spec, r))
        .collect();
    let mut ok = Vec::new();
    let mut last = String::new();
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(rep) => ok.push(rep),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                last = e.to_string();
            }
        }
    }
    let failures = spec.replicates - ok.len();
    if failures as f64 > MAX_REPLICATE_FAILURE_RATE * spec.replicates as f64 || ok.is_empty() {
        return Err(SimError::ReplicateFailures {
            failed: failures,
            replicates: spec.replicates,
            last,
        });
    }
    let k = ok.len() as f64;
    let mean = |f: fn(&RegressionReplicate) -> f64| ok.iter().map(f).sum::<f64>() / k;
    let hits: usize = ok.iter().map(|r| r.parameter_hits).sum();
    let count: usize = ok.iter().map(|r| r.parameter_count).sum();
    let squared: f64 = ok.iter().map(|r| r.parameter_squared_error).sum();
    let summary = RegressionSummary {
        phi: spec.phi,
        n: spec.n,
        gradient_path: spec.gradient_path,
        replicates: spec.replicates,
        failures,
        parameter_coverage_pooled: hits as f64 / count as f64,
        parameter_coverage_averaged: mean(|r| r.parameter_coverage),
        parameter_rmse_percent_pooled: 100.0 * (squared / count as f64).sqrt(),
        parameter_rmse_percent_averaged: mean(|r| r.parameter_rmse_percent),
        parameter_rmse_draws_percent_averaged: mean(|r| r.parameter_rmse_draws_percent),
        aitchison: mean(|r| r.aitchison),
        predictive_coverage: mean(|r| r.predictive_coverage),
        predictive_rmse_percent: mean(|r| r.predictive_rmse_percent),
        kl: mean(|r| r.kl),
        max_rhat: ok.iter().map(|r| r.max_rhat).fold(f64::NEG_INFINITY, f64::max),
        mean_divergence_rate: mean(|r| r.divergence_rate),
    };
    Ok(RegressionStudy { summary, replicates: ok })
}
