//! Gradient-based MCMC: the No-U-Turn sampler with step-size and diagonal
//! metric adaptation, run over independent chains.

mod adapt;
mod diagnostics;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{effective_sample_size, ess_chains, rhat, split_rhat, summarize, DiagnosticError, ParameterSummary};

use adapt::{MetricAdapter, StepSizeAdapter};
use nuts::{Hamiltonian, Nuts, Point};

/// Failure reported by a target density.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct TargetError(pub String);

/// An unnormalized log-density with gradient on ℝ^dim.
///
/// Implementations are evaluated concurrently from several chains.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes ∇ log p(x) into `gradient` and returns log p(x).
    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> Result<f64, TargetError>;
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("initial point has dimension {got}, target has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("chain {chain}: no finite log-density after {attempts} jittered initializations (last error: {last})")]
    Initialization { chain: usize, attempts: usize, last: String },
    #[error("chain {chain}: {message}")]
    StepSize { chain: usize, message: String },
    #[error("chain {chain}: all {warmup} warmup transitions diverged (final step size {step_size:.3e})")]
    DivergentWarmup { chain: usize, warmup: usize, step_size: f64 },
}

/// Run shape and tuning of [`nuts_sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    /// Random-stream selector; distinct values give independent runs from
    /// the same seed.
    #[serde(default)]
    pub stream: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub init_jitter: f64,
}

impl Default for SamplerConfig {
    /// Three chains of 10 000 iterations, the first 9 000 of them warmup.
    fn default() -> Self {
        Self {
            chains: 3,
            warmup: 9000,
            samples: 1000,
            seed: 1,
            stream: 0,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_jitter: 2.0,
        }
    }
}

/// Attempts at a finite initial point before giving up.
pub const INIT_ATTEMPTS: usize = 100;

impl SamplerConfig {
    /// Four chains of 1 000 warmup and 1 000 sampling iterations.
    pub fn light() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |m: String| Err(SamplerError::InvalidConfig(m));
        if self.chains < 1 {
            return fail("chains must be at least 1".into());
        }
        if self.warmup < 100 {
            return fail(format!("warmup must be at least 100, got {}", self.warmup));
        }
        if self.samples < 1 {
            return fail("samples must be at least 1".into());
        }
        if !(0.6..1.0).contains(&self.target_accept) {
            return fail(format!("target_accept must lie in [0.6, 1), got {}", self.target_accept));
        }
        if self.max_tree_depth < 1 {
            return fail("max_tree_depth must be at least 1".into());
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return fail(format!("init_jitter must be finite and non-negative, got {}", self.init_jitter));
        }
        Ok(())
    }

    fn chain_rng(&self, chain: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(chain as u64));
        rng.set_stream(self.stream);
        rng
    }
}

/// Per-iteration sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub lp: f64,
    pub accept_stat: f64,
    pub step_size: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

/// Post-warmup draws of all chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: usize,
    pub samples: usize,
    /// Chain-major, then iteration, then parameter.
    pub values: Vec<f64>,
    /// Chain-major, then iteration.
    pub stats: Vec<IterationStats>,
    pub warmup_divergences: Vec<usize>,
    pub step_size: Vec<f64>,
    pub inv_metric: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    /// Builds draws from per-chain lists of points, without sampler
    /// statistics. Useful for externally produced or synthetic draws.
    pub fn from_chains(names: Vec<String>, chains: Vec<Vec<Vec<f64>>>) -> Result<Self, DiagnosticError> {
        let dim = names.len();
        let samples = chains.first().map_or(0, Vec::len);
        if chains.is_empty() || samples == 0 {
            return Err(DiagnosticError::Empty);
        }
        let mut values = Vec::with_capacity(chains.len() * samples * dim);
        for chain in &chains {
            if chain.len() != samples {
                return Err(DiagnosticError::Ragged);
            }
            for draw in chain {
                if draw.len() != dim {
                    return Err(DiagnosticError::Ragged);
                }
                values.extend_from_slice(draw);
            }
        }
        let blank = IterationStats {
            lp: f64::NAN,
            accept_stat: f64::NAN,
            step_size: f64::NAN,
            tree_depth: 0,
            n_leapfrog: 0,
            divergent: false,
            energy: f64::NAN,
        };
        Ok(Self {
            names,
            chains: chains.len(),
            samples,
            values,
            stats: vec![blank; chains.len() * samples],
            warmup_divergences: vec![0; chains.len()],
            step_size: vec![f64::NAN; chains.len()],
            inv_metric: vec![vec![f64::NAN; dim]; chains.len()],
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn total(&self) -> usize {
        self.chains * self.samples
    }

    pub fn draw(&self, chain: usize, iteration: usize) -> &[f64] {
        let dim = self.dim();
        let start = (chain * self.samples + iteration) * dim;
        &self.values[start..start + dim]
    }

    /// Every draw, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim().max(1))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of parameter `index`, one vector per chain.
    pub fn column(&self, index: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.samples).map(|i| self.draw(c, i)[index]).collect())
            .collect()
    }

    /// Posterior mean of every coordinate.
    pub fn mean(&self) -> Vec<f64> {
        // Accumulated relative to the first draw so a constant chain
        // reproduces its value exactly.
        let first = self.draw(0, 0).to_vec();
        let mut offset = vec![0.0; self.dim()];
        for draw in self.iter() {
            for ((m, v), f) in offset.iter_mut().zip(draw).zip(&first) {
                *m += v - f;
            }
        }
        let n = self.total() as f64;
        first.iter().zip(offset).map(|(f, m)| f + m / n).collect()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.divergences() as f64 / self.total() as f64
    }
}

/// Runs `config.chains` independent NUTS chains from `init` plus uniform
/// jitter of half-width `config.init_jitter`.
///
/// Chain `k` uses a ChaCha stream seeded with `seed + k`, so results are
/// reproducible regardless of thread scheduling.
pub fn nuts_sample<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    init: &[f64],
    names: Vec<String>,
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(SamplerError::Dimension {
            expected: dim,
            got: init.len(),
        });
    }
    if names.len() != dim {
        return Err(SamplerError::InvalidConfig(format!(
            "{} parameter names for dimension {dim}",
            names.len()
        )));
    }
    let runs: Vec<ChainRun> = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_chain(target, config, init, chain))
        .collect::<Result<_, _>>()?;

    let mut draws = PosteriorDraws {
        names,
        chains: config.chains,
        samples: config.samples,
        values: Vec::with_capacity(config.chains * config.samples * dim),
        stats: Vec::with_capacity(config.chains * config.samples),
        warmup_divergences: Vec::with_capacity(config.chains),
        step_size: Vec::with_capacity(config.chains),
        inv_metric: Vec::with_capacity(config.chains),
    };
    for run in runs {
        draws.values.extend(run.values);
        draws.stats.extend(run.stats);
        draws.warmup_divergences.push(run.warmup_divergences);
        draws.step_size.push(run.step_size);
        draws.inv_metric.push(run.inv_metric);
    }
    let rate = draws.divergence_rate();
    if rate > 0.0 {
        log::warn!(
            "{} of {} post-warmup transitions diverged ({:.2}%)",
            draws.divergences(),
            draws.total(),
            100.0 * rate
        );
    }
    Ok(draws)
}

struct ChainRun {
    values: Vec<f64>,
    stats: Vec<IterationStats>,
    warmup_divergences: usize,
    step_size: f64,
    inv_metric: Vec<f64>,
}

fn initial_point<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    init: &[f64],
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Point, SamplerError> {
    let mut last = String::from("non-finite log-density");
    let mut gradient = vec![0.0; init.len()];
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = init
            .iter()
            .map(|&v| {
                if config.init_jitter > 0.0 {
                    v + rng.random_range(-config.init_jitter..config.init_jitter)
                } else {
                    v
                }
            })
            .collect();
        match target.log_density_and_gradient(&q, &mut gradient) {
            Ok(lp) if lp.is_finite() && gradient.iter().all(|g| g.is_finite()) => {
                return Ok(Point::new(target, q));
            }
            Ok(_) => last = "non-finite log-density or gradient".into(),
            Err(e) => last = e.0,
        }
    }
    Err(SamplerError::Initialization {
        chain,
        attempts: INIT_ATTEMPTS,
        last,
    })
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    init: &[f64],
    chain: usize,
) -> Result<ChainRun, SamplerError> {
    let dim = init.len();
    let mut rng = config.chain_rng(chain);
    let mut z = initial_point(target, config, init, chain, &mut rng)?;
    let mut sampler = Nuts {
        hamiltonian: Hamiltonian {
            target,
            inv_metric: vec![1.0; dim],
        },
        epsilon: 1.0,
        max_depth: config.max_tree_depth,
    };
    let step_error = |message| SamplerError::StepSize { chain, message };
    sampler.initial_step_size(&z, &mut rng).map_err(step_error)?;

    let mut step_adapter = StepSizeAdapter::new(config.target_accept, sampler.epsilon);
    let mut metric_adapter = MetricAdapter::new(dim, config.warmup);
    let mut warmup_divergences = 0;
    for _ in 0..config.warmup {
        let t = sampler.transition(&mut z, &mut rng);
        warmup_divergences += usize::from(t.divergent);
        sampler.epsilon = step_adapter.learn(t.accept_stat);
        if metric_adapter.learn(&mut sampler.hamiltonian.inv_metric, &z.q) {
            sampler.initial_step_size(&z, &mut rng).map_err(step_error)?;
            step_adapter.restart(sampler.epsilon);
        }
    }
    if warmup_divergences == config.warmup {
        return Err(SamplerError::DivergentWarmup {
            chain,
            warmup: config.warmup,
            step_size: sampler.epsilon,
        });
    }
    sampler.epsilon = step_adapter.final_step_size();

    let mut values = Vec::with_capacity(config.samples * dim);
    let mut stats = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let t = sampler.transition(&mut z, &mut rng);
        values.extend_from_slice(&z.q);
        stats.push(IterationStats {
            lp: z.lp,
            accept_stat: t.accept_stat,
            step_size: sampler.epsilon,
            tree_depth: t.tree_depth,
            n_leapfrog: t.n_leapfrog,
            divergent: t.divergent,
            energy: t.energy,
        });
    }
    Ok(ChainRun {
        values,
        stats,
        warmup_divergences,
        step_size: sampler.epsilon,
        inv_metric: sampler.hamiltonian.inv_metric,
    })
}
