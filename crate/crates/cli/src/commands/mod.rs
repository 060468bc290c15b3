mod diagnose;
mod fit;
mod predict;
mod select;
mod simulate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use codareg::metrics::SUSPECT_DIVERGENCE_RATE;
use codareg::model::ParameterNames;
use codareg::reference::{fit_dirichlet_mle_with, shape_metrics, MleOptions};
use codareg::sampler::summarize;
use codareg::{GradientPath, MleFit64, ModelSpec, PosteriorDraws, SamplerConfig, ShapeReport64};
use serde::{Deserialize, Serialize};

use crate::config::{parse_entries, ReferenceMode, RunConfig};
use crate::ingest::{ingest_csv, Dataset};
use crate::output::{timestamp, FileDigest, ReferenceRecord, RunManifest};
use crate::{Cli, CliError, Command};

pub const DEFAULT_OUT: &str = "codareg-out";
pub const MODEL_FILE: &str = "model.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
/// Largest split R̂ accepted by `fit` and `diagnose`.
pub const RHAT_LIMIT: f64 = 1.05;

/// State shared by every subcommand.
pub(crate) struct Context {
    arguments: Vec<String>,
    entries: BTreeMap<String, String>,
    config_digest: Option<FileDigest>,
    seed: Option<u64>,
    pub out: PathBuf,
    /// Whether `--out` was given; `diagnose` only writes files then.
    pub out_given: bool,
    pub dry_run: bool,
    started: String,
}

impl Context {
    /// Configuration file over `sampler` defaults, with `--seed` applied.
    pub fn resolve(&self, sampler: SamplerConfig) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::resolve(&self.entries, sampler).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }

    pub fn manifest(&self, command: &str, config: &RunConfig, mut inputs: Vec<FileDigest>) -> RunManifest {
        if let Some(digest) = &self.config_digest {
            inputs.insert(0, digest.clone());
        }
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            arguments: self.arguments.clone(),
            seed: config.seed(),
            config: config.entries(),
            inputs,
            outputs: Vec::new(),
            reference: None,
            status: "ok".into(),
            started: self.started.clone(),
            finished: String::new(),
        }
    }
}

pub(crate) fn dispatch(cli: Cli, arguments: Vec<String>) -> Result<(), CliError> {
    let global = cli.global;
    if let Some(threads) = global.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let (entries, config_digest) = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io(path))?;
            let entries = parse_entries(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let digest = FileDigest::of("config", path, &path.display().to_string()).map_err(CliError::io(path))?;
            (entries, Some(digest))
        }
        None => (BTreeMap::new(), None),
    };
    let ctx = Context {
        arguments,
        entries,
        config_digest,
        seed: global.seed,
        out_given: global.out.is_some(),
        out: global.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        dry_run: global.dry_run,
        started: timestamp(),
    };
    match cli.command {
        Command::SelectReference(args) => select::run(&ctx, &args),
        Command::Fit(args) => fit::run(&ctx, &args),
        Command::Predict(args) => predict::run(&ctx, &args),
        Command::Diagnose(args) => diagnose::run(&ctx, &args),
        Command::Simulate(args) => simulate::run(&ctx, &args),
    }
}

pub(crate) fn load_dataset(path: &Path, config: &RunConfig) -> Result<(Dataset, FileDigest), CliError> {
    let data = ingest_csv(path, &config.data).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })?;
    let digest = FileDigest::of("data", path, &path.display().to_string()).map_err(CliError::io(path))?;
    Ok((data, digest))
}

/// Maximum-likelihood Dirichlet fit of the pooled compositions and the
/// shape ranking derived from it.
pub(crate) struct ShapeFit {
    pub fit: MleFit64,
    pub report: ShapeReport64,
}

pub(crate) fn shape_fit(data: &Dataset) -> Result<ShapeFit, CliError> {
    let fit = fit_dirichlet_mle_with(data.table.compositions(), MleOptions::default())
        .map_err(|e| CliError::Failed(format!("Dirichlet MLE: {e}")))?;
    let report = shape_metrics(&fit.params).map_err(|e| CliError::Failed(format!("shape metrics: {e}")))?;
    Ok(ShapeFit { fit, report })
}

/// Resolves the reference component. Auto mode needs the shape fit; a
/// named component is taken as given and the fit, if any, only supplies
/// the recommendation.
pub(crate) fn reference_record(
    data: &Dataset,
    mode: &ReferenceMode,
    shapes: Option<&ShapeFit>,
) -> Result<ReferenceRecord, CliError> {
    let names = |indices: &[usize]| indices.iter().map(|&i| data.components[i].clone()).collect::<Vec<_>>();
    let recommended = shapes.map(|s| &s.report.reference);
    match mode {
        ReferenceMode::Auto => {
            let choice = recommended.ok_or_else(|| CliError::Failed("reference selection did not run".into()))?;
            Ok(ReferenceRecord {
                mode: "auto".into(),
                index: choice.index,
                component: data.components[choice.index].clone(),
                recommended: Some(data.components[choice.index].clone()),
                tied: names(&choice.tied),
                warning: choice.warning.clone(),
            })
        }
        ReferenceMode::Component(name) => {
            let index = data
                .components
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| CliError::Config(format!("reference `{name}` is not a component ({})", data.components.join(", "))))?;
            Ok(ReferenceRecord {
                mode: "user".into(),
                index,
                component: name.clone(),
                recommended: recommended.map(|c| data.components[c.index].clone()),
                tied: recommended.map(|c| names(&c.tied)).unwrap_or_default(),
                warning: recommended.and_then(|c| c.warning.clone()),
            })
        }
    }
}

/// Everything `predict` and `diagnose` need to know about a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub components: Vec<String>,
    pub mean_covariates: Vec<String>,
    pub precision_covariates: Vec<String>,
    pub group: Option<String>,
    pub groups: Vec<String>,
    pub gradient_path: GradientPath,
    pub observations: usize,
}

impl FittedModel {
    pub fn labels(&self) -> ParameterNames {
        let with_intercept = |names: &[String]| std::iter::once("intercept".to_string()).chain(names.iter().cloned()).collect();
        ParameterNames {
            components: self.components.clone(),
            mean: with_intercept(&self.mean_covariates),
            precision: with_intercept(&self.precision_covariates),
            groups: self.groups.clone(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Convergence summary of a set of draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub chains: usize,
    pub samples: usize,
    pub assessable: bool,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub divergences: usize,
    pub divergence_rate: f64,
    pub warmup_divergences: Vec<usize>,
    pub passed: bool,
    pub problems: Vec<String>,
    pub parameters: Vec<ParameterRow>,
}

pub(crate) fn assess(draws: &PosteriorDraws) -> Convergence {
    let divergence_rate = draws.divergence_rate();
    let mut convergence = Convergence {
        chains: draws.chains,
        samples: draws.samples,
        assessable: false,
        max_rhat: None,
        min_ess: None,
        divergences: draws.divergences(),
        divergence_rate,
        warmup_divergences: draws.warmup_divergences.clone(),
        passed: false,
        problems: Vec::new(),
        parameters: Vec::new(),
    };
    match summarize(draws) {
        Err(e) => convergence.problems.push(format!("cannot assess convergence: {e}")),
        Ok(summaries) => {
            convergence.assessable = true;
            convergence.parameters = summaries
                .into_iter()
                .map(|s| ParameterRow {
                    name: s.name,
                    mean: s.mean,
                    sd: s.sd,
                    rhat: s.rhat,
                    ess: s.ess,
                })
                .collect();
            // NaN R̂ (a frozen coordinate) counts as a failure
            let max_rhat = convergence.parameters.iter().map(|p| p.rhat).fold(f64::NEG_INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
            let min_ess = convergence.parameters.iter().map(|p| p.ess).fold(f64::INFINITY, f64::min);
            convergence.max_rhat = Some(max_rhat);
            convergence.min_ess = Some(min_ess);
            if !(max_rhat <= RHAT_LIMIT) {
                let worst: Vec<&str> = convergence
                    .parameters
                    .iter()
                    .filter(|p| !(p.rhat <= RHAT_LIMIT))
                    .map(|p| p.name.as_str())
                    .collect();
                convergence.problems.push(format!(
                    "R-hat {max_rhat:.3} above {RHAT_LIMIT} ({} parameters, first {})",
                    worst.len(),
                    worst[0]
                ));
            }
        }
    }
    if divergence_rate > SUSPECT_DIVERGENCE_RATE {
        convergence.problems.push(format!(
            "{} divergent transitions ({:.2}% of draws, limit {:.0}%)",
            convergence.divergences,
            100.0 * divergence_rate,
            100.0 * SUSPECT_DIVERGENCE_RATE
        ));
    }
    convergence.passed = convergence.problems.is_empty();
    convergence
}

/// Evenly spaced draws from every chain, at most `max` in total.
pub(crate) fn thin(draws: &PosteriorDraws, max: usize) -> PosteriorDraws {
    if draws.total() <= max {
        return draws.clone();
    }
    let per_chain = (max / draws.chains).max(1);
    let chains = (0..draws.chains)
        .map(|c| {
            (0..per_chain)
                .map(|k| draws.draw(c, k * draws.samples / per_chain).to_vec())
                .collect()
        })
        .collect();
    PosteriorDraws::from_chains(draws.names.clone(), chains).expect("rectangular by construction")
}

pub(crate) fn fmt(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        "-".into()
    }
}

pub(crate) fn print_dry_run(command: &str, config: &RunConfig, notes: &[String]) {
    println!("# {command} (dry run)");
    for note in notes {
        println!("# {note}");
    }
    print!("{}", config.to_text());
}
