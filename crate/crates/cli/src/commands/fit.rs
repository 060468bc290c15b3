use codareg::metrics::FitReport;
use codareg::model::{predict, GroupEffects};
use codareg::{nuts_sample, DirichletRegression, ModelSpec, PosteriorDraws, SamplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    assess, fmt, load_dataset, print_dry_run, reference_record, shape_fit, thin, Context, Convergence, FittedModel,
    DRAWS_FILE, MODEL_FILE, REPORT_FILE, SUMMARY_FILE,
};
use crate::config::{ReferenceMode, RunConfig};
use crate::ingest::Dataset;
use crate::output::{csv_bytes, draws_csv, float, text_table, ReferenceRecord, RunDir};
use crate::{CliError, FitArgs};

/// ChaCha stream of the posterior predictive draws; the sampler uses the
/// configured stream.
pub const PREDICTIVE_STREAM: u64 = u64::MAX;

#[derive(Serialize)]
struct SamplerStats<'a> {
    step_size: &'a [f64],
    inv_metric: &'a [Vec<f64>],
    warmup_divergences: &'a [usize],
    iterations: Vec<IterationRow>,
}

#[derive(Serialize)]
struct IterationRow {
    chain: usize,
    iter: usize,
    lp: f64,
    accept_stat: f64,
    step_size: f64,
    tree_depth: usize,
    n_leapfrog: usize,
    divergent: bool,
    energy: f64,
}

/// Observed-data fit metrics in the layout of the report.
#[derive(Debug, Serialize)]
pub struct FitMetrics {
    #[serde(flatten)]
    pub report: FitReport,
    /// 100 · RMSE over every observed part.
    pub rmse_percent_predictive: f64,
    pub predictive_draws: usize,
}

#[derive(Serialize)]
struct Report<'a> {
    observations: usize,
    components: &'a [String],
    groups: &'a [String],
    reference: &'a ReferenceRecord,
    renormalized_rows: usize,
    zero_adjusted: bool,
    convergence: &'a Convergence,
    metrics: Option<&'a FitMetrics>,
    metrics_error: Option<String>,
}

pub(super) fn run(ctx: &Context, args: &FitArgs) -> Result<(), CliError> {
    let mut config = ctx.resolve(SamplerConfig::default())?;
    if let Some(r) = &args.reference {
        config.reference = ReferenceMode::parse(r);
    }
    let (data, digest) = load_dataset(&args.input, &config)?;
    let shapes = match config.reference {
        ReferenceMode::Auto if !ctx.dry_run => Some(shape_fit(&data)?),
        _ => None,
    };
    if let (ReferenceMode::Component(name), true) = (&config.reference, ctx.dry_run) {
        if !data.components.contains(name) {
            return Err(CliError::Config(format!("reference `{name}` is not a component")));
        }
    }
    let reference = if ctx.dry_run {
        None
    } else {
        Some(reference_record(&data, &config.reference, shapes.as_ref())?)
    };
    let spec = ModelSpec::for_table(&data.table, reference.as_ref().map_or(data.components.len() - 1, |r| r.index))
        .and_then(|s| s.with_priors(config.priors))
        .map(|s| s.with_dispersion(config.dispersion))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let unassessable = config.sampler.chains < 2 || config.sampler.samples < 4;
    if !unassessable {
        config.sampler.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }

    if ctx.dry_run {
        let mut notes = vec![format!(
            "{}: {} rows, {} components, {} groups, {} parameters",
            args.input.display(),
            data.table.len(),
            data.components.len(),
            data.groups.len(),
            spec.layout().dim()
        )];
        if unassessable {
            notes.push("convergence cannot be assessed with fewer than 2 chains of 4 draws".into());
        }
        print_dry_run("fit", &config, &notes);
        return if unassessable {
            Err(CliError::Convergence("fewer than 2 chains of 4 draws".into()))
        } else {
            Ok(())
        };
    }
    let reference = reference.expect("resolved outside dry runs");
    let model = FittedModel {
        spec: spec.clone(),
        components: data.components.clone(),
        mean_covariates: data.mean_covariates.clone(),
        precision_covariates: data.precision_covariates.clone(),
        group: config.data.group.clone(),
        groups: data.groups.clone(),
        gradient_path: config.gradient_path,
        observations: data.table.len(),
    };
    let mut dir = RunDir::create(&ctx.out).map_err(CliError::io(&ctx.out))?;
    let mut manifest = ctx.manifest("fit", &config, vec![digest]);
    manifest.reference = Some(reference.clone());
    dir.write_json("model", MODEL_FILE, &model).map_err(CliError::io(&ctx.out))?;

    if unassessable {
        let message = format!(
            "{} chains of {} draws; need at least 2 chains of 4 draws",
            config.sampler.chains, config.sampler.samples
        );
        manifest.status = format!("convergence: {message}");
        dir.finish(manifest).map_err(CliError::io(&ctx.out))?;
        return Err(CliError::Convergence(format!("cannot assess convergence: {message}")));
    }

    let names = spec.layout().names(&model.labels());
    let target = DirichletRegression::new(&spec, &data.table, config.gradient_path).map_err(|e| CliError::Failed(e.to_string()))?;
    let init = vec![0.0; names.len()];
    log::info!(
        "sampling {} chains of {} + {} iterations, {} parameters",
        config.sampler.chains,
        config.sampler.warmup,
        config.sampler.samples,
        names.len()
    );
    let draws = match nuts_sample(&target, &config.sampler, &init, names) {
        Ok(draws) => draws,
        Err(e) => {
            manifest.status = format!("sampler: {e}");
            dir.finish(manifest).map_err(CliError::io(&ctx.out))?;
            return Err(CliError::Failed(format!("sampler failed: {e}")));
        }
    };

    let convergence = assess(&draws);
    let (metrics, metrics_error) = match fit_metrics(&spec, &data, &draws, &config) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e)),
    };
    let report = Report {
        observations: data.table.len(),
        components: &data.components,
        groups: &data.groups,
        reference: &reference,
        renormalized_rows: data.renormalized,
        zero_adjusted: data.zero_adjusted,
        convergence: &convergence,
        metrics: metrics.as_ref(),
        metrics_error,
    };
    let text = summary(&model, &reference, &convergence, metrics.as_ref());
    let written = draws_csv(&draws)
        .and_then(|bytes| dir.write("draws", DRAWS_FILE, &bytes))
        .and_then(|_| dir.write_json("sampler", "sampler_stats.json", &sampler_stats(&draws)))
        .and_then(|_| effects_csv(&model, &draws))
        .and_then(|bytes| dir.write("effects", "effects.csv", &bytes))
        .and_then(|_| dir.write_json("report", REPORT_FILE, &report))
        .and_then(|_| dir.write("summary", SUMMARY_FILE, text.as_bytes()));
    written.map_err(CliError::io(&ctx.out))?;
    print!("{text}");

    if !convergence.passed {
        manifest.status = format!("convergence: {}", convergence.problems.join("; "));
    }
    dir.finish(manifest).map_err(CliError::io(&ctx.out))?;
    if convergence.passed {
        Ok(())
    } else {
        Err(CliError::Convergence(convergence.problems.join("; ")))
    }
}

fn fit_metrics(spec: &ModelSpec, data: &Dataset, draws: &PosteriorDraws, config: &RunConfig) -> Result<FitMetrics, String> {
    let table = &data.table;
    let thinned = thin(draws, config.predictive_draws);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    rng.set_stream(PREDICTIVE_STREAM);
    let prediction = predict(spec, &thinned, &table.x_rows(), &table.z_rows(), table.group_labels(), &mut rng)
        .map_err(|e| format!("posterior predictive: {e}"))?;
    let report = FitReport::new(spec, table, draws, &prediction).map_err(|e| format!("fit metrics: {e}"))?;
    let c = report.rmse_by_component.len() as f64;
    let mse: f64 = report.rmse_by_component.iter().map(|r| (r / 100.0).powi(2)).sum::<f64>() / c;
    Ok(FitMetrics {
        report,
        rmse_percent_predictive: 100.0 * mse.sqrt(),
        predictive_draws: thinned.total(),
    })
}

fn sampler_stats(draws: &PosteriorDraws) -> SamplerStats<'_> {
    let iterations = draws
        .stats
        .iter()
        .enumerate()
        .map(|(k, s)| IterationRow {
            chain: k / draws.samples + 1,
            iter: k % draws.samples + 1,
            lp: s.lp,
            accept_stat: s.accept_stat,
            step_size: s.step_size,
            tree_depth: s.tree_depth,
            n_leapfrog: s.n_leapfrog,
            divergent: s.divergent,
            energy: s.energy,
        })
        .collect();
    SamplerStats {
        step_size: &draws.step_size,
        inv_metric: &draws.inv_metric,
        warmup_divergences: &draws.warmup_divergences,
        iterations,
    }
}

/// Posterior summaries of the group-level coefficients β_cl and θ_l.
fn effects_csv(model: &FittedModel, draws: &PosteriorDraws) -> std::io::Result<Vec<u8>> {
    let layout = model.spec.layout();
    let names = layout.effect_names(&model.labels());
    let samples: Vec<Vec<f64>> = draws.iter().map(|v| GroupEffects::from_values(&layout, v).flatten()).collect();
    let rows = names.iter().enumerate().map(|(j, name)| {
        let mut column: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        let sd = (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        column.sort_by(f64::total_cmp);
        vec![
            name.clone(),
            float(mean),
            float(sd),
            float(codareg::metrics::quantile_sorted(&column, 0.025)),
            float(codareg::metrics::quantile_sorted(&column, 0.5)),
            float(codareg::metrics::quantile_sorted(&column, 0.975)),
        ]
    });
    csv_bytes(&["effect", "mean", "sd", "q025", "q50", "q975"].map(String::from), rows)
}

pub(super) fn metrics_rows(metrics: Option<&FitMetrics>) -> String {
    let cells = |m: &FitMetrics| {
        vec![
            "all".to_string(),
            "-".into(),
            "-".into(),
            fmt(m.report.aitchison_mean, 3),
            fmt(m.report.coverage_95, 3),
            fmt(m.rmse_percent_predictive, 3),
            fmt(m.report.kl_mean, 3),
        ]
    };
    super::diagnose::metrics_table(metrics.map(cells), metrics.map(|m| (m.report.waic, m.report.p_d, m.report.dic)))
}

fn summary(model: &FittedModel, reference: &ReferenceRecord, convergence: &Convergence, metrics: Option<&FitMetrics>) -> String {
    let mut text = format!(
        "{} observations, {} components, {} groups; reference {} ({})\n\n",
        model.observations,
        model.components.len(),
        model.groups.len(),
        reference.component,
        reference.mode
    );
    text.push_str(&super::diagnose::convergence_text(convergence));
    text.push('\n');
    text.push_str(&metrics_rows(metrics));
    if !convergence.parameters.is_empty() {
        text.push('\n');
        let rows: Vec<Vec<String>> = convergence
            .parameters
            .iter()
            .map(|p| vec![p.name.clone(), fmt(p.mean, 4), fmt(p.sd, 4), fmt(p.rhat, 3), fmt(p.ess, 0)])
            .collect();
        text.push_str(&text_table(&["parameter", "mean", "sd", "rhat", "ess"], &rows));
    }
    text
}
