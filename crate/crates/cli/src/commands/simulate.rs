use codareg::sim::{
    default_phi_grid, run_entropy_sweep, run_reference_illustration, run_regression_sim, RegressionStudy, ScenarioSpec,
};
use codareg::{GradientPath, SamplerConfig};

use super::{fmt, print_dry_run, Context, SUMMARY_FILE};
use crate::config::RunConfig;
use crate::output::{csv_bytes, float, text_table, RunDir};
use crate::{CliError, PathArg, Scenario, SimulateArgs};

pub const DEFAULT_REPLICATES: usize = 20;
pub const FULL_REPLICATES: usize = 100;
pub const DEFAULT_PHI: [f64; 3] = [13.0, 5.0, 2.0];
pub const DEFAULT_N: [usize; 3] = [10, 15, 30];

pub(super) fn run(ctx: &Context, args: &SimulateArgs) -> Result<(), CliError> {
    let config = ctx.resolve(SamplerConfig::light())?;
    let replicates = if args.full {
        FULL_REPLICATES
    } else {
        args.replicates.unwrap_or(DEFAULT_REPLICATES)
    };
    match args.scenario {
        Scenario::Reference => reference(ctx, args, &config, replicates),
        Scenario::Entropy => entropy(ctx, args, &config),
        Scenario::Regression => regression(ctx, args, &config, replicates),
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn write_all(ctx: &Context, config: &RunConfig, files: Vec<(&str, &str, Vec<u8>)>, text: &str) -> Result<(), CliError> {
    let mut dir = RunDir::create(&ctx.out).map_err(CliError::io(&ctx.out))?;
    for (role, name, bytes) in files {
        dir.write(role, name, &bytes).map_err(CliError::io(&ctx.out))?;
    }
    dir.write("summary", SUMMARY_FILE, text.as_bytes()).map_err(CliError::io(&ctx.out))?;
    print!("{text}");
    dir.finish(ctx.manifest("simulate", config, Vec::new())).map_err(CliError::io(&ctx.out))
}

fn json(value: &impl serde::Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn io(ctx: &Context) -> impl FnOnce(std::io::Error) -> CliError + 'static {
    CliError::io(ctx.out.clone())
}

fn reference(ctx: &Context, args: &SimulateArgs, config: &RunConfig, replicates: usize) -> Result<(), CliError> {
    let mut spec = ScenarioSpec::reference_illustration(replicates, config.seed());
    match args.n.as_slice() {
        [] => {}
        [n] => spec.n = *n,
        _ => return Err(CliError::Usage("the reference study takes a single --n".into())),
    }
    spec.validate().map_err(invalid)?;
    if ctx.dry_run {
        print_dry_run(
            "simulate",
            config,
            &[format!("reference study: {} scenarios x {} replicates, n = {}", spec.components, replicates, spec.n)],
        );
        return Ok(());
    }
    let study = run_reference_illustration(&spec).map_err(|e| CliError::Failed(e.to_string()))?;
    let c = spec.components;
    let component = |k: usize| format!("c{}", k + 1);

    let mut scenario_rows = Vec::new();
    for s in &study.scenarios {
        for k in 0..c {
            scenario_rows.push(vec![
                (s.boosted + 1).to_string(),
                component(k),
                (k == s.boosted).to_string(),
                float(s.alpha_true[k]),
                float(s.alpha_hat[k]),
                float(s.skewness[k]),
                float(s.kurtosis[k]),
                s.selected_counts[k].to_string(),
                float(s.phi_hat),
                float(s.entropy),
            ]);
        }
    }
    let replicate_rows = study.replicates.iter().flat_map(|r| {
        (0..c).map(move |k| {
            vec![
                (r.scenario + 1).to_string(),
                (r.replicate + 1).to_string(),
                component(k),
                float(r.alpha_true[k]),
                float(r.alpha_hat[k]),
                (r.selected == k).to_string(),
            ]
        })
    });

    let mut header = vec!["scenario".to_string()];
    header.extend((0..c).map(|k| format!("a{}", k + 1)));
    header.extend(["phi", "entropy", "selected"].map(String::from));
    let table: Vec<Vec<String>> = study
        .scenarios
        .iter()
        .map(|s| {
            let mut row = vec![(s.boosted + 1).to_string()];
            row.extend(s.alpha_hat.iter().map(|&a| fmt(a, 2)));
            row.push(fmt(s.phi_hat, 2));
            row.push(fmt(s.entropy, 2));
            row.push(format!("{:.0}%", 100.0 * s.selection_rate));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let text = format!(
        "reference study: {} replicates of n = {} per scenario; mean fitted shapes\n\n{}",
        replicates,
        spec.n,
        text_table(&header_refs, &table)
    );
    let files = vec![
        (
            "scenarios",
            "reference_scenarios.csv",
            csv_bytes(
                &["scenario", "component", "boosted", "alpha_true", "alpha_hat", "skewness", "kurtosis", "selected", "phi_hat", "entropy"]
                    .map(String::from),
                scenario_rows,
            )
            .map_err(io(ctx))?,
        ),
        (
            "replicates",
            "reference_replicates.csv",
            csv_bytes(
                &["scenario", "replicate", "component", "alpha_true", "alpha_hat", "selected"].map(String::from),
                replicate_rows,
            )
            .map_err(io(ctx))?,
        ),
        ("study", "reference.json", json(&study)?),
    ];
    write_all(ctx, config, files, &text)
}

fn entropy(ctx: &Context, args: &SimulateArgs, config: &RunConfig) -> Result<(), CliError> {
    let components: Vec<usize> = if args.components.is_empty() {
        (3..=13).collect()
    } else {
        args.components.clone()
    };
    if let Some(&c) = components.iter().find(|&&c| c < 2) {
        return Err(CliError::Usage(format!("--components: need at least 2, got {c}")));
    }
    let grid = default_phi_grid();
    if ctx.dry_run {
        print_dry_run(
            "simulate",
            config,
            &[format!("entropy sweep: C in {components:?}, {} phi values", grid.len())],
        );
        return Ok(());
    }
    let rows = run_entropy_sweep(components.iter().copied(), &grid).map_err(|e| CliError::Failed(e.to_string()))?;
    let peaks: Vec<Vec<String>> = rows
        .iter()
        .filter(|r| r.argmax)
        .map(|r| vec![r.components.to_string(), fmt(r.phi, 2), fmt(r.entropy, 4)])
        .collect();
    let text = format!(
        "entropy of the symmetric Dirichlet alpha_c = phi / C; maximum over the phi grid\n\n{}",
        text_table(&["C", "phi", "entropy"], &peaks)
    );
    let csv = csv_bytes(
        &["components", "phi", "entropy", "argmax"].map(String::from),
        rows.iter()
            .map(|r| vec![r.components.to_string(), float(r.phi), float(r.entropy), r.argmax.to_string()]),
    )
    .map_err(io(ctx))?;
    write_all(ctx, config, vec![("sweep", "entropy.csv", csv)], &text)
}

fn path_name(path: GradientPath) -> &'static str {
    match path {
        GradientPath::Vectorized => "vectorized",
        GradientPath::PerObservation => "per-observation",
    }
}

fn regression(ctx: &Context, args: &SimulateArgs, config: &RunConfig, replicates: usize) -> Result<(), CliError> {
    let phis = if args.phi.is_empty() { DEFAULT_PHI.to_vec() } else { args.phi.clone() };
    let ns = if args.n.is_empty() { DEFAULT_N.to_vec() } else { args.n.clone() };
    let paths: Vec<GradientPath> = if args.path.is_empty() {
        vec![config.gradient_path]
    } else {
        args.path
            .iter()
            .map(|p| match p {
                PathArg::Vectorized => GradientPath::Vectorized,
                PathArg::PerObservation => GradientPath::PerObservation,
            })
            .collect()
    };
    let mut specs = Vec::new();
    for &phi in &phis {
        for &n in &ns {
            for &path in &paths {
                let mut spec = ScenarioSpec::regression(phi, n, replicates, config.seed());
                spec.sampler = config.sampler.clone();
                spec.gradient_path = path;
                spec.validate().map_err(invalid)?;
                specs.push(spec);
            }
        }
    }
    if ctx.dry_run {
        print_dry_run(
            "simulate",
            config,
            &[format!(
                "regression study: phi {phis:?} x n {ns:?} x {} paths, {replicates} replicates each",
                paths.len()
            )],
        );
        return Ok(());
    }
    let mut studies: Vec<RegressionStudy> = Vec::with_capacity(specs.len());
    for spec in &specs {
        log::info!("phi = {}, n = {}, {}", spec.phi, spec.n, path_name(spec.gradient_path));
        studies.push(run_regression_sim(spec).map_err(|e| {
            CliError::Failed(format!("phi = {}, n = {}: {e}", spec.phi, spec.n))
        })?);
    }

    let summary_header = [
        "phi",
        "n",
        "path",
        "replicates",
        "failures",
        "coverage_pooled",
        "coverage_averaged",
        "rmse_percent_pooled",
        "rmse_percent_averaged",
        "rmse_draws_percent_averaged",
        "aitchison",
        "predictive_coverage",
        "predictive_rmse_percent",
        "kl",
        "max_rhat",
        "mean_divergence_rate",
    ]
    .map(String::from);
    let summary_rows = studies.iter().map(|s| {
        let s = &s.summary;
        vec![
            float(s.phi),
            s.n.to_string(),
            path_name(s.gradient_path).to_string(),
            s.replicates.to_string(),
            s.failures.to_string(),
            float(s.parameter_coverage_pooled),
            float(s.parameter_coverage_averaged),
            float(s.parameter_rmse_percent_pooled),
            float(s.parameter_rmse_percent_averaged),
            float(s.parameter_rmse_draws_percent_averaged),
            float(s.aitchison),
            float(s.predictive_coverage),
            float(s.predictive_rmse_percent),
            float(s.kl),
            float(s.max_rhat),
            float(s.mean_divergence_rate),
        ]
    });
    let replicate_rows = studies.iter().flat_map(|study| {
        let s = &study.summary;
        study.replicates.iter().map(move |r| {
            vec![
                float(s.phi),
                s.n.to_string(),
                path_name(s.gradient_path).to_string(),
                (r.replicate + 1).to_string(),
                float(r.parameter_coverage),
                float(r.parameter_rmse_percent),
                float(r.aitchison),
                float(r.predictive_coverage),
                float(r.predictive_rmse_percent),
                float(r.kl),
                float(r.max_rhat),
                float(r.divergence_rate),
            ]
        })
    });
    let table: Vec<Vec<String>> = studies
        .iter()
        .map(|s| {
            let s = &s.summary;
            vec![
                fmt(s.phi, 0),
                s.n.to_string(),
                path_name(s.gradient_path).to_string(),
                fmt(s.parameter_coverage_averaged, 3),
                fmt(s.parameter_rmse_percent_averaged, 3),
                fmt(s.aitchison, 3),
                fmt(s.predictive_coverage, 3),
                fmt(s.predictive_rmse_percent, 3),
                fmt(s.kl, 3),
            ]
        })
        .collect();
    let text = format!(
        "regression study: {replicates} replicates per cell\n\n{}",
        text_table(
            &["phi", "N", "path", "Cover 95%", "rMSE %", "aDist^P", "Cover^P 95%", "rMSE^P %", "KL^P"],
            &table
        )
    );
    let summaries: Vec<_> = studies.iter().map(|s| &s.summary).collect();
    let files = vec![
        ("summary", "regression_summary.csv", csv_bytes(&summary_header, summary_rows).map_err(io(ctx))?),
        (
            "replicates",
            "regression_replicates.csv",
            csv_bytes(
                &[
                    "phi",
                    "n",
                    "path",
                    "replicate",
                    "coverage",
                    "rmse_percent",
                    "aitchison",
                    "predictive_coverage",
                    "predictive_rmse_percent",
                    "kl",
                    "max_rhat",
                    "divergence_rate",
                ]
                .map(String::from),
                replicate_rows,
            )
            .map_err(io(ctx))?,
        ),
        ("study", "regression.json", json(&summaries)?),
    ];
    write_all(ctx, config, files, &text)
}
