use std::fs;

use codareg::SamplerConfig;
use serde_json::Value;

use super::{assess, fmt, print_dry_run, Context, Convergence, FittedModel, DRAWS_FILE, REPORT_FILE};
use crate::output::{read_draws_csv, text_table, FileDigest, RunDir};
use crate::{CliError, DiagnoseArgs};

pub(super) fn run(ctx: &Context, args: &DiagnoseArgs) -> Result<(), CliError> {
    let config = ctx.resolve(SamplerConfig::default())?;
    let model = FittedModel::load(&args.fit)?;
    let draws_path = args.fit.join(DRAWS_FILE);
    let report_path = args.fit.join(REPORT_FILE);
    let draws = read_draws_csv(&draws_path).map_err(|e| CliError::Ingest {
        path: draws_path.clone(),
        source: crate::IngestError::Malformed(e.to_string()),
    })?;
    if draws.dim() != model.spec.layout().dim() {
        return Err(CliError::Usage(format!(
            "{}: {} parameters, the model has {}",
            draws_path.display(),
            draws.dim(),
            model.spec.layout().dim()
        )));
    }
    let report: Option<Value> = match fs::read_to_string(&report_path) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", report_path.display())))?),
        Err(_) => None,
    };
    if ctx.dry_run {
        print_dry_run(
            "diagnose",
            &config,
            &[format!("{}: {} chains of {} draws", draws_path.display(), draws.chains, draws.samples)],
        );
        return Ok(());
    }

    // per-iteration divergence flags live in the sampler sidecar, not in
    // the draws file; report.json carries the counts
    let mut convergence = assess(&draws);
    if let Some(saved) = report.as_ref().and_then(|r| r.get("convergence")) {
        let count = |key: &str| saved.get(key).and_then(Value::as_f64);
        if let (Some(n), Some(rate)) = (count("divergences"), count("divergence_rate")) {
            convergence.divergences = n as usize;
            convergence.divergence_rate = rate;
            if rate > codareg::metrics::SUSPECT_DIVERGENCE_RATE {
                convergence.problems.push(format!("{n} divergent transitions ({:.2}% of draws)", 100.0 * rate));
            }
            if let Some(w) = saved.get("warmup_divergences").and_then(Value::as_array) {
                convergence.warmup_divergences = w.iter().filter_map(Value::as_u64).map(|v| v as usize).collect();
            }
            convergence.passed = convergence.problems.is_empty();
        }
    }
    let metrics = report.as_ref().and_then(|r| r.get("metrics")).filter(|m| !m.is_null());
    let get = |key: &str| metrics.and_then(|m| m.get(key)).and_then(Value::as_f64).unwrap_or(f64::NAN);
    let row = metrics.map(|_| {
        vec![
            "all".to_string(),
            "-".into(),
            "-".into(),
            fmt(get("aitchison_mean"), 3),
            fmt(get("coverage_95"), 3),
            fmt(get("rmse_percent_predictive"), 3),
            fmt(get("kl_mean"), 3),
        ]
    });
    let criteria = metrics.map(|_| (get("waic"), get("p_d"), get("dic")));

    let mut text = format!(
        "{} observations, {} components, {} groups, {} parameters\n\n",
        model.observations,
        model.components.len(),
        model.groups.len(),
        draws.dim()
    );
    text.push_str(&convergence_text(&convergence));
    text.push('\n');
    text.push_str(&metrics_table(row, criteria));
    print!("{text}");

    if ctx.out_given {
        let mut dir = RunDir::create(&ctx.out).map_err(CliError::io(&ctx.out))?;
        dir.write("diagnose", "diagnose.txt", text.as_bytes()).map_err(CliError::io(&ctx.out))?;
        let mut inputs = vec![FileDigest::of("draws", &draws_path, &draws_path.display().to_string()).map_err(CliError::io(&draws_path))?];
        if report.is_some() {
            inputs.push(FileDigest::of("report", &report_path, &report_path.display().to_string()).map_err(CliError::io(&report_path))?);
        }
        let mut manifest = ctx.manifest("diagnose", &config, inputs);
        if !convergence.passed {
            manifest.status = format!("convergence: {}", convergence.problems.join("; "));
        }
        dir.finish(manifest).map_err(CliError::io(&ctx.out))?;
    }
    if convergence.passed {
        Ok(())
    } else {
        Err(CliError::Convergence(convergence.problems.join("; ")))
    }
}

pub(super) fn convergence_text(c: &Convergence) -> String {
    let mut text = format!(
        "convergence: {}\n  chains {}, draws per chain {}\n  divergences {} ({:.2}%), during warmup {}\n",
        if c.passed { "ok" } else { "FAILED" },
        c.chains,
        c.samples,
        c.divergences,
        100.0 * c.divergence_rate,
        c.warmup_divergences.iter().sum::<usize>()
    );
    if let (Some(r), Some(e)) = (c.max_rhat, c.min_ess) {
        text.push_str(&format!("  max R-hat {}, min ESS {}\n", fmt(r, 3), fmt(e, 0)));
    }
    for p in &c.problems {
        text.push_str(&format!("  {p}\n"));
    }
    text
}

/// Fitted-parameter and prediction columns followed by the information
/// criteria. Parameter columns need true values and read `-` for real data.
pub(super) fn metrics_table(row: Option<Vec<String>>, criteria: Option<(f64, f64, f64)>) -> String {
    let Some(row) = row else {
        return "fit metrics unavailable\n".into();
    };
    let mut text = text_table(
        &["data", "Cover 95%", "rMSE %", "aDist^P", "Cover^P 95%", "rMSE^P %", "KL^P"],
        &[row],
    );
    if let Some((waic, p_d, dic)) = criteria {
        text.push('\n');
        text.push_str(&text_table(
            &["data", "WAIC", "pD", "DIC"],
            &[vec!["all".into(), fmt(waic, 3), fmt(p_d, 3), fmt(dic, 3)]],
        ));
    }
    text
}
