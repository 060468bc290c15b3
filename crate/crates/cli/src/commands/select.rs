use codareg::SamplerConfig;
use serde::Serialize;

use super::{fmt, load_dataset, print_dry_run, reference_record, shape_fit, Context, SUMMARY_FILE};
use crate::config::ReferenceMode;
use crate::output::{csv_bytes, float, text_table, ReferenceRecord, RunDir};
use crate::{CliError, SelectArgs};

#[derive(Serialize)]
struct ComponentRow<'a> {
    component: &'a str,
    alpha_hat: f64,
    skewness: f64,
    kurtosis: f64,
}

#[derive(Serialize)]
struct ShapeOutput<'a> {
    observations: usize,
    components: Vec<ComponentRow<'a>>,
    phi_hat: f64,
    entropy_hat: f64,
    log_likelihood: f64,
    iterations: usize,
    gradient_norm: f64,
    reference: &'a ReferenceRecord,
}

pub(super) fn run(ctx: &Context, args: &SelectArgs) -> Result<(), CliError> {
    let mut config = ctx.resolve(SamplerConfig::default())?;
    if let Some(r) = &args.reference {
        config.reference = ReferenceMode::parse(r);
    }
    let (data, digest) = load_dataset(&args.input, &config)?;
    if let ReferenceMode::Component(name) = &config.reference {
        if !data.components.contains(name) {
            return Err(CliError::Config(format!("reference `{name}` is not a component")));
        }
    }
    if ctx.dry_run {
        print_dry_run(
            "select-reference",
            &config,
            &[format!(
                "{}: {} rows, components {}",
                args.input.display(),
                data.table.len(),
                data.components.join(",")
            )],
        );
        return Ok(());
    }

    let shapes = shape_fit(&data)?;
    let reference = reference_record(&data, &config.reference, Some(&shapes))?;
    let rows: Vec<ComponentRow> = data
        .components
        .iter()
        .zip(&shapes.report.components)
        .map(|(name, s)| ComponentRow {
            component: name,
            alpha_hat: s.alpha_hat,
            skewness: s.skewness,
            kurtosis: s.kurtosis,
        })
        .collect();

    let mut dir = RunDir::create(&ctx.out).map_err(CliError::io(&ctx.out))?;
    let io = CliError::io(&ctx.out);
    let csv = csv_bytes(
        &["component", "alpha_hat", "skewness", "kurtosis", "selected"].map(String::from),
        rows.iter().enumerate().map(|(i, r)| {
            vec![
                r.component.to_string(),
                float(r.alpha_hat),
                float(r.skewness),
                float(r.kurtosis),
                (i == reference.index).to_string(),
            ]
        }),
    );
    let text = summary(&rows, &shapes.report.phi_hat, &reference);
    let output = ShapeOutput {
        observations: data.table.len(),
        components: rows,
        phi_hat: shapes.report.phi_hat,
        entropy_hat: shapes.report.entropy_hat,
        log_likelihood: shapes.fit.log_likelihood,
        iterations: shapes.fit.iterations,
        gradient_norm: shapes.fit.gradient_norm,
        reference: &reference,
    };
    let result = csv
        .and_then(|csv| dir.write("shape", "shape.csv", &csv))
        .and_then(|_| dir.write_json("shape", "shape.json", &output))
        .and_then(|_| dir.write("summary", SUMMARY_FILE, text.as_bytes()));
    result.map_err(CliError::io(&ctx.out))?;
    print!("{text}");

    let mut manifest = ctx.manifest("select-reference", &config, vec![digest]);
    manifest.reference = Some(reference);
    dir.finish(manifest).map_err(io)
}

fn summary(rows: &[ComponentRow], phi_hat: &f64, reference: &ReferenceRecord) -> String {
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.component.to_string(),
                fmt(r.alpha_hat, 4),
                fmt(r.skewness, 4),
                fmt(r.kurtosis, 4),
                if i == reference.index { "*".into() } else { String::new() },
            ]
        })
        .collect();
    let mut text = text_table(&["component", "alpha_hat", "skewness", "kurtosis", "ref"], &table);
    text.push_str(&format!("\nphi_hat {}\n", fmt(*phi_hat, 4)));
    text.push_str(&format!("reference {} ({})\n", reference.component, reference.mode));
    if let Some(r) = reference.recommended.as_ref().filter(|r| **r != reference.component) {
        text.push_str(&format!("recommended {r}\n"));
    }
    if let Some(w) = &reference.warning {
        text.push_str(&format!("warning: {w}\n"));
    }
    text
}
