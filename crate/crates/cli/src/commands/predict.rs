use codareg::model::predict;
use codareg::SamplerConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fit::PREDICTIVE_STREAM;
use super::{print_dry_run, thin, Context, FittedModel, DRAWS_FILE, MODEL_FILE};
use crate::ingest::ingest_new_data;
use crate::output::{csv_bytes, float, read_draws_csv, FileDigest, RunDir};
use crate::{CliError, IngestError, PredictArgs};

pub(super) fn run(ctx: &Context, args: &PredictArgs) -> Result<(), CliError> {
    let config = ctx.resolve(SamplerConfig::default())?;
    let model = FittedModel::load(&args.fit)?;
    let new = ingest_new_data(
        &args.input,
        &model.mean_covariates,
        &model.precision_covariates,
        model.group.as_deref(),
        &model.groups,
    )
    .map_err(|source| CliError::Ingest {
        path: args.input.clone(),
        source,
    })?;
    let draws_path = args.fit.join(DRAWS_FILE);
    let draws = read_draws_csv(&draws_path).map_err(|e| CliError::Ingest {
        path: draws_path.clone(),
        source: IngestError::Malformed(e.to_string()),
    })?;
    if ctx.dry_run {
        print_dry_run(
            "predict",
            &config,
            &[format!("{}: {} rows; {} posterior draws", args.input.display(), new.x.len(), draws.total())],
        );
        return Ok(());
    }

    let thinned = thin(&draws, config.predictive_draws);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    rng.set_stream(PREDICTIVE_STREAM);
    let prediction = predict(&model.spec, &thinned, &new.x, &new.z, &new.groups, &mut rng)
        .map_err(|e| CliError::Failed(format!("prediction failed: {e}")))?;

    let header = ["row", "group", "component", "expected", "mean", "q025", "q05", "q95", "q975", "phi"].map(String::from);
    let mut rows = Vec::new();
    for (i, s) in prediction.summaries.iter().enumerate() {
        for (k, name) in model.components.iter().enumerate() {
            rows.push(vec![
                (i + 1).to_string(),
                model.groups[new.groups[i]].clone(),
                name.clone(),
                float(prediction.expected[i].parts()[k]),
                float(s.mean[k]),
                float(s.q025[k]),
                float(s.q05[k]),
                float(s.q95[k]),
                float(s.q975[k]),
                float(prediction.precision[i]),
            ]);
        }
    }
    let mut dir = RunDir::create(&ctx.out).map_err(CliError::io(&ctx.out))?;
    csv_bytes(&header, rows)
        .and_then(|bytes| dir.write("predictions", "predictions.csv", &bytes))
        .map_err(CliError::io(&ctx.out))?;
    println!(
        "{} rows predicted from {} draws; wrote {}",
        new.x.len(),
        thinned.total(),
        ctx.out.join("predictions.csv").display()
    );

    let digest = |role: &str, path: &std::path::Path| FileDigest::of(role, path, &path.display().to_string()).map_err(CliError::io(path));
    let inputs = vec![
        digest("data", &args.input)?,
        digest("model", &args.fit.join(MODEL_FILE))?,
        digest("draws", &draws_path)?,
    ];
    dir.finish(ctx.manifest("predict", &config, inputs)).map_err(CliError::io(&ctx.out))
}
