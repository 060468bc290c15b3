//! Plain-text `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use codareg::model::{Dispersion, PriorScales};
use codareg::{GradientPath, SamplerConfig};
use thiserror::Error;

pub const DEFAULT_SEED: u64 = 1;
/// Posterior draws used for posterior predictive summaries, thinned evenly.
pub const DEFAULT_PREDICTIVE_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` set twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
}

const KEYS: &[&str] = &[
    "components",
    "mean_covariates",
    "precision_covariates",
    "group",
    "zero_adjust",
    "reference",
    "prior_scale_beta",
    "prior_scale_theta",
    "hyper_scale",
    "dispersion",
    "gradient_path",
    "chains",
    "warmup",
    "samples",
    "seed",
    "stream",
    "target_accept",
    "max_tree_depth",
    "init_jitter",
    "predictive_draws",
];

/// Reads `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: content.to_string(),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate { line, key: key.to_string() });
        }
    }
    Ok(entries)
}

/// `auto` runs reference selection; anything else names a component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReferenceMode {
    Auto,
    Component(String),
}

impl ReferenceMode {
    pub fn parse(value: &str) -> Self {
        if value.eq_ignore_ascii_case("auto") {
            Self::Auto
        } else {
            Self::Component(value.to_string())
        }
    }
}

impl std::fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Component(name) => f.write_str(name),
        }
    }
}

/// Which CSV columns feed the model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataConfig {
    /// Empty means every column not used as a covariate or group.
    pub components: Vec<String>,
    /// Intercept excluded; it is always added.
    pub mean_covariates: Vec<String>,
    pub precision_covariates: Vec<String>,
    pub group: Option<String>,
    /// Replace zeros with `(y(N-1) + 1/C) / N` instead of rejecting them.
    pub zero_adjust: bool,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub reference: ReferenceMode,
    pub priors: PriorScales,
    pub dispersion: Dispersion,
    pub gradient_path: GradientPath,
    pub sampler: SamplerConfig,
    pub predictive_draws: usize,
}

impl RunConfig {
    /// Applies `entries` over the defaults. `sampler` supplies the sampler
    /// defaults, which differ between fitting and simulation.
    pub fn resolve(entries: &BTreeMap<String, String>, sampler: SamplerConfig) -> Result<Self, ConfigError> {
        let mut config = Self {
            data: DataConfig::default(),
            reference: ReferenceMode::Auto,
            priors: PriorScales::default(),
            dispersion: Dispersion::Shared,
            gradient_path: GradientPath::default(),
            sampler,
            predictive_draws: DEFAULT_PREDICTIVE_DRAWS,
        };
        config.sampler.seed = DEFAULT_SEED;
        for (key, value) in entries {
            let k = key.as_str();
            match k {
                "components" => config.data.components = list(value),
                "mean_covariates" => config.data.mean_covariates = list(value),
                "precision_covariates" => config.data.precision_covariates = list(value),
                "group" => config.data.group = (!value.is_empty()).then(|| value.clone()),
                "zero_adjust" => config.data.zero_adjust = number(k, value)?,
                "reference" => config.reference = ReferenceMode::parse(value),
                "prior_scale_beta" => config.priors.beta = number(k, value)?,
                "prior_scale_theta" => config.priors.theta = number(k, value)?,
                "hyper_scale" => config.priors.hyper = number(k, value)?,
                "dispersion" => {
                    config.dispersion = match value.as_str() {
                        "shared" => Dispersion::Shared,
                        "per-coefficient" => Dispersion::PerCoefficient,
                        _ => return Err(bad(k, "expected `shared` or `per-coefficient`")),
                    }
                }
                "gradient_path" => config.gradient_path = parse_path(value).ok_or_else(|| bad(k, "expected `vectorized` or `per-observation`"))?,
                "chains" => config.sampler.chains = number(k, value)?,
                "warmup" => config.sampler.warmup = number(k, value)?,
                "samples" => config.sampler.samples = number(k, value)?,
                "seed" => config.sampler.seed = number(k, value)?,
                "stream" => config.sampler.stream = number(k, value)?,
                "target_accept" => config.sampler.target_accept = number(k, value)?,
                "max_tree_depth" => config.sampler.max_tree_depth = number(k, value)?,
                "init_jitter" => config.sampler.init_jitter = number(k, value)?,
                "predictive_draws" => config.predictive_draws = number(k, value)?,
                _ => unreachable!("keys are checked while parsing"),
            }
        }
        if config.predictive_draws == 0 {
            return Err(bad("predictive_draws", "must be at least 1"));
        }
        Ok(config)
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.sampler.seed = seed;
    }

    /// Every key with its resolved value, in key order.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let s = &self.sampler;
        let path = match self.gradient_path {
            GradientPath::Vectorized => "vectorized",
            GradientPath::PerObservation => "per-observation",
        };
        let dispersion = match self.dispersion {
            Dispersion::Shared => "shared",
            Dispersion::PerCoefficient => "per-coefficient",
        };
        [
            ("components", self.data.components.join(",")),
            ("mean_covariates", self.data.mean_covariates.join(",")),
            ("precision_covariates", self.data.precision_covariates.join(",")),
            ("group", self.data.group.clone().unwrap_or_default()),
            ("zero_adjust", self.data.zero_adjust.to_string()),
            ("reference", self.reference.to_string()),
            ("prior_scale_beta", self.priors.beta.to_string()),
            ("prior_scale_theta", self.priors.theta.to_string()),
            ("hyper_scale", self.priors.hyper.to_string()),
            ("dispersion", dispersion.to_string()),
            ("gradient_path", path.to_string()),
            ("chains", s.chains.to_string()),
            ("warmup", s.warmup.to_string()),
            ("samples", s.samples.to_string()),
            ("seed", s.seed.to_string()),
            ("stream", s.stream.to_string()),
            ("target_accept", s.target_accept.to_string()),
            ("max_tree_depth", s.max_tree_depth.to_string()),
            ("init_jitter", s.init_jitter.to_string()),
            ("predictive_draws", self.predictive_draws.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// The resolved configuration in the input file format; feeding it back
    /// through `--config` reproduces the run.
    pub fn to_text(&self) -> String {
        let mut text = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(text, "{key} = {value}");
        }
        text
    }
}

pub fn parse_path(value: &str) -> Option<GradientPath> {
    match value {
        "vectorized" => Some(GradientPath::Vectorized),
        "per-observation" => Some(GradientPath::PerObservation),
        _ => None,
    }
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| bad(key, &format!("`{value}`: {e}")))
}

fn bad(key: &str, message: &str) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let text = "# model\ncomponents = a, b ,c\nreference=b  # by hand\n\nchains = 2\n";
        let entries = parse_entries(text).unwrap();
        let config = RunConfig::resolve(&entries, SamplerConfig::default()).unwrap();
        assert_eq!(config.data.components, ["a", "b", "c"]);
        assert_eq!(config.reference, ReferenceMode::Component("b".into()));
        assert_eq!(config.sampler.chains, 2);
        assert_eq!(config.sampler.warmup, 9000);
        assert_eq!(config.seed(), DEFAULT_SEED);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_entries("chains 2"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_entries("\nchian = 2"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(parse_entries("seed=1\nseed=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        let entries = parse_entries("warmup = lots").unwrap();
        assert!(RunConfig::resolve(&entries, SamplerConfig::default()).is_err());
        let entries = parse_entries("dispersion = some").unwrap();
        assert!(RunConfig::resolve(&entries, SamplerConfig::default()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let entries = parse_entries("components=x,y\ngroup=site\nzero_adjust=true\ngradient_path=per-observation\nseed=99").unwrap();
        let config = RunConfig::resolve(&entries, SamplerConfig::light()).unwrap();
        let again = RunConfig::resolve(&parse_entries(&config.to_text()).unwrap(), SamplerConfig::default()).unwrap();
        assert_eq!(config, again);
    }
}
