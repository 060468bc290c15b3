//! Split R̂ and effective sample size.

use serde::Serialize;
use thiserror::Error;

use super::PosteriorDraws;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticError {
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("need at least {chains} chains of {draws} draws, got {got_chains} of {got_draws}")]
    InsufficientDraws {
        chains: usize,
        draws: usize,
        got_chains: usize,
        got_draws: usize,
    },
    #[error("no draws")]
    Empty,
    #[error("chains or draws of unequal length")]
    Ragged,
}

const MIN_CHAINS: usize = 2;
const MIN_DRAWS: usize = 4;

fn column(draws: &PosteriorDraws, param: &str) -> Result<Vec<Vec<f64>>, DiagnosticError> {
    let index = draws
        .index_of(param)
        .ok_or_else(|| DiagnosticError::UnknownParameter(param.to_string()))?;
    check_shape(draws.chains, draws.samples)?;
    Ok(draws.column(index))
}

fn check_shape(chains: usize, samples: usize) -> Result<(), DiagnosticError> {
    if chains < MIN_CHAINS || samples < MIN_DRAWS {
        return Err(DiagnosticError::InsufficientDraws {
            chains: MIN_CHAINS,
            draws: MIN_DRAWS,
            got_chains: chains,
            got_draws: samples,
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Potential scale reduction computed on chains split in half.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let len = c.len();
            [&c[..n], &c[len - n..]]
        })
        .collect();
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let within = mean(&halves.iter().map(|h| sample_variance(h)).collect::<Vec<_>>());
    let between_over_n = sample_variance(&means);
    if within == 0.0 {
        return if between_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * within + between_over_n;
    (var_plus / within).sqrt()
}

/// Split-chain R̂ of parameter `param`.
pub fn rhat(draws: &PosteriorDraws, param: &str) -> Result<f64, DiagnosticError> {
    Ok(split_rhat(&column(draws, param)?))
}

/// Biased autocovariance at one lag.
fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone positive-pair truncation,
/// capped at 1.5 times the number of draws.
pub fn ess_chains(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return total;
    }

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut s = 1;
    while s + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - acov(s + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov(s + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[s + 1] = rho_even;
            rho[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho[max_s] > 0.0 && max_s + 1 < n {
        rho[max_s + 1] = rho[max_s];
    }
    let mut s = 1;
    while s + 3 <= max_s {
        let pair = rho[s + 1] + rho[s + 2];
        let previous = rho[s - 1] + rho[s];
        if pair > previous {
            rho[s + 1] = previous / 2.0;
            rho[s + 2] = previous / 2.0;
        }
        s += 2;
    }
    let tail = if max_s + 1 < n { rho[max_s + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_s].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    (total / tau).min(1.5 * total)
}

/// Effective sample size of parameter `param` across all chains.
pub fn effective_sample_size(draws: &PosteriorDraws, param: &str) -> Result<f64, DiagnosticError> {
    Ok(ess_chains(&column(draws, param)?))
}

/// Posterior summary of one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Mean, standard deviation, R̂ and ESS of every coordinate.
pub fn summarize(draws: &PosteriorDraws) -> Result<Vec<ParameterSummary>, DiagnosticError> {
    check_shape(draws.chains, draws.samples)?;
    Ok((0..draws.dim())
        .map(|i| {
            let chains = draws.column(i);
            let all: Vec<f64> = chains.iter().flatten().copied().collect();
            ParameterSummary {
                name: draws.names[i].clone(),
                mean: mean(&all),
                sd: sample_variance(&all).sqrt(),
                rhat: split_rhat(&chains),
                ess: ess_chains(&chains),
            }
        })
        .collect())
}
