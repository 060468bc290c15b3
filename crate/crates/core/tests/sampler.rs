use codareg::dirichlet::{Composition, Dirichlet};
use codareg::sampler::{effective_sample_size, rhat};
use codareg::sampler::{nuts_sample, LogDensity, SamplerConfig, TargetError};
use codareg::special::digamma;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

struct Gaussian {
    dim: usize,
    /// Precision matrix, row-major.
    precision: Vec<f64>,
}

impl Gaussian {
    fn standard(dim: usize) -> Self {
        let mut precision = vec![0.0; dim * dim];
        for i in 0..dim {
            precision[i * dim + i] = 1.0;
        }
        Self { dim, precision }
    }

    fn correlated(rho: f64) -> Self {
        let det = 1.0 - rho * rho;
        Self {
            dim: 2,
            precision: vec![1.0 / det, -rho / det, -rho / det, 1.0 / det],
        }
    }
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        let mut lp = 0.0;
        for i in 0..self.dim {
            let row = &self.precision[i * self.dim..(i + 1) * self.dim];
            grad[i] = -row.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
            lp += 0.5 * q[i] * grad[i];
        }
        Ok(lp)
    }
}

fn names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

fn light(seed: u64) -> SamplerConfig {
    SamplerConfig::light().with_seed(seed)
}

#[test]
fn correlated_normal_correlation() {
    let draws = nuts_sample(&Gaussian::correlated(0.8), &light(3), &[0.0, 0.0], names(2)).unwrap();
    let pts: Vec<&[f64]> = draws.iter().collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let sxy = pts.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>();
    let sxx = pts.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>();
    let syy = pts.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>();
    let r = sxy / (sxx * syy).sqrt();
    assert!((r - 0.8).abs() < 0.05, "correlation {r}");
}

#[test]
fn one_dimensional_normal_passes_ks() {
    let draws = nuts_sample(&Gaussian::standard(1), &light(4), &[0.0], names(1)).unwrap();
    let mut xs: Vec<f64> = draws.iter().map(|p| p[0]).collect();
    assert_eq!(xs.len(), 4000);
    xs.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.95 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn standard_normal_has_no_divergences_at_defaults() {
    let config = SamplerConfig::default();
    let draws = nuts_sample(&Gaussian::standard(5), &config, &[0.0; 5], names(5)).unwrap();
    assert_eq!(draws.divergences(), 0);
}

#[test]
fn ten_dimensional_normal_moments_and_diagnostics() {
    let draws = nuts_sample(&Gaussian::standard(10), &light(5), &[0.0; 10], names(10)).unwrap();
    let m = draws.total() as f64;
    for (i, name) in draws.names.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|p| p[i]).collect();
        let mean = xs.iter().sum::<f64>() / m;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!(mean.abs() < 0.05, "{name}: mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "{name}: variance {var}");
        let r = rhat(&draws, name).unwrap();
        assert!((0.99..=1.02).contains(&r), "{name}: rhat {r}");
        let ess = effective_sample_size(&draws, name).unwrap();
        assert!(ess >= 0.5 * m, "{name}: ess {ess}");
    }
    assert_eq!(draws.divergences(), 0);
}

/// Dirichlet likelihood in u = ln φ with the mean held fixed and a flat prior on u.
struct LogPrecision {
    mean: Vec<f64>,
    data: Vec<Composition<f64>>,
    /// Σ_i Σ_c μ_c ln y_ic
    weighted_log: f64,
}

impl LogPrecision {
    fn new(mean: Vec<f64>, data: Vec<Composition<f64>>) -> Self {
        let weighted_log = data
            .iter()
            .map(|y| y.parts().iter().zip(&mean).map(|(p, m)| m * p.ln()).sum::<f64>())
            .sum();
        Self {
            mean,
            data,
            weighted_log,
        }
    }

    fn log_likelihood(&self, u: f64) -> f64 {
        let d = Dirichlet::new(self.mean.iter().map(|m| m * u.exp()).collect()).unwrap();
        self.data.iter().map(|y| d.log_density(y).unwrap()).sum()
    }
}

impl LogDensity for LogPrecision {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        let phi = q[0].exp();
        if !(phi.is_finite() && phi > 1e-8 && phi < 1e8) {
            return Err(TargetError(format!("precision {phi} out of range")));
        }
        let n = self.data.len() as f64;
        let psi = |x: f64| digamma(x).map_err(|e| TargetError(e.to_string()));
        let mut inner = psi(phi)?;
        for &m in &self.mean {
            inner -= m * psi(m * phi)?;
        }
        grad[0] = phi * (n * inner + self.weighted_log);
        Ok(self.log_likelihood(q[0]))
    }
}

#[test]
fn log_precision_posterior_mode_matches_grid_mle() {
    let mean = vec![0.2, 0.3, 0.5];
    let truth = Dirichlet::new(mean.iter().map(|m| m * 5.0).collect()).unwrap();
    let data = truth.sample(50, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let target = LogPrecision::new(mean, data);

    let grid: Vec<f64> = (0..=20_000).map(|k| 0.5 + k as f64 * 0.001).collect();
    let mle = *grid
        .iter()
        .max_by(|a, b| target.log_likelihood(a.ln()).total_cmp(&target.log_likelihood(b.ln())))
        .unwrap();

    let config = SamplerConfig {
        samples: 2000,
        ..light(7)
    };
    let draws = nuts_sample(&target, &config, &[0.0], vec!["log_phi".into()]).unwrap();
    let us: Vec<f64> = draws.iter().map(|p| p[0]).collect();
    // Gaussian kernel density mode on the log scale
    let n = us.len() as f64;
    let mean_u = us.iter().sum::<f64>() / n;
    let sd = (us.iter().map(|u| (u - mean_u).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bandwidth = 1.06 * sd * n.powf(-0.2);
    let density = |x: f64| us.iter().map(|u| (-0.5 * ((x - u) / bandwidth).powi(2)).exp()).sum::<f64>();
    let mode = (0..2000)
        .map(|k| mean_u - 3.0 * sd + 6.0 * sd * k as f64 / 1999.0)
        .max_by(|a, b| density(*a).total_cmp(&density(*b)))
        .unwrap();
    assert!((mode.exp() - mle).abs() < 0.5, "posterior mode {} vs MLE {mle}", mode.exp());
}
