use codareg::dirichlet::{sample_gamma, Composition, Dirichlet};
use codareg::reference::empirical_shape;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF, Continuous};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn sample_moments_converge() {
    let d = Dirichlet::new(vec![2.0, 3.0, 5.0]).unwrap();
    let n = 50_000;
    let draws = d.sample(n, &mut rng(11)).unwrap();
    let m = d.moments();
    for c in 0..3 {
        let mean = draws.iter().map(|y| y.parts()[c]).sum::<f64>() / n as f64;
        let se = (m.variance[c] / n as f64).sqrt();
        assert!((mean - m.mean[c]).abs() < 3.0 * se, "component {c}: {mean} vs {}", m.mean[c]);
        let var = draws.iter().map(|y| (y.parts()[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // variance of the sample variance via the fourth central moment is
        // awkward here; 3% covers several standard errors at this n
        assert!((var / m.variance[c] - 1.0).abs() < 0.03, "component {c}: {var} vs {}", m.variance[c]);
    }
}

#[test]
fn two_part_marginal_is_beta() {
    // Kolmogorov-Smirnov against the Beta(2, 5) CDF
    let d = Dirichlet::new(vec![2.0, 5.0]).unwrap();
    let n = 4000;
    let mut xs: Vec<f64> = d.sample(n, &mut rng(5)).unwrap().iter().map(|y| y.parts()[0]).collect();
    xs.sort_by(f64::total_cmp);
    let beta = Beta::new(2.0, 5.0).unwrap();
    let stat = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = beta.cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // critical value at significance 0.001
    assert!(stat < 1.95 / (n as f64).sqrt(), "KS statistic {stat}");
}

#[test]
fn two_part_density_matches_beta() {
    let mut r = rng(3);
    for _ in 0..200 {
        let a = 0.2 + 10.0 * rand::Rng::random::<f64>(&mut r);
        let b = 0.2 + 10.0 * rand::Rng::random::<f64>(&mut r);
        let y = 0.001 + 0.998 * rand::Rng::random::<f64>(&mut r);
        let d = Dirichlet::new(vec![a, b]).unwrap();
        let comp = Composition::new(vec![y, 1.0 - y]).unwrap();
        let oracle = Beta::new(a, b).unwrap().ln_pdf(y);
        let ours = d.log_density(&comp).unwrap();
        assert!((ours - oracle).abs() < 1e-10, "a={a} b={b} y={y}: {ours} vs {oracle}");
    }
}

#[test]
fn two_part_density_integrates_to_one() {
    for alpha in [[1.0, 1.0], [2.0, 5.0], [0.5, 0.5]] {
        let d = Dirichlet::new(alpha.to_vec()).unwrap();
        let integral = integrate_two_part(&d);
        assert!((integral - 1.0).abs() < 1e-6, "{alpha:?}: {integral}");
    }
}

/// Tanh-sinh quadrature of exp(log_density) over (0, 1); handles the
/// integrable endpoint singularities at shapes below one.
fn integrate_two_part(d: &Dirichlet<f64>) -> f64 {
    let h = 1.0 / 64.0;
    let mut total = 0.0;
    for k in -(6 * 64)..=(6 * 64) {
        let t = k as f64 * h;
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let x = 0.5 * (1.0 + s.tanh());
        let w = 0.5 * std::f64::consts::FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
        if x <= 0.0 || x >= 1.0 || w == 0.0 {
            continue;
        }
        // avoid 1 - x rounding to 1 near the left endpoint
        let one_minus = 0.5 * (1.0 - s.tanh());
        let parts = vec![x, one_minus];
        let Ok(y) = Composition::closure(parts) else { continue };
        total += w * h * d.log_density(&y).unwrap().exp();
    }
    total
}

#[test]
fn seven_part_small_samples_stay_in_simplex() {
    let alpha: Vec<f64> = (0..7).map(|i| 1.1 + 0.8 * i as f64 / 6.0).collect();
    let d = Dirichlet::new(alpha).unwrap();
    for y in d.sample(100, &mut rng(9)).unwrap() {
        assert!(Composition::new(y.parts().to_vec()).is_ok());
        assert!(y.parts().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn gamma_column_skewness() {
    let d = Dirichlet::new(vec![4.59, 1.88, 1.87, 1.13, 1.26, 1.36, 1.65]).unwrap();
    let mut r = rng(17);
    let sample = d.sample(10_000, &mut r).unwrap();
    let w = d.gamma_components(&sample, &mut r).unwrap();
    let col: Vec<f64> = w.iter().map(|row| row[0]).collect();
    let (skew, _) = empirical_shape(&col);
    assert!((skew - 2.0 / 4.59f64.sqrt()).abs() < 0.15, "skewness {skew}");
}

#[test]
fn gamma_columns_have_gamma_moments() {
    let alpha = vec![4.59, 1.88, 1.13];
    let d = Dirichlet::new(alpha.clone()).unwrap();
    let mut r = rng(23);
    let n = 10_000;
    let sample = d.sample(n, &mut r).unwrap();
    let w = d.gamma_components(&sample, &mut r).unwrap();
    for (c, &a) in alpha.iter().enumerate() {
        let col: Vec<f64> = w.iter().map(|row| row[c]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Gamma(a, 1): mean a, variance a, var of sample variance ≈ (μ4 − a²)/n with μ4 = 3a² + 6a
        assert!((mean - a).abs() < 4.0 * (a / n as f64).sqrt(), "mean {c}: {mean}");
        let var_se = ((2.0 * a * a + 6.0 * a) / n as f64).sqrt();
        assert!((var - a).abs() < 4.0 * var_se, "variance {c}: {var}");
        let (skew, kurt) = empirical_shape(&col);
        assert!((skew - 2.0 / a.sqrt()).abs() < 0.25, "skew {c}: {skew}");
        assert!((kurt - (3.0 + 6.0 / a)).abs() < 1.5, "kurtosis {c}: {kurt}");
    }
}

#[test]
fn gamma_sampler_mean_and_variance() {
    let mut r = rng(31);
    for shape in [0.3, 1.0, 1.13, 4.59, 40.0] {
        let n = 40_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_gamma(shape, &mut r)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - shape).abs() < 4.0 * (shape / n as f64).sqrt(), "shape {shape}: mean {mean}");
        let var_se = ((2.0 * shape * shape + 6.0 * shape) / n as f64).sqrt();
        assert!((var - shape).abs() < 4.0 * var_se, "shape {shape}: var {var}");
    }
}

#[test]
fn entropy_of_flat_dirichlet() {
    for c in 3..=13usize {
        let d = Dirichlet::new(vec![1.0; c]).unwrap();
        let expected = -statrs::function::gamma::ln_gamma(c as f64);
        assert!((d.entropy().unwrap() - expected).abs() < 1e-12, "C={c}");
    }
}

proptest! {
    #[test]
    fn mean_precision_round_trip(alpha in prop::collection::vec(0.05f64..50.0, 2..10)) {
        let d = Dirichlet::new(alpha.clone()).unwrap();
        let (mean, phi) = d.to_mean_precision();
        let back = Dirichlet::from_mean_precision(&Composition::new(mean).unwrap(), phi).unwrap();
        for (a, b) in alpha.iter().zip(back.alpha()) {
            prop_assert!((a - b).abs() <= 2.0 * f64::EPSILON * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn covariance_rows_sum_to_zero(alpha in prop::collection::vec(0.05f64..50.0, 2..10)) {
        let m = Dirichlet::new(alpha).unwrap().moments();
        for row in &m.covariance {
            let s: f64 = row.iter().sum();
            let scale: f64 = row.iter().map(|v| v.abs()).sum();
            prop_assert!(s.abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn draws_are_compositions(alpha in prop::collection::vec(0.05f64..20.0, 2..8), seed in any::<u64>()) {
        let d = Dirichlet::new(alpha).unwrap();
        for y in d.sample(20, &mut rng(seed)).unwrap() {
            let s: f64 = y.parts().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(y.parts().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn gamma_components_reconstruct(alpha in prop::collection::vec(0.2f64..20.0, 2..8), seed in any::<u64>()) {
        let d = Dirichlet::new(alpha).unwrap();
        let mut r = rng(seed);
        let sample = d.sample(20, &mut r).unwrap();
        let w = d.gamma_components(&sample, &mut r).unwrap();
        for (y, row) in sample.iter().zip(&w) {
            let s: f64 = row.iter().sum();
            for (p, v) in y.parts().iter().zip(row) {
                prop_assert!((v / s - p).abs() < 1e-12);
            }
        }
    }
}
