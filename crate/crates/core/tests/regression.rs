mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::ln_gamma;
use topicmeta::regression::beta::BetaData;
use topicmeta::regression::mcmc::{run_chain, ChainSettings};
use topicmeta::regression::{
    bayes_beta_sample, beta_loglik_grad, beta_mle, posterior_predictive_draw, McmcConfig, PriorScales,
};
use topicmeta::rng::Substream;
use topicmeta::special::logistic;

/// Intercept-only Beta log-likelihood from the sufficient statistics.
fn intercept_loglik(n: f64, s1: f64, s2: f64, xi0: f64, phi: f64) -> f64 {
    let mu = logistic(xi0);
    n * (ln_gamma(phi) - ln_gamma(mu * phi) - ln_gamma((1.0 - mu) * phi)) + (mu * phi - 1.0) * s1
        + ((1.0 - mu) * phi - 1.0) * s2
}

/// Exhaustive search: xi0 on a 1e-3 lattice, phi on a multiplicative lattice.
fn grid_search(y: &[f64], xi_range: (f64, f64), phi_range: (f64, f64), phi_ratio: f64) -> (f64, f64) {
    let n = y.len() as f64;
    let s1: f64 = y.iter().map(|v| v.ln()).sum();
    let s2: f64 = y.iter().map(|v| (1.0 - v).ln()).sum();
    let xis: Vec<f64> = (0..=((xi_range.1 - xi_range.0) / 1e-3).round() as usize).map(|i| xi_range.0 + i as f64 * 1e-3).collect();
    let mut phis = vec![phi_range.0];
    while *phis.last().unwrap() < phi_range.1 {
        phis.push(phis.last().unwrap() * phi_ratio);
    }
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &phi in &phis {
        for &xi in &xis {
            let ll = intercept_loglik(n, s1, s2, xi, phi);
            if ll > best.0 {
                best = (ll, xi, phi);
            }
        }
    }
    (best.1, best.2)
}

#[test]
fn intercept_only_mle_matches_grid_search() {
    let y = [0.2, 0.25, 0.3];
    let x = DMatrix::from_element(3, 1, 1.0);
    let fit = beta_mle(&y, &x).unwrap();
    let (xi_grid, phi_grid) = grid_search(&y, (-3.0, 1.0), (1.0, 1e4), 1.001);
    assert!((fit.xi[0] - xi_grid).abs() <= 1e-3, "{} vs {xi_grid}", fit.xi[0]);
    assert!((fit.phi / phi_grid - 1.0).abs() <= 2e-3, "{} vs {phi_grid}", fit.phi);
}

fn simulate(xi: &[f64], phi: f64, d: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, DMatrix<f64>) {
    let p = xi.len();
    let x = DMatrix::from_fn(d, p, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
    let y = (0..d)
        .map(|i| {
            let mu = logistic((0..p).map(|j| x[(i, j)] * xi[j]).sum());
            Beta::new(mu * phi, (1.0 - mu) * phi).unwrap().sample(rng).clamp(1e-12, 1.0 - 1e-12)
        })
        .collect();
    (y, x)
}

#[test]
fn mle_is_consistent_on_simulated_data() {
    let truth = [-1.0, 0.8];
    let phi = 20.0;
    let mut inside = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, x) = simulate(&truth, phi, 5000, &mut rng);
        let fit = beta_mle(&y, &x).unwrap();
        let se = fit.standard_errors();
        let ok = (0..2).all(|j| (fit.xi[j] - truth[j]).abs() <= 3.0 * se[j]);
        inside += usize::from(ok);
    }
    assert!(inside >= 99, "{inside} of 100 seeds within 3 SE");
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let d = 30;
        let x = DMatrix::from_fn(d, 3, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 4.0 - 2.0 });
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..0.99)).collect();
        let xi: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let phi = rng.random_range(0.5..50.0f64);
        let (_, grad) = beta_loglik_grad(&y, &x, &xi, phi).unwrap();
        let data = BetaData::new(&y, &x).unwrap();
        let mut params = xi.clone();
        params.push(phi.ln());
        let h = 1e-5;
        let fd: Vec<f64> = (0..4)
            .map(|j| {
                let mut a = params.clone();
                let mut b = params.clone();
                a[j] += h;
                b[j] -= h;
                (data.loglik(&a) - data.loglik(&b)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.iter().zip(&fd).map(|(g, f)| (g - f).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        assert!(diff <= 1e-5 * scale.max(1.0), "relative error {}", diff / scale);
    }
}

fn standard_problem(seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate(&[-0.5, 1.0], 15.0, 500, &mut rng)
}

fn mean_of(post: &topicmeta::regression::BetaPosterior) -> Vec<f64> {
    post.posterior_mean()
}

#[test]
fn flat_prior_posterior_mean_agrees_with_mle() {
    let (y, x) = standard_problem(2);
    let fit = beta_mle(&y, &x).unwrap();
    let post = bayes_beta_sample(&y, &x, PriorScales { xi: 1e4, log_phi: 1e4 }, &McmcConfig::default(), &Substream::new(5)).unwrap();
    assert!(post.converged);
    let m = mean_of(&post);
    let se = fit.standard_errors();
    for j in 0..2 {
        assert!((m[j] - fit.xi[j]).abs() < 0.5 * se[j], "xi_{j}: {} vs {} (se {})", m[j], fit.xi[j], se[j]);
    }
}

#[test]
fn tight_prior_pins_coefficients_at_zero() {
    let (y, x) = standard_problem(3);
    let post = bayes_beta_sample(&y, &x, PriorScales { xi: 1e-4, log_phi: 2.5 }, &McmcConfig::default(), &Substream::new(6)).unwrap();
    let m = mean_of(&post);
    for j in 0..2 {
        assert!(m[j].abs() < 1e-3, "xi_{j} = {}", m[j]);
    }
}

#[test]
fn prior_only_target_is_standard_normal_over_many_samples() {
    let cfg = McmcConfig { chains: 4, iterations: 26_000, burn_in: 1000, likelihood: false, ..McmcConfig::default() };
    let x = DMatrix::from_element(10, 1, 1.0);
    let y = vec![0.5; 10];
    let post = bayes_beta_sample(&y, &x, PriorScales { xi: 1.0, log_phi: 1.0 }, &cfg, &Substream::new(9)).unwrap();
    let xs: Vec<f64> = post.pooled().map(|s| s[0]).collect();
    assert_eq!(xs.len(), 100_000);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((0.95..=1.05).contains(&var), "variance {var}");
}

#[test]
fn duplicated_rows_equal_doubled_likelihood() {
    let (y, x) = standard_problem(4);
    let d = y.len();
    let y2: Vec<f64> = y.iter().chain(y.iter()).copied().collect();
    let x2 = DMatrix::from_fn(2 * d, 2, |i, j| x[(i % d, j)]);
    let prior = PriorScales::default();
    let dup = bayes_beta_sample(&y2, &x2, prior, &McmcConfig::default(), &Substream::new(21)).unwrap();

    // independent sampler on prior + 2 * loglik(original)
    let data = BetaData::new(&y, &x).unwrap();
    let log_density = |p: &[f64]| {
        let prior_term = -0.5 * (p[0] / prior.xi).powi(2) - 0.5 * (p[1] / prior.xi).powi(2) - 0.5 * (p[2] / prior.log_phi).powi(2);
        prior_term + 2.0 * data.loglik(p)
    };
    let fit = beta_mle(&y, &x).unwrap();
    let shape = (fit.cov.clone() * 0.5).cholesky().unwrap().l();
    let settings = ChainSettings { iterations: 6000, burn_in: 1000, thin: 1, target_acceptance: 0.234 };
    let mut rng = Substream::new(22).rng();
    let start: Vec<f64> = fit.packed().iter().copied().collect();
    let chain = run_chain(log_density, &start, &shape, &settings, &mut rng);

    let n = chain.samples.len() as f64;
    for j in 0..3 {
        let a: f64 = chain.samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let sd = (chain.samples.iter().map(|s| (s[j] - a).powi(2)).sum::<f64>() / n).sqrt();
        let b = dup.posterior_mean()[j];
        // both chains carry Monte Carlo error of roughly sd / sqrt(ESS) with ESS >= 400
        assert!((a - b).abs() < 4.0 * sd * (2.0f64 / 400.0).sqrt(), "param {j}: {a} vs {b} (sd {sd})");
    }
}

#[test]
fn predictive_mean_matches_averaged_mean_function() {
    let (y, x) = standard_problem(7);
    let post = bayes_beta_sample(&y, &x, PriorScales::default(), &McmcConfig::default(), &Substream::new(8)).unwrap();
    let row = [1.0, 0.3];
    let oracle = post
        .pooled()
        .map(|s| logistic(s[0] * row[0] + s[1] * row[1]))
        .sum::<f64>()
        / post.num_samples() as f64;
    let mut rng = Substream::new(10).rng();
    let n = 100_000;
    let mean = (0..n).map(|_| posterior_predictive_draw(&post, &row, &mut rng)).sum::<f64>() / n as f64;
    assert!((mean - oracle).abs() < 0.005, "{mean} vs {oracle}");
}

#[test]
fn standard_problem_mixes() {
    let (y, x) = standard_problem(1);
    let post = bayes_beta_sample(&y, &x, PriorScales::default(), &McmcConfig::default(), &Substream::new(1)).unwrap();
    for (j, (r, e)) in post.rhat.iter().zip(&post.ess).enumerate() {
        assert!(*r < 1.05 && *e > 400.0, "param {j}: R-hat {r}, ESS {e}");
    }
    assert!(post.acceptance.iter().all(|a| (0.1..0.5).contains(a)), "{:?}", post.acceptance);
}
