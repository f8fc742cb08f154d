//! Adaptive random-walk Metropolis and multi-chain convergence diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct ChainSettings {
    /// Total iterations including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Retained states after burn-in and thinning.
    pub samples: Vec<Vec<f64>>,
    /// Acceptance rate over the post-burn-in iterations.
    pub acceptance: f64,
    /// Proposal scale frozen at the end of burn-in.
    pub scale: f64,
}

/// Random-walk Metropolis with proposals `x + scale * L z`, `z ~ N(0, I)`.
///
/// During burn-in `log(scale)` follows a Robbins–Monro recursion driving the
/// acceptance probability toward `target_acceptance`; afterwards the scale is
/// frozen so the retained part is a plain Metropolis chain.
pub fn run_chain<F>(
    log_density: F,
    start: &[f64],
    shape: &DMatrix<f64>,
    settings: &ChainSettings,
    rng: &mut StreamRng,
) -> ChainOutput
where
    F: Fn(&[f64]) -> f64,
{
    let d = start.len();
    let thin = settings.thin.max(1);
    let mut x = start.to_vec();
    let mut lp = log_density(&x);
    let mut log_scale = (2.38 / (d as f64).sqrt()).ln();
    let mut samples = Vec::with_capacity(settings.iterations.saturating_sub(settings.burn_in) / thin + 1);
    let mut accepted = 0usize;
    let mut z = DVector::zeros(d);
    for t in 0..settings.iterations {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let step = shape * &z;
        let scale = log_scale.exp();
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
        let lp_cand = log_density(&cand);
        let log_ratio = lp_cand - lp;
        let alpha = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        let u: f64 = rng.random();
        let accept = u < alpha;
        if accept {
            x = cand;
            lp = lp_cand;
        }
        if t < settings.burn_in {
            let gain = (t as f64 + 1.0).powf(-0.6);
            log_scale += gain * (alpha - settings.target_acceptance);
        } else {
            if accept {
                accepted += 1;
            }
            if (t - settings.burn_in) % thin == 0 {
                samples.push(x.clone());
            }
        }
    }
    let kept_iterations = settings.iterations.saturating_sub(settings.burn_in);
    ChainOutput {
        samples,
        acceptance: if kept_iterations > 0 { accepted as f64 / kept_iterations as f64 } else { 0.0 },
        scale: log_scale.exp(),
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Potential scale reduction computed on chains split in half.
///
/// Returns 1 when all draws are identical, and infinity when chains are
/// individually constant but disagree.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    if half < 2 {
        return f64::NAN;
    }
    let pieces: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[half..2 * half]]).collect();
    let n = half as f64;
    let stats: Vec<(f64, f64)> = pieces.iter().map(|p| mean_var(p)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, b_over_n) = mean_var(&means);
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Effective sample size of a set of chains from the combined
/// autocorrelation, truncated by Geyer's initial monotone sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b_over_n = if m > 1 { mean_var(&means).1 } else { 0.0 };
    let nf = n as f64;
    let total = (m * n) as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus == 0.0 {
        return total;
    }
    // autocovariance at lag t averaged over chains, divisor n
    let acov = |t: usize| -> f64 {
        chains
            .iter()
            .zip(&stats)
            .map(|(c, (mu, _))| (0..n - t).map(|i| (c[i] - mu) * (c[i + t] - mu)).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };
    let rho = |t: usize| 1.0 - (w - acov(t)) / var_plus;
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    // antithetic chains can push tau below one; cap as Stan does
    total / tau.max(1.0 / total.log10())
}
