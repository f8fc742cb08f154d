//! BFGS quasi-Newton minimization with a backtracking (Armijo) line search.
//!
//! Every accepted step strictly satisfies the sufficient-decrease condition,
//! so the recorded objective trace is monotone.

use crate::linalg::{dot, norm};

#[derive(Debug, Clone)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Stop once the Euclidean gradient norm falls below this value.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub record_trace: bool,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig {
            max_iterations: 500,
            grad_tol: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Minimize `f`, where `f(x, grad)` returns the value and writes the gradient.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &BfgsConfig) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(value);
    }
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];

    if !value.is_finite() {
        let grad_norm = f64::INFINITY;
        return OptimResult { x, value, grad: g, grad_norm, iterations, converged: false, trace };
    }

    while iterations < cfg.max_iterations {
        let gnorm = norm(&g);
        if gnorm < cfg.grad_tol {
            break;
        }
        mat_vec_neg(&h, &g, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -gnorm * gnorm;
        }
        let mut step = if fresh { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let v = f(&x_new, &mut g_new);
            if v.is_finite() && v <= value + cfg.armijo * step * slope && g_new.iter().all(|z| z.is_finite()) {
                value = v;
                accepted = true;
                break;
            }
            step *= cfg.backtrack;
        }
        if !accepted {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        }
        iterations += 1;
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().step_by(n + 1).for_each(|d| *d = scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        if cfg.record_trace {
            trace.push(value);
        }
    }
    let grad_norm = norm(&g);
    OptimResult {
        converged: grad_norm < cfg.grad_tol,
        x,
        value,
        grad: g,
        grad_norm,
        iterations,
        trace,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec_neg(h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        out[i] = -dot(&h[i * n..(i + 1) * n], g);
    }
}

/// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
