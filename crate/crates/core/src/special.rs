//! Scalar special functions shared by the regression and topic-model code.

use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc_inv;
pub use statrs::function::gamma::{digamma, ln_gamma};

/// Largest double strictly below one.
pub const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Map a probability into the open unit interval of representable doubles.
///
/// Rounding can turn a value that is mathematically inside (0, 1) into an
/// exact 0 or 1; this snaps such values to the nearest interior double.
pub fn clamp_open(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// Logistic response restricted to the open unit interval.
pub fn logistic_open(x: f64) -> f64 {
    clamp_open(logistic(x))
}

/// Trigamma function, the derivative of [`digamma`].
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // asymptotic series in 1/x
    acc + inv
        + inv2 / 2.0
        + inv * inv2
            * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))))
}

/// Below this a shape parameter is handled by its small-shape expansion;
/// the incomplete beta from `statrs` loses all accuracy there.
const SMALL_SHAPE: f64 = 1e-5;
/// Above this for both shapes the logit of the variable is treated as
/// near-normal; the incomplete-beta continued fraction stops converging
/// near the bulk of such concentrated laws.
const LARGE_SHAPE: f64 = 1e4;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `ln logistic(z)` without overflow.
fn ln_logistic(z: f64) -> f64 {
    if z > 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() }
}

/// Quantile function of Beta(a, b), restricted to the open unit interval.
///
/// Solves `I_x(a, b) = u` on the logit scale by Newton steps on the log of
/// the smaller tail, kept inside a shrinking bisection bracket so the
/// iteration always terminates. Shapes below `SMALL_SHAPE` use the
/// leading-order expansion `I_x(a, b) ~ x^a exp(a (psi(b) + gamma))`; when
/// both exceed `LARGE_SHAPE`, `logit X = ln G_a - ln G_b` for independent
/// gammas and a skew-corrected normal quantile of that difference is used.
pub fn beta_quantile(a: f64, b: f64, u: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    let u = u.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP);
    match (a < SMALL_SHAPE, b < SMALL_SHAPE) {
        // two point masses at 0 and 1 with weights b and a
        (true, true) => clamp_open(if u < b / (a + b) { 0.0 } else { 1.0 }),
        (true, false) => clamp_open((u.ln() / a - digamma(b) - EULER_GAMMA).exp()),
        (false, true) => clamp_open(-((1.0 - u).ln() / b - digamma(a) - EULER_GAMMA).exp_m1()),
        (false, false) if a.min(b) >= LARGE_SHAPE => clamp_open(logistic(log_ratio_quantile(a, b, u))),
        (false, false) if u <= 0.5 => clamp_open(logistic(tail_root(a, b, u))),
        (false, false) => clamp_open(logistic(-tail_root(b, a, 1.0 - u))),
    }
}

/// Cornish-Fisher quantile of `ln G_a - ln G_b`, whose cumulants are
/// polygamma values; `psi''(x) ~ -1/x^2 - 1/x^3` at these sizes.
fn log_ratio_quantile(a: f64, b: f64, u: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
    let var = trigamma(a) + trigamma(b);
    let psi2 = |x: f64| -1.0 / (x * x) - 1.0 / (x * x * x);
    let skew = (psi2(a) - psi2(b)) / var.powf(1.5);
    digamma(a) - digamma(b) + var.sqrt() * (z + skew / 6.0 * (z * z - 1.0))
}

/// `I_x(a, b)` at `x = logistic(z)`. Near one `x` itself is not
/// representable, so the upper side goes through the mirrored law.
fn logit_cdf(a: f64, b: f64, z: f64) -> f64 {
    let p = beta_reg(a, b, logistic(z));
    if z <= 0.0 || p <= 0.5 { p } else { 1.0 - beta_reg(b, a, logistic(-z)) }
}

/// Logit `z` with `I_{logistic(z)}(a, b) = t`, for `t <= 1/2`.
fn tail_root(a: f64, b: f64, t: f64) -> f64 {
    let ln_t = t.ln();
    let ln_b = ln_beta(a, b);
    let (mut lo, mut hi) = (-745.0_f64, 745.0_f64);
    let mut z = (a / b).ln().clamp(lo + 1.0, hi - 1.0);
    for _ in 0..200 {
        let cdf = logit_cdf(a, b, z);
        if !(cdf.is_finite() && cdf > 0.0) {
            // underflow: the root lies further right
            lo = z;
            z = 0.5 * (lo + hi);
            continue;
        }
        let h = cdf.ln() - ln_t;
        if h < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        // d ln I / dz = density on the logit scale over I
        let slope = (a * ln_logistic(z) + b * ln_logistic(-z) - ln_b - cdf.ln()).exp();
        let step = h / slope;
        if step.is_finite() && (h.abs() <= 1e-13 || step.abs() <= 1e-14 * (1.0 + z.abs())) {
            return z - step;
        }
        let next = z - step;
        z = if next.is_finite() && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-14 * (1.0 + z.abs()) {
            break;
        }
    }
    z
}
