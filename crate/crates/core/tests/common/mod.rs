//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let flm = f(0.5 * (a + m));
        let frm = f(0.5 * (m + b));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Log of the marginal density of `r` under
/// `r | c, s2 ~ N(B c, s2 I)`, `c | s2 ~ N(c0, s2 (B'B)^-1)`,
/// `c0 = (B'B + rho I)^-1 B'r`, `s2 ~ IG(alpha, beta)`.
///
/// The Gaussian integral over `c` is done in closed form
/// (`r | s2 ~ N(B c0, s2 (I + B (B'B)^-1 B'))`), the integral over
/// `t = log s2` by adaptive quadrature.
pub fn log_marginal_by_quadrature(b: &DMatrix<f64>, r: &[f64], rho: f64, alpha: f64, beta: f64) -> f64 {
    let n = r.len();
    let j = b.ncols();
    let g = b.transpose() * b;
    let sigma0 = g.clone().try_inverse().expect("invertible gram");
    let sigma_rho = (&g + DMatrix::identity(j, j) * rho).try_inverse().expect("invertible");
    let rv = DVector::from_column_slice(r);
    let c0 = &sigma_rho * b.transpose() * &rv;
    let cov = DMatrix::identity(n, n) + b * &sigma0 * b.transpose();
    let chol = cov.cholesky().expect("positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let dev = &rv - b * &c0;
    let quad = dev.dot(&chol.solve(&dev));
    let log_ig_norm = alpha * beta.ln() - ln_gamma(alpha);
    let log_integrand = |t: f64| {
        let s2 = t.exp();
        let log_lik = -0.5 * n as f64 * (2.0 * PI * s2).ln() - 0.5 * logdet - quad / (2.0 * s2);
        let log_prior = log_ig_norm - (alpha + 1.0) * t - beta / s2;
        log_lik + log_prior + t
    };
    let peak = (0..=600)
        .map(|i| log_integrand(-30.0 + 0.1 * i as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let integral = simpson(&|t| (log_integrand(t) - peak).exp(), -30.0, 30.0, 1e-14, 50);
    peak + integral.ln()
}

/// The constant linking `-(alpha + n/2) log(S + 2 beta)` to the full log
/// marginal density.
pub fn log_marginal_constant(n: usize, j: usize, alpha: f64, beta: f64) -> f64 {
    let nf = n as f64;
    -nf / 2.0 * (2.0 * PI).ln() - (j as f64) / 2.0 * 2f64.ln() + alpha * beta.ln() + ln_gamma(alpha + nf / 2.0)
        - ln_gamma(alpha)
        + (alpha + nf / 2.0) * 2f64.ln()
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}
