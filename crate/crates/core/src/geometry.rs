//! Spherical chart for unit directions and von Mises-Fisher proposals.
//!
//! A unit vector `gamma` in R^p with `gamma_p >= 0` is written through
//! `p - 1` angles in `[-pi/2, pi/2]`:
//!
//! ```text
//! gamma_1 = sin(t_1)
//! gamma_l = sin(t_l) * cos(t_1) * ... * cos(t_{l-1})     (1 < l < p)
//! gamma_p = cos(t_1) * ... * cos(t_{p-1})
//! ```
//!
//! Restricting the angles to the closed half-range keeps exactly one of
//! `gamma` and `-gamma` in the chart, the canonical hemisphere `gamma_p >= 0`.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PbrError, Result};

/// Tolerance on `|‖gamma‖ - 1|` accepted by [`to_spherical`].
pub const UNIT_NORM_TOL: f64 = 1e-8;

/// Angles `theta_1..theta_{p-1}`, each in `[-pi/2, pi/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoords(Vec<f64>);

impl SphericalCoords {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(PbrError::InvalidInput(
                "spherical coordinates need p >= 2".into(),
            ));
        }
        for (index, &value) in theta.iter().enumerate() {
            if !value.is_finite() {
                return Err(PbrError::NonFinite("spherical coordinates"));
            }
            if !(-FRAC_PI_2..=FRAC_PI_2).contains(&value) {
                return Err(PbrError::ThetaOutOfRange { index, value });
            }
        }
        Ok(Self(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ambient dimension `p`.
    pub fn dim(&self) -> usize {
        self.0.len() + 1
    }

    pub fn to_cartesian(&self) -> Vec<f64> {
        let p = self.dim();
        let mut gamma = Vec::with_capacity(p);
        let mut cos_prod = 1.0;
        for &t in &self.0 {
            gamma.push(t.sin() * cos_prod);
            cos_prod *= t.cos();
        }
        gamma.push(cos_prod);
        gamma
    }

    /// `log |det J| = sum_{j=1}^{p-2} (p-1-j) log cos(theta_j)`.
    ///
    /// The last angle never enters. Returns `-inf` when a weighted cosine is 0.
    pub fn log_jacobian(&self) -> f64 {
        let p = self.dim();
        self.0
            .iter()
            .take(p.saturating_sub(2))
            .enumerate()
            .map(|(j, t)| (p - 2 - j) as f64 * t.cos().ln())
            .sum()
    }
}

/// Validating wrapper around [`SphericalCoords::to_cartesian`].
pub fn to_cartesian(theta: &[f64]) -> Result<Vec<f64>> {
    Ok(SphericalCoords::new(theta.to_vec())?.to_cartesian())
}

/// See [`SphericalCoords::log_jacobian`].
pub fn log_jacobian(theta: &SphericalCoords) -> f64 {
    theta.log_jacobian()
}

/// Flip `v` into the canonical hemisphere (last entry `>= 0`).
pub fn canonicalize(v: &[f64]) -> Vec<f64> {
    match v.last() {
        Some(&last) if last < 0.0 => v.iter().map(|x| -x).collect(),
        _ => v.to_vec(),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Angles of `sign(gamma_p) * gamma`.
pub fn to_spherical(gamma: &[f64]) -> Result<SphericalCoords> {
    if gamma.len() < 2 {
        return Err(PbrError::InvalidInput(
            "spherical coordinates need p >= 2".into(),
        ));
    }
    if gamma.iter().any(|x| !x.is_finite()) {
        return Err(PbrError::NonFinite("direction"));
    }
    let nrm = norm(gamma);
    if (nrm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(PbrError::NotUnitNorm(nrm));
    }
    let g = canonicalize(gamma);
    let p = g.len();

    // tail[l] = ‖g[l+1..]‖
    let mut tail = vec![0.0; p];
    let mut acc = 0.0;
    for l in (0..p - 1).rev() {
        acc += g[l + 1] * g[l + 1];
        tail[l] = acc.sqrt();
    }
    let theta = (0..p - 1)
        .map(|l| {
            let t = g[l].atan2(tail[l]);
            t.clamp(-FRAC_PI_2, FRAC_PI_2)
        })
        .collect();
    SphericalCoords::new(theta)
}

/// One draw from vMF(`lambda`, `mean_dir`) on the sphere S^{p-1}.
///
/// The cosine to the mean comes from Wood's rejection sampler; the tangent
/// part is a uniformly random unit vector orthogonal to the mean.
/// `lambda = 0` gives the uniform distribution.
pub fn sample_vmf<R: Rng + ?Sized>(rng: &mut R, lambda: f64, mean_dir: &[f64]) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(PbrError::InvalidInput(format!(
            "vMF concentration must be finite and >= 0, got {lambda}"
        )));
    }
    let p = mean_dir.len();
    if p < 2 {
        return Err(PbrError::InvalidInput("vMF needs p >= 2".into()));
    }
    let nrm = norm(mean_dir);
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(PbrError::ZeroVector);
    }
    let mu: Vec<f64> = mean_dir.iter().map(|x| x / nrm).collect();

    if lambda == 0.0 {
        return Ok(uniform_on_sphere(rng, p));
    }

    let (w, one_minus_w) = sample_vmf_cosine(rng, lambda, p);
    let tangent = uniform_tangent(rng, &mu);
    let sin_part = (one_minus_w * (2.0 - one_minus_w)).max(0.0).sqrt();
    let mut x: Vec<f64> = mu
        .iter()
        .zip(&tangent)
        .map(|(m, v)| w * m + sin_part * v)
        .collect();
    let xn = norm(&x);
    x.iter_mut().for_each(|v| *v /= xn);
    Ok(x)
}

/// Wood (1994) rejection step for `W = x'mu`. Returns `(W, 1 - W)`; the
/// complement is carried separately because it is tiny at large `lambda`.
fn sample_vmf_cosine<R: Rng + ?Sized>(rng: &mut R, lambda: f64, p: usize) -> (f64, f64) {
    let d1 = (p - 1) as f64;
    let b = d1 / (2.0 * lambda + (4.0 * lambda * lambda + d1 * d1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = lambda * x0 + d1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(d1 / 2.0, d1 / 2.0).expect("valid beta parameters");
    loop {
        let z: f64 = beta.sample(rng);
        let denom = 1.0 - (1.0 - b) * z;
        let w = (1.0 - (1.0 + b) * z) / denom;
        let one_minus_w = 2.0 * b * z / denom;
        let u: f64 = rng.random();
        if lambda * w + d1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return (w, one_minus_w);
        }
    }
}

fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn uniform_tangent<R: Rng + ?Sized>(rng: &mut R, mu: &[f64]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
        let proj = dot(&v, mu);
        v.iter_mut().zip(mu).for_each(|(x, m)| *x -= proj * m);
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
