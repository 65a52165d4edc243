//! Spike-and-slab Lasso prior on the spherical angles.
//!
//! Each angle gets a Laplace spike (scale `h0`) or slab (scale `h1`)
//! according to a binary allocation `m_j`, with `m_j ~ Bernoulli(w)` and
//! `w ~ Beta(alpha_w, beta_w)`. The prior on `gamma` picks up the inverse
//! Jacobian of the spherical chart. The uniform variant replaces the angle
//! density with the constant `pi^{-(p-1)}` and keeps the Jacobian.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{PbrError, Result};
use crate::geometry::SphericalCoords;

const W_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslHyper {
    /// Spike scale.
    pub h0: f64,
    /// Slab scale.
    pub h1: f64,
    pub alpha_w: f64,
    pub beta_w: f64,
}

impl SslHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !(ok(self.h0) && ok(self.h1) && ok(self.alpha_w) && ok(self.beta_w)) {
            return Err(PbrError::InvalidConfig(
                "spike-and-slab scales and Beta parameters must be positive".into(),
            ));
        }
        if !(self.h0 < self.h1) {
            return Err(PbrError::InvalidConfig(format!(
                "spike scale h0 ({}) must be smaller than slab scale h1 ({})",
                self.h0, self.h1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    SpikeSlab(SslHyper),
    Uniform,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::SpikeSlab(h) => h.validate(),
            PriorSpec::Uniform => Ok(()),
        }
    }
}

/// `log psi_h(u) = -|u|/h - log(2h)`.
pub fn laplace_logpdf(u: f64, h: f64) -> f64 {
    -u.abs() / h - (2.0 * h).ln()
}

/// Log prior density of `gamma` expressed through its angles.
///
/// Panics if `m` and `theta` differ in length.
pub fn log_prior_gamma(theta: &SphericalCoords, m: &[u8], spec: &PriorSpec) -> f64 {
    let t = theta.as_slice();
    let angle_term = match spec {
        PriorSpec::SpikeSlab(h) => {
            assert_eq!(m.len(), t.len(), "allocation length must equal p - 1");
            t.iter()
                .zip(m)
                .map(|(&x, &mj)| laplace_logpdf(x, if mj == 1 { h.h0 } else { h.h1 }))
                .sum()
        }
        PriorSpec::Uniform => -(t.len() as f64) * PI.ln(),
    };
    angle_term - theta.log_jacobian()
}

/// Posterior spike probability of one angle,
/// `w psi_h0 / (w psi_h0 + (1 - w) psi_h1)`, in log space.
pub fn spike_probability(theta_j: f64, w: f64, ssl: &SslHyper) -> f64 {
    let a = w.ln() + laplace_logpdf(theta_j, ssl.h0);
    let b = (1.0 - w).ln() + laplace_logpdf(theta_j, ssl.h1);
    // a - logsumexp(a, b)
    1.0 / (1.0 + (b - a).exp())
}

pub fn gibbs_update_m<R: Rng + ?Sized>(rng: &mut R, theta: &SphericalCoords, w: f64, ssl: &SslHyper) -> Vec<u8> {
    theta
        .as_slice()
        .iter()
        .map(|&t| {
            let p = spike_probability(t, w, ssl);
            u8::from(rng.random::<f64>() < p)
        })
        .collect()
}

/// Draw from `Beta(sum m + alpha_w, sum (1 - m) + beta_w)`, clamped away
/// from 0 and 1.
pub fn gibbs_update_w<R: Rng + ?Sized>(rng: &mut R, m: &[u8], alpha_w: f64, beta_w: f64) -> f64 {
    let ones = m.iter().filter(|&&x| x == 1).count() as f64;
    let zeros = m.len() as f64 - ones;
    let beta = Beta::new(ones + alpha_w, zeros + beta_w).expect("positive Beta parameters");
    let w: f64 = beta.sample(rng);
    w.clamp(W_CLAMP, 1.0 - W_CLAMP)
}
