//! Value types shared across the crate.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PbrError, Result};
use crate::geometry::{self, SphericalCoords};
use crate::splines::{self, Knots};
use crate::ssl_prior::{PriorSpec, SslHyper};

/// Symmetric `p x p` matrix stored as its packed upper triangle
/// (row-major over `j <= k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

impl SymMatrix {
    pub fn new(dim: usize, upper: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(PbrError::InvalidInput("matrix dimension must be positive".into()));
        }
        if upper.len() != packed_len(dim) {
            return Err(PbrError::DimensionMismatch {
                expected: packed_len(dim),
                found: upper.len(),
            });
        }
        if upper.iter().any(|x| !x.is_finite()) {
            return Err(PbrError::NonFinite("symmetric matrix"));
        }
        Ok(Self { dim, upper })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |j, k| if j == k { 1.0 } else { 0.0 })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; packed_len(dim)],
        }
    }

    /// Builds from `f(j, k)` evaluated on `j <= k` only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(packed_len(dim));
        for j in 0..dim {
            for k in j..dim {
                upper.push(f(j, k));
            }
        }
        Self { dim, upper }
    }

    /// Symmetrizes `(A + A') / 2` while packing.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(PbrError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let out = Self::from_fn(m.nrows(), |j, k| {
            if j == k {
                m[(j, j)]
            } else {
                0.5 * (m[(j, k)] + m[(k, j)])
            }
        });
        if out.upper.iter().any(|x| !x.is_finite()) {
            return Err(PbrError::NonFinite("symmetric matrix"));
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn into_upper(self) -> Vec<f64> {
        self.upper
    }

    fn packed_index(&self, j: usize, k: usize) -> usize {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        j * self.dim - j * (j + 1) / 2 + k
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.upper[self.packed_index(j, k)]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |j, k| self.get(j, k))
    }

    /// `v' M v` with each off-diagonal pair counted twice.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let mut acc = 0.0;
        let mut idx = 0;
        for j in 0..self.dim {
            let vj = v[j];
            acc += self.upper[idx] * vj * vj;
            idx += 1;
            let mut off = 0.0;
            for k in j + 1..self.dim {
                off += self.upper[idx] * v[k];
                idx += 1;
            }
            acc += 2.0 * vj * off;
        }
        acc
    }
}

/// Observed pairs `(M_i, y_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    matrices: Vec<SymMatrix>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(matrices: Vec<SymMatrix>, responses: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(PbrError::InvalidInput("dataset must hold at least one subject".into()));
        }
        if matrices.len() != responses.len() {
            return Err(PbrError::DimensionMismatch {
                expected: matrices.len(),
                found: responses.len(),
            });
        }
        let p = matrices[0].dim();
        if let Some(bad) = matrices.iter().find(|m| m.dim() != p) {
            return Err(PbrError::DimensionMismatch {
                expected: p,
                found: bad.dim(),
            });
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(PbrError::NonFinite("responses"));
        }
        Ok(Self {
            matrices,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn matrices(&self) -> &[SymMatrix] {
        &self.matrices
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Projection indices `gamma' M_i gamma` for every subject.
    pub fn indices(&self, gamma: &[f64]) -> Vec<f64> {
        projection_indices(&self.matrices, gamma)
    }
}

pub fn projection_indices(matrices: &[SymMatrix], gamma: &[f64]) -> Vec<f64> {
    matrices.iter().map(|m| m.quad_form(gamma)).collect()
}

/// `<M, gamma gamma'>`, i.e. `gamma' M gamma`.
pub fn frobenius_index(m: &SymMatrix, d: &Direction) -> Result<f64> {
    if m.dim() != d.dim() {
        return Err(PbrError::DimensionMismatch {
            expected: m.dim(),
            found: d.dim(),
        });
    }
    Ok(m.quad_form(d.gamma()))
}

/// Unit projection direction in the canonical hemisphere, with its angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    gamma: Vec<f64>,
    theta: SphericalCoords,
}

impl Direction {
    /// Normalizes and canonicalizes any nonzero vector.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(PbrError::InvalidInput("directions need p >= 2".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(PbrError::NonFinite("direction"));
        }
        let n = geometry::norm(v);
        if !(n > 0.0) {
            return Err(PbrError::ZeroVector);
        }
        let unit: Vec<f64> = v.iter().map(|x| x / n).collect();
        let gamma = geometry::canonicalize(&unit);
        let theta = geometry::to_spherical(&gamma)?;
        Ok(Self { gamma, theta })
    }

    pub fn from_theta(theta: SphericalCoords) -> Self {
        let gamma = theta.to_cartesian();
        Self { gamma, theta }
    }

    /// Rebuilds a stored direction without recomputing either half.
    pub fn from_parts(gamma: Vec<f64>, theta: SphericalCoords) -> Result<Self> {
        if theta.dim() != gamma.len() {
            return Err(PbrError::DimensionMismatch {
                expected: gamma.len(),
                found: theta.dim(),
            });
        }
        let n = geometry::norm(&gamma);
        if (n - 1.0).abs() > geometry::UNIT_NORM_TOL {
            return Err(PbrError::NotUnitNorm(n));
        }
        if gamma.last().is_some_and(|&g| g < 0.0) {
            return Err(PbrError::InvalidInput(
                "stored direction is outside the canonical hemisphere".into(),
            ));
        }
        Ok(Self { gamma, theta })
    }

    /// `e_p`, the all-zero-angle direction.
    pub fn last_axis(p: usize) -> Self {
        Self::from_theta(SphericalCoords::new(vec![0.0; p - 1]).expect("p >= 2"))
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn theta(&self) -> &SphericalCoords {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Natural cubic spline `g(u) = sum_j c_j N_j(u) - center_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFunction {
    pub coeffs: Vec<f64>,
    pub knots: Knots,
    pub center_offset: f64,
}

impl RidgeFunction {
    pub fn zero(knots: Knots) -> Self {
        Self {
            coeffs: vec![0.0; knots.basis_dim()],
            knots,
            center_offset: 0.0,
        }
    }

    pub fn basis_dim(&self) -> usize {
        self.coeffs.len()
    }

    /// Uncentered values `sum_j c_j N_j(u)`; linear beyond the boundary knots.
    pub fn eval_raw(&self, u: &[f64]) -> Result<Vec<f64>> {
        let basis = splines::eval_basis(u, &self.knots)?;
        Ok(basis.apply(&self.coeffs))
    }

    pub fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.eval_raw(u)?;
        v.iter_mut().for_each(|x| *x -= self.center_offset);
        Ok(v)
    }
}

/// Recent Metropolis accept/reject flags for concentration tuning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AcceptWindow {
    flags: Vec<bool>,
}

impl AcceptWindow {
    pub fn push(&mut self, accepted: bool) {
        self.flags.push(accepted);
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn accepts(&self) -> usize {
        self.flags.iter().filter(|&&a| a).count()
    }

    pub fn clear(&mut self) {
        self.flags.clear();
    }
}

/// One additive term and its sampler bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentState {
    pub direction: Direction,
    pub ridge: RidgeFunction,
    /// Spike (1) / slab (0) allocation of each angle.
    pub m: Vec<u8>,
    pub w: f64,
    /// vMF proposal concentration.
    pub lambda: f64,
    pub accept_history: AcceptWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

/// `IG(shape, scale)` with density proportional to `x^{-shape-1} exp(-scale/x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of additive components `K`.
    pub components: usize,
    /// Natural spline basis size `J` (interior knots + 2).
    pub basis_size: usize,
    /// Ridge regularizer on the prior mean of the spline coefficients.
    pub rho: f64,
    pub prior: PriorSpec,
    pub mu_prior: NormalPrior,
    pub sigma2_prior: InvGammaPrior,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub lambda_init: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            components: 2,
            basis_size: 4,
            rho: 0.1,
            prior: PriorSpec::SpikeSlab(SslHyper {
                h0: 0.05,
                h1: 1.0,
                alpha_w: 1.0,
                beta_w: 1.0,
            }),
            mu_prior: NormalPrior { mean: 0.0, var: 9.0 },
            sigma2_prior: InvGammaPrior { shape: 1.0, scale: 1.0 },
            iterations: 13_000,
            warmup: 10_000,
            seed: 1,
            lambda_init: 10_000.0,
        }
    }
}

impl FitConfig {
    pub fn draws(&self) -> usize {
        self.iterations - self.warmup
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PbrError::InvalidConfig(msg));
        if self.warmup >= self.iterations {
            return bad(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            ));
        }
        if self.basis_size < 2 {
            return bad(format!("basis size J must be >= 2, got {}", self.basis_size));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return bad(format!("rho must be finite and >= 0, got {}", self.rho));
        }
        if !(self.mu_prior.var > 0.0) || !self.mu_prior.mean.is_finite() {
            return bad("mu prior needs finite mean and positive variance".into());
        }
        if !(self.sigma2_prior.shape > 0.0 && self.sigma2_prior.scale > 0.0) {
            return bad("sigma2 prior needs positive shape and scale".into());
        }
        if !(self.lambda_init > 0.0) || !self.lambda_init.is_finite() {
            return bad(format!("lambda_init must be positive, got {}", self.lambda_init));
        }
        self.prior.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub mu: f64,
    pub sigma2: f64,
    pub components: Vec<ComponentState>,
}

/// Per-observation log-likelihoods, row-major `n_obs x n_draws`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikMatrix {
    n_obs: usize,
    n_draws: usize,
    values: Vec<f64>,
}

impl LogLikMatrix {
    pub fn zeros(n_obs: usize, n_draws: usize) -> Self {
        Self {
            n_obs,
            n_draws,
            values: vec![0.0; n_obs * n_draws],
        }
    }

    pub fn from_row_major(n_obs: usize, n_draws: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_obs * n_draws {
            return Err(PbrError::DimensionMismatch {
                expected: n_obs * n_draws,
                found: values.len(),
            });
        }
        Ok(Self {
            n_obs,
            n_draws,
            values,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn get(&self, obs: usize, draw: usize) -> f64 {
        self.values[obs * self.n_draws + draw]
    }

    pub fn set(&mut self, obs: usize, draw: usize, value: f64) {
        self.values[obs * self.n_draws + draw] = value;
    }

    pub fn row(&self, obs: usize) -> &[f64] {
        &self.values[obs * self.n_draws..(obs + 1) * self.n_draws]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Concatenates draws of several matrices over the same observations.
    pub fn hstack(parts: &[&LogLikMatrix]) -> Result<Self> {
        let n_obs = parts.first().map_or(0, |m| m.n_obs);
        if let Some(bad) = parts.iter().find(|m| m.n_obs != n_obs) {
            return Err(PbrError::DimensionMismatch {
                expected: n_obs,
                found: bad.n_obs,
            });
        }
        let n_draws = parts.iter().map(|m| m.n_draws).sum();
        let mut values = Vec::with_capacity(n_obs * n_draws);
        for i in 0..n_obs {
            for part in parts {
                values.extend_from_slice(part.row(i));
            }
        }
        Ok(Self {
            n_obs,
            n_draws,
            values,
        })
    }
}

/// Post-warm-up output of one MCMC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub dim: usize,
    pub draws: Vec<ModelState>,
    pub loglik: LogLikMatrix,
}

impl Chain {
    pub fn components(&self) -> usize {
        self.draws.first().map_or(0, |d| d.components.len())
    }

    /// Concatenates the draws of independent chains fitted to the same data.
    pub fn pooled(chains: &[Chain]) -> Result<Chain> {
        let first = chains
            .first()
            .ok_or_else(|| PbrError::InvalidInput("no chains to pool".into()))?;
        if let Some(bad) = chains.iter().find(|c| c.dim != first.dim) {
            return Err(PbrError::DimensionMismatch {
                expected: first.dim,
                found: bad.dim,
            });
        }
        let draws = chains.iter().flat_map(|c| c.draws.iter().cloned()).collect();
        let parts: Vec<&LogLikMatrix> = chains.iter().map(|c| &c.loglik).collect();
        Ok(Chain {
            dim: first.dim,
            draws,
            loglik: LogLikMatrix::hstack(&parts)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub rank_ok: bool,
    pub hadamard_rank_ok: bool,
    /// Smallest angle in `[0, pi/2]` between any two directions, treating
    /// `gamma` and `-gamma` as the same line; `pi/2` for fewer than two.
    pub min_pairwise_angle: f64,
}

const RANK_RTOL: f64 = 1e-8;

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Numerical column ranks of `Gamma = (gamma_1..gamma_K)` and `Gamma ⊙ Gamma`.
pub fn check_identifiability(dirs: &[Direction]) -> IdentifiabilityReport {
    let k = dirs.len();
    let p = dirs.first().map_or(0, Direction::dim);
    let gamma = DMatrix::from_fn(p, k, |l, j| dirs[j].gamma()[l]);
    let hadamard = gamma.map(|x| x * x);
    let mut min_angle = FRAC_PI_2;
    for a in 0..k {
        for b in a + 1..k {
            let c = geometry::dot(dirs[a].gamma(), dirs[b].gamma()).abs().min(1.0);
            min_angle = min_angle.min(c.acos());
        }
    }
    IdentifiabilityReport {
        rank_ok: numerical_rank(&gamma) == k,
        hadamard_rank_ok: numerical_rank(&hadamard) == k,
        min_pairwise_angle: min_angle,
    }
}
