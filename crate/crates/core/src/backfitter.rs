//! Bayesian backfitting: the full MCMC loop.
//!
//! Each iteration refreshes components `1..K` in order (partial residuals,
//! one Metropolis-within-Gibbs sweep, re-centering of the ridge function on
//! the training indices), then draws `sigma2` given the previous `mu`, then
//! `mu` given the new `sigma2`, and finally retunes each component's
//! proposal concentration from its last 100 accept/reject flags. The
//! retuning never switches off, including after warm-up.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    packed_len, projection_indices, AcceptWindow, Chain, ComponentState, Dataset, Direction,
    FitConfig, InvGammaPrior, LogLikMatrix, ModelState, NormalPrior, RidgeFunction, SymMatrix,
};
use crate::error::{PbrError, Result};
use crate::rng::{stream, ChainRng, RngPosition};
use crate::sim_sampler::{mh_sweep, SweepSettings};
use crate::splines::{self, Knots};

pub const ADAPT_WINDOW: usize = 100;
pub const ADAPT_FACTOR: f64 = 1.1;
pub const ADAPT_LOW: f64 = 0.2;
pub const ADAPT_HIGH: f64 = 0.4;
const SIGMA2_FLOOR: f64 = 1e-12;
const INIT_RIDGE: f64 = 1e-3;

/// Centered ridge values `g_k(u_ik)` at the training indices.
pub fn component_values(matrices: &[SymMatrix], comp: &ComponentState) -> Result<Vec<f64>> {
    let u = projection_indices(matrices, comp.direction.gamma());
    comp.ridge.eval(&u)
}

/// `y_i - mu - sum_{l != k} g_l(u_il)` for the zero-based component `k`.
pub fn partial_residuals(dataset: &Dataset, state: &ModelState, k: usize) -> Result<Vec<f64>> {
    let mut r: Vec<f64> = dataset.responses().iter().map(|y| y - state.mu).collect();
    for (l, comp) in state.components.iter().enumerate() {
        if l == k {
            continue;
        }
        let g = component_values(dataset.matrices(), comp)?;
        r.iter_mut().zip(&g).for_each(|(ri, gi)| *ri -= gi);
    }
    Ok(r)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sets the offset so the ridge averages zero over the training indices and
/// returns the centered values.
pub fn center_ridge(comp: &mut ComponentState, matrices: &[SymMatrix]) -> Result<Vec<f64>> {
    let u = projection_indices(matrices, comp.direction.gamma());
    let raw = comp.ridge.eval_raw(&u)?;
    Ok(center_values(&mut comp.ridge, raw))
}

fn center_values(ridge: &mut RidgeFunction, mut raw: Vec<f64>) -> Vec<f64> {
    let offset = if raw.is_empty() { 0.0 } else { mean(&raw) };
    ridge.center_offset = offset;
    raw.iter_mut().for_each(|x| *x -= offset);
    raw
}

/// Full-conditional `IG(shape, scale)` of `sigma2` given residuals
/// `y_i - mu - sum_k g_k`.
pub fn sigma2_conditional(residuals: &[f64], prior: &InvGammaPrior) -> (f64, f64) {
    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    (prior.shape + residuals.len() as f64 / 2.0, prior.scale + ss / 2.0)
}

pub fn draw_sigma2<R: Rng + ?Sized>(rng: &mut R, residuals: &[f64], prior: &InvGammaPrior) -> f64 {
    let (shape, scale) = sigma2_conditional(residuals, prior);
    let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

/// Full-conditional `N(mean, var)` of `mu` given `e_i = y_i - sum_k g_k`.
pub fn mu_conditional(e: &[f64], sigma2: f64, prior: &NormalPrior) -> (f64, f64) {
    let var = 1.0 / (1.0 / prior.var + e.len() as f64 / sigma2);
    let mean = var * (prior.mean / prior.var + e.iter().sum::<f64>() / sigma2);
    (mean, var)
}

pub fn draw_mu<R: Rng + ?Sized>(rng: &mut R, e: &[f64], sigma2: f64, prior: &NormalPrior) -> f64 {
    let (m, v) = mu_conditional(e, sigma2, prior);
    Normal::new(m, v.sqrt()).expect("finite normal parameters").sample(rng)
}

fn total_fit(n: usize, fits: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; n];
    for f in fits {
        total.iter_mut().zip(f).for_each(|(t, g)| *t += g);
    }
    total
}

pub fn update_sigma2<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &Dataset,
    state: &ModelState,
    prior: &InvGammaPrior,
) -> Result<f64> {
    let fits = state
        .components
        .iter()
        .map(|c| component_values(dataset.matrices(), c))
        .collect::<Result<Vec<_>>>()?;
    let g = total_fit(dataset.len(), &fits);
    let resid: Vec<f64> = dataset
        .responses()
        .iter()
        .zip(&g)
        .map(|(y, gi)| y - state.mu - gi)
        .collect();
    Ok(draw_sigma2(rng, &resid, prior))
}

pub fn update_mu<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &Dataset,
    state: &ModelState,
    prior: &NormalPrior,
) -> Result<f64> {
    let fits = state
        .components
        .iter()
        .map(|c| component_values(dataset.matrices(), c))
        .collect::<Result<Vec<_>>>()?;
    let g = total_fit(dataset.len(), &fits);
    let e: Vec<f64> = dataset.responses().iter().zip(&g).map(|(y, gi)| y - gi).collect();
    Ok(draw_mu(rng, &e, state.sigma2, prior))
}

/// Retunes `lambda` once a full window of flags is available. Returns
/// whether the window fired.
pub fn adapt_lambda(comp: &mut ComponentState) -> bool {
    if comp.accept_history.len() < ADAPT_WINDOW {
        return false;
    }
    let rate = comp.accept_history.accepts() as f64 / comp.accept_history.len() as f64;
    if rate < ADAPT_LOW {
        comp.lambda *= ADAPT_FACTOR;
    } else if rate > ADAPT_HIGH {
        comp.lambda /= ADAPT_FACTOR;
    }
    comp.accept_history.clear();
    true
}

fn placeholder_knots(u: &[f64], basis_size: usize) -> Knots {
    let centre = u.first().copied().unwrap_or(0.0);
    let (lo, hi) = (centre - 1.0, centre + 1.0);
    let n_int = basis_size.saturating_sub(2);
    let interior = (1..=n_int)
        .map(|k| lo + (hi - lo) * k as f64 / (n_int + 1) as f64)
        .collect();
    Knots::new(lo, hi, interior).expect("evenly spaced knots")
}

/// Leading direction of a linear fit of `r` on the entries of `M`.
///
/// The coefficients on the packed upper triangle are reassembled into a
/// symmetric matrix (off-diagonal coefficients halved, since each
/// off-diagonal entry appears twice in the inner product), its trace part is
/// removed, and the eigenvector of the largest-magnitude eigenvalue is
/// returned.
fn initial_direction(matrices: &[SymMatrix], r: &[f64]) -> Result<Direction> {
    let n = matrices.len();
    let p = matrices[0].dim();
    let d = packed_len(p);
    let mut x = DMatrix::from_fn(n, d, |i, c| matrices[i].upper()[c]);
    for c in 0..d {
        let m = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-m);
    }
    let rm = mean(r);
    let rv = DVector::from_iterator(n, r.iter().map(|v| v - rm));
    let mut gram = x.transpose() * &x;
    let penalty = INIT_RIDGE * gram.trace() / d as f64;
    if !(penalty > 0.0) {
        return Ok(Direction::last_axis(p));
    }
    for c in 0..d {
        gram[(c, c)] += penalty;
    }
    let beta = gram
        .cholesky()
        .ok_or(PbrError::SingularDesign)?
        .solve(&(x.transpose() * rv));

    let mut a = DMatrix::zeros(p, p);
    let mut idx = 0;
    for j in 0..p {
        for k in j..p {
            let v = if j == k { beta[idx] } else { beta[idx] / 2.0 };
            a[(j, k)] = v;
            a[(k, j)] = v;
            idx += 1;
        }
    }
    let shift = a.trace() / p as f64;
    for j in 0..p {
        a[(j, j)] -= shift;
    }
    let eig = a.symmetric_eigen();
    let lead = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let v: Vec<f64> = eig.eigenvectors.column(lead).iter().cloned().collect();
    Direction::from_vector(&v).or_else(|_| Ok(Direction::last_axis(p)))
}

/// Starting state: sample mean and variance for `mu` and `sigma2`, zero
/// ridge functions, directions from sequential linear fits.
pub fn initialize(dataset: &Dataset, config: &FitConfig) -> Result<ModelState> {
    let n = dataset.len();
    if n < 2 {
        return Err(PbrError::InvalidInput(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let y = dataset.responses();
    let mu = mean(y);
    let sigma2 = (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64).max(SIGMA2_FLOOR);
    let p = dataset.dim();

    let mut r: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let mut components = Vec::with_capacity(config.components);
    for _ in 0..config.components {
        let direction = initial_direction(dataset.matrices(), &r)?;
        let u = dataset.indices(direction.gamma());
        let knots = splines::make_knots(&u, config.basis_size)
            .unwrap_or_else(|_| placeholder_knots(&u, config.basis_size));

        // strip the linear trend in this index before the next component
        let um = mean(&u);
        let rm = mean(&r);
        let suu: f64 = u.iter().map(|v| (v - um).powi(2)).sum();
        if suu > 0.0 {
            let slope = u.iter().zip(&r).map(|(a, b)| (a - um) * (b - rm)).sum::<f64>() / suu;
            r.iter_mut()
                .zip(&u)
                .for_each(|(ri, ui)| *ri -= rm + slope * (ui - um));
        }

        components.push(ComponentState {
            direction,
            ridge: RidgeFunction::zero(knots),
            m: vec![0; p - 1],
            w: 0.5,
            lambda: config.lambda_init,
            accept_history: AcceptWindow::default(),
        });
    }
    Ok(ModelState {
        mu,
        sigma2,
        components,
    })
}

/// Everything needed to continue a chain bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: ModelState,
    pub rng: RngPosition,
    /// Completed iterations.
    pub iteration: usize,
}

/// Stateful MCMC driver over one dataset.
pub struct Sampler<'a> {
    data: &'a Dataset,
    config: FitConfig,
    sweep: SweepSettings,
    state: ModelState,
    /// Centered `g_k` at the training indices, one vector per component.
    fits: Vec<Vec<f64>>,
    rng: ChainRng,
    iteration: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, config: FitConfig, rng: ChainRng) -> Result<Self> {
        config.validate()?;
        let state = initialize(data, &config)?;
        Self::from_parts(data, config, state, rng, 0)
    }

    pub fn resume(data: &'a Dataset, config: FitConfig, checkpoint: Checkpoint) -> Result<Self> {
        config.validate()?;
        let rng = checkpoint.rng.restore();
        Self::from_parts(data, config, checkpoint.state, rng, checkpoint.iteration)
    }

    fn from_parts(
        data: &'a Dataset,
        config: FitConfig,
        state: ModelState,
        rng: ChainRng,
        iteration: usize,
    ) -> Result<Self> {
        if state.components.len() != config.components {
            return Err(PbrError::InvalidConfig(format!(
                "state has {} components, config expects {}",
                state.components.len(),
                config.components
            )));
        }
        if let Some(c) = state.components.iter().find(|c| c.direction.dim() != data.dim()) {
            return Err(PbrError::DimensionMismatch {
                expected: data.dim(),
                found: c.direction.dim(),
            });
        }
        let fits = state
            .components
            .iter()
            .map(|c| component_values(data.matrices(), c))
            .collect::<Result<Vec<_>>>()?;
        let sweep = SweepSettings {
            basis_size: config.basis_size,
            rho: config.rho,
            sigma2_prior: config.sigma2_prior,
            prior: config.prior,
            update_allocations: true,
        };
        Ok(Self {
            data,
            config,
            sweep,
            state,
            fits,
            rng,
            iteration,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            rng: RngPosition::capture(&self.rng),
            iteration: self.iteration,
        }
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<()> {
        let n = self.data.len();
        let y = self.data.responses();
        let matrices = self.data.matrices();
        let k_total = self.state.components.len();

        for k in 0..k_total {
            let mut r: Vec<f64> = y.iter().map(|v| v - self.state.mu).collect();
            for (l, f) in self.fits.iter().enumerate() {
                if l != k {
                    r.iter_mut().zip(f).for_each(|(ri, g)| *ri -= g);
                }
            }
            let res = mh_sweep(&mut self.rng, &self.state.components[k], &r, matrices, &self.sweep)?;
            let mut comp = res.component;
            self.fits[k] = center_values(&mut comp.ridge, res.fitted);
            self.state.components[k] = comp;
        }

        let g = total_fit(n, &self.fits);
        let resid: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| v - self.state.mu - gi).collect();
        self.state.sigma2 = draw_sigma2(&mut self.rng, &resid, &self.config.sigma2_prior);
        let e: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| v - gi).collect();
        self.state.mu = draw_mu(&mut self.rng, &e, self.state.sigma2, &self.config.mu_prior);

        for comp in &mut self.state.components {
            adapt_lambda(comp);
        }
        self.iteration += 1;
        Ok(())
    }

    /// Per-observation Gaussian log-likelihood of the current state.
    fn loglik(&self) -> Result<Vec<f64>> {
        let g = total_fit(self.data.len(), &self.fits);
        let s2 = self.state.sigma2;
        let norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        let mut out = Vec::with_capacity(g.len());
        for (i, (y, gi)) in self.data.responses().iter().zip(&g).enumerate() {
            let d = y - self.state.mu - gi;
            let l = norm - d * d / (2.0 * s2);
            if !l.is_finite() {
                return Err(PbrError::NonFiniteLogLik {
                    iteration: self.iteration,
                    observation: i,
                    mu: self.state.mu,
                    sigma2: s2,
                });
            }
            out.push(l);
        }
        Ok(out)
    }

    /// Runs to `config.iterations`, keeping every post-warm-up state.
    pub fn run(mut self) -> Result<Chain> {
        let n = self.data.len();
        let total = self.config.iterations;
        let warmup = self.config.warmup;
        let kept = total - warmup.max(self.iteration.min(total));
        let mut draws = Vec::with_capacity(kept);
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(kept);
        while self.iteration < total {
            self.step()?;
            if self.iteration > warmup {
                columns.push(self.loglik()?);
                let mut snap = self.state.clone();
                snap.components.iter_mut().for_each(|c| c.accept_history.clear());
                draws.push(snap);
            }
        }
        let s = columns.len();
        let mut loglik = LogLikMatrix::zeros(n, s);
        for (t, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                loglik.set(i, t, v);
            }
        }
        Ok(Chain {
            dim: self.data.dim(),
            draws,
            loglik,
        })
    }
}

pub fn run_chain(rng: ChainRng, dataset: &Dataset, config: &FitConfig) -> Result<Chain> {
    Sampler::new(dataset, config.clone(), rng)?.run()
}

/// Independent chains on the sub-streams `"{label}/rep-{r}"` of
/// `config.seed`, run in parallel; output order follows `r`.
pub fn run_replications(dataset: &Dataset, config: &FitConfig, label: &str, reps: usize) -> Result<Vec<Chain>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let rng = stream(config.seed, &replication_label(label, r));
            run_chain(rng, dataset, config)
        })
        .collect()
}

pub fn replication_label(label: &str, r: usize) -> String {
    if label.is_empty() {
        format!("rep-{r}")
    } else {
        format!("{label}/rep-{r}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Posterior mean per subject.
    pub point: Vec<f64>,
    /// `per_draw[t][i]`.
    pub per_draw: Vec<Vec<f64>>,
}

/// `mu + sum_k g_k(gamma_k' M gamma_k)` for one state.
pub fn state_predictions(state: &ModelState, matrices: &[SymMatrix]) -> Result<Vec<f64>> {
    let mut out = vec![state.mu; matrices.len()];
    for comp in &state.components {
        let g = component_values(matrices, comp)?;
        out.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi);
    }
    Ok(out)
}

pub fn predict(chain: &Chain, matrices: &[SymMatrix]) -> Result<Prediction> {
    if let Some(m) = matrices.iter().find(|m| m.dim() != chain.dim) {
        return Err(PbrError::DimensionMismatch {
            expected: chain.dim,
            found: m.dim(),
        });
    }
    if chain.draws.is_empty() {
        return Err(PbrError::InvalidInput("chain has no draws".into()));
    }
    let per_draw = chain
        .draws
        .par_iter()
        .map(|s| state_predictions(s, matrices))
        .collect::<Result<Vec<_>>>()?;
    let s = per_draw.len() as f64;
    let point = (0..matrices.len())
        .map(|i| per_draw.iter().map(|d| d[i]).sum::<f64>() / s)
        .collect();
    Ok(Prediction { point, per_draw })
}
