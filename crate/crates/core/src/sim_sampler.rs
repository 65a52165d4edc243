//! One Metropolis-within-Gibbs sweep for a single-index component.
//!
//! Given partial residuals `r`, a sweep refreshes the spike/slab allocations
//! and the mixing weight from the current angles, proposes a new direction
//! from a von Mises-Fisher kernel centred at the current one, and accepts it
//! against the posterior of `gamma` with the spline coefficients and the
//! noise variance integrated out. The ridge function is then set to the
//! conditional posterior mean of its coefficients at the accepted direction.
//!
//! Proposals that land in the lower hemisphere are folded back (`-gamma'`).
//! The folded kernel is still symmetric, so the acceptance ratio is the
//! plain posterior ratio.

use rand::Rng;

use crate::data_model::{
    projection_indices, ComponentState, Direction, InvGammaPrior, RidgeFunction, SymMatrix,
};
use crate::error::{PbrError, Result};
use crate::geometry::sample_vmf;
use crate::splines::{self, BasisMatrix, Knots};
use crate::ssl_prior::{self, PriorSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub basis_size: usize,
    pub rho: f64,
    pub sigma2_prior: InvGammaPrior,
    pub prior: PriorSpec,
    /// Refresh `m` and `w` before the proposal (ignored under a uniform prior).
    pub update_allocations: bool,
}

/// A direction scored against a residual vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_post: f64,
    pub basis: BasisMatrix,
    pub c0: Vec<f64>,
}

impl Evaluation {
    pub fn knots(&self) -> &Knots {
        &self.basis.knots
    }
}

/// Scores `direction`; `Ok(None)` when the indices are degenerate or the
/// design is singular, i.e. the posterior density is zero there.
pub fn evaluate(
    direction: &Direction,
    m: &[u8],
    residuals: &[f64],
    matrices: &[SymMatrix],
    settings: &SweepSettings,
) -> Result<Option<Evaluation>> {
    if residuals.len() != matrices.len() {
        return Err(PbrError::DimensionMismatch {
            expected: matrices.len(),
            found: residuals.len(),
        });
    }
    let u = projection_indices(matrices, direction.gamma());
    let knots = match splines::make_knots(&u, settings.basis_size) {
        Ok(k) => k,
        Err(PbrError::DegenerateIndices) => return Ok(None),
        Err(e) => return Err(e),
    };
    let basis = splines::eval_basis(&u, &knots)?;
    let scored = match splines::score_design(
        &basis,
        residuals,
        settings.rho,
        settings.sigma2_prior.shape,
        settings.sigma2_prior.scale,
    ) {
        Ok(s) => s,
        Err(PbrError::SingularDesign) => return Ok(None),
        Err(e) => return Err(e),
    };
    let log_prior = ssl_prior::log_prior_gamma(direction.theta(), m, &settings.prior);
    Ok(Some(Evaluation {
        log_post: log_prior + scored.log_score,
        basis,
        c0: scored.c0,
    }))
}

/// Log posterior of `gamma` up to a constant; `-inf` for degenerate indices.
pub fn log_posterior_gamma(
    direction: &Direction,
    m: &[u8],
    residuals: &[f64],
    matrices: &[SymMatrix],
    settings: &SweepSettings,
) -> Result<f64> {
    Ok(evaluate(direction, m, residuals, matrices, settings)?.map_or(f64::NEG_INFINITY, |e| e.log_post))
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub component: ComponentState,
    pub accepted: bool,
    pub log_post_current: f64,
    /// Uncentered ridge values at the training indices of the new state.
    pub fitted: Vec<f64>,
}

pub fn mh_sweep<R: Rng + ?Sized>(
    rng: &mut R,
    component: &ComponentState,
    residuals: &[f64],
    matrices: &[SymMatrix],
    settings: &SweepSettings,
) -> Result<SweepResult> {
    let mut next = component.clone();

    if let (PriorSpec::SpikeSlab(ssl), true) = (&settings.prior, settings.update_allocations) {
        next.m = ssl_prior::gibbs_update_m(rng, next.direction.theta(), next.w, ssl);
        next.w = ssl_prior::gibbs_update_w(rng, &next.m, ssl.alpha_w, ssl.beta_w);
    }

    let current = evaluate(&next.direction, &next.m, residuals, matrices, settings)?;
    let raw = sample_vmf(rng, next.lambda, next.direction.gamma())?;
    let proposal_dir = Direction::from_vector(&raw)?;
    let proposal = evaluate(&proposal_dir, &next.m, residuals, matrices, settings)?;

    let lp_current = current.as_ref().map_or(f64::NEG_INFINITY, |e| e.log_post);
    let lp_proposal = proposal.as_ref().map_or(f64::NEG_INFINITY, |e| e.log_post);
    let log_u = rng.random::<f64>().ln();
    let accepted = proposal.is_some() && log_u < lp_proposal - lp_current;

    let (kept, log_post) = if accepted {
        next.direction = proposal_dir;
        (proposal, lp_proposal)
    } else {
        (current, lp_current)
    };
    next.accept_history.push(accepted);

    let fitted = match kept {
        Some(eval) => {
            let fitted = eval.basis.apply(&eval.c0);
            next.ridge = RidgeFunction {
                coeffs: eval.c0,
                knots: eval.basis.knots,
                center_offset: 0.0,
            };
            fitted
        }
        // Nowhere to put knots: keep the previous ridge function.
        None => {
            let u = projection_indices(matrices, next.direction.gamma());
            next.ridge.eval_raw(&u)?
        }
    };

    Ok(SweepResult {
        component: next,
        accepted,
        log_post_current: log_post,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::AcceptWindow;
    use crate::geometry::SphericalCoords;
    use crate::rng::stream;
    use crate::ssl_prior::SslHyper;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn settings(prior: PriorSpec, j: usize) -> SweepSettings {
        SweepSettings {
            basis_size: j,
            rho: 0.1,
            sigma2_prior: InvGammaPrior { shape: 1.0, scale: 1.0 },
            prior,
            update_allocations: true,
        }
    }

    fn ssl() -> PriorSpec {
        PriorSpec::SpikeSlab(SslHyper {
            h0: 0.1,
            h1: 1.0,
            alpha_w: 1.0,
            beta_w: 1.0,
        })
    }

    fn random_problem(seed: u64, p: usize, n: usize) -> (Vec<SymMatrix>, Vec<f64>, Direction) {
        let mut rng = stream(seed, "sweep-test");
        let mats: Vec<SymMatrix> = (0..n)
            .map(|_| SymMatrix::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let truth = Direction::from_vector(&(0..p).map(|l| 1.0 + l as f64).collect::<Vec<_>>()).unwrap();
        let u = projection_indices(&mats, truth.gamma());
        let y: Vec<f64> = u
            .iter()
            .map(|x| x + 0.3 * x * x + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (mats, y, truth)
    }

    fn component(dir: Direction, lambda: f64) -> ComponentState {
        let p = dir.dim();
        ComponentState {
            direction: dir,
            ridge: RidgeFunction::zero(Knots::new(0.0, 1.0, vec![0.5, 0.6]).unwrap()),
            m: vec![0; p - 1],
            w: 0.5,
            lambda,
            accept_history: AcceptWindow::default(),
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (mats, y, truth) = random_problem(1, 4, 30);
        let s = settings(ssl(), 4);
        let a = log_posterior_gamma(&truth, &[1, 0, 1], &y, &mats, &s).unwrap();
        let b = log_posterior_gamma(&truth, &[1, 0, 1], &y, &mats, &s).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_residuals_leave_only_the_prior() {
        let (mats, _, _) = random_problem(2, 4, 30);
        let r = vec![0.0; 30];
        let s = settings(ssl(), 4);
        let m = [0, 1, 0];
        let d1 = Direction::from_vector(&[0.3, -0.2, 0.5, 0.7]).unwrap();
        let d2 = Direction::from_vector(&[0.9, 0.1, -0.4, 0.2]).unwrap();
        let diff = log_posterior_gamma(&d1, &m, &r, &mats, &s).unwrap()
            - log_posterior_gamma(&d2, &m, &r, &mats, &s).unwrap();
        let prior_diff = ssl_prior::log_prior_gamma(d1.theta(), &m, &s.prior)
            - ssl_prior::log_prior_gamma(d2.theta(), &m, &s.prior);
        assert!((diff - prior_diff).abs() < 1e-12);
    }

    #[test]
    fn degenerate_indices_score_minus_infinity() {
        let mats = vec![SymMatrix::identity(3); 10];
        let y = vec![1.0; 10];
        let d = Direction::last_axis(3);
        let lp = log_posterior_gamma(&d, &[0, 0], &y, &mats, &settings(ssl(), 3)).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn huge_concentration_accepts_almost_everything() {
        let (mats, y, truth) = random_problem(3, 4, 40);
        let s = settings(ssl(), 4);
        let mut rng = stream(3, "sweep-accept");
        let mut comp = component(truth, 1e9);
        let mut accepted = 0;
        for _ in 0..1000 {
            let res = mh_sweep(&mut rng, &comp, &y, &mats, &s).unwrap();
            accepted += usize::from(res.accepted);
            comp = res.component;
        }
        assert!(accepted >= 950, "{accepted}");
    }

    #[test]
    fn ridge_coefficients_track_the_current_direction() {
        let (mats, y, truth) = random_problem(4, 5, 50);
        let s = settings(ssl(), 4);
        let mut rng = stream(4, "sweep-coef");
        let start = Direction::from_vector(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let mut comp = component(start, 50.0);
        for _ in 0..200 {
            let res = mh_sweep(&mut rng, &comp, &y, &mats, &s).unwrap();
            assert!(!res.log_post_current.is_nan());
            comp = res.component;
            let u = projection_indices(&mats, comp.direction.gamma());
            let knots = splines::make_knots(&u, 4).unwrap();
            assert_eq!(knots, comp.ridge.knots);
            let post = splines::posterior_coeffs(&splines::eval_basis(&u, &knots).unwrap(), &y, 0.1).unwrap();
            for (a, b) in post.c0.iter().zip(&comp.ridge.coeffs) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!(res.fitted.iter().zip(comp.ridge.eval_raw(&u).unwrap()).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        let _ = truth;
    }

    #[test]
    fn uniform_prior_ignores_allocation_switch() {
        let (mats, y, _) = random_problem(5, 4, 40);
        let mut on = settings(PriorSpec::Uniform, 3);
        on.update_allocations = true;
        let mut off = on.clone();
        off.update_allocations = false;
        let start = component(Direction::from_vector(&[0.5, 0.5, 0.5, 0.5]).unwrap(), 30.0);
        let run = |s: &SweepSettings| {
            let mut rng = stream(5, "sweep-uniform");
            let mut comp = start.clone();
            let mut flags = Vec::new();
            for _ in 0..300 {
                let res = mh_sweep(&mut rng, &comp, &y, &mats, s).unwrap();
                flags.push(res.accepted);
                comp = res.component;
            }
            (flags, comp.direction)
        };
        assert_eq!(run(&on), run(&off));
    }

    #[test]
    fn proposals_stay_canonical() {
        let (mats, y, _) = random_problem(6, 3, 30);
        let s = settings(ssl(), 3);
        let mut rng = stream(6, "sweep-canon");
        // start on the equator so half of the raw proposals need folding
        let mut comp = component(
            Direction::from_theta(SphericalCoords::new(vec![0.0, 1.5]).unwrap()),
            5.0,
        );
        for _ in 0..500 {
            comp = mh_sweep(&mut rng, &comp, &y, &mats, &s).unwrap().component;
            assert!(*comp.direction.gamma().last().unwrap() >= 0.0);
        }
    }
}
