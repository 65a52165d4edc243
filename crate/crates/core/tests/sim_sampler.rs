mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::Rng;

use ppbr_core::data_model::{AcceptWindow, ComponentState, Direction, InvGammaPrior, RidgeFunction};
use ppbr_core::geometry::SphericalCoords;
use ppbr_core::rng::stream;
use ppbr_core::sim_sampler::{log_posterior_gamma, mh_sweep, SweepSettings};
use ppbr_core::simulation::gen_predictors;
use ppbr_core::splines::Knots;
use ppbr_core::PriorSpec;

use common::{log_marginal_by_quadrature, normalize, total_variation};

fn settings() -> SweepSettings {
    SweepSettings {
        basis_size: 2,
        rho: 0.0,
        sigma2_prior: InvGammaPrior { shape: 1.0, scale: 1.0 },
        prior: PriorSpec::Uniform,
        update_allocations: true,
    }
}

#[test]
fn log_posterior_differences_match_oracle() {
    let mut rng = stream(31, "sim-sampler-grid");
    let n = 8;
    let mats = gen_predictors(&mut rng, 2, n);
    let r: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let s = settings();
    let oracle = |t: f64| {
        let g = [t.sin(), t.cos()];
        let b = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { mats[i].quad_form(&g) });
        log_marginal_by_quadrature(&b, &r, 0.0, 1.0, 1.0)
    };
    let ours = |t: f64| {
        let d = Direction::from_theta(SphericalCoords::new(vec![t]).unwrap());
        log_posterior_gamma(&d, &[0], &r, &mats, &s).unwrap()
    };
    let base = 0.1;
    for i in 0..25 {
        let t = -1.5 + 0.12 * i as f64;
        let diff = (ours(t) - ours(base)) - (oracle(t) - oracle(base));
        assert!(diff.abs() < 1e-8, "theta {t}: {diff}");
    }
}

#[test]
fn uniform_prior_chain_matches_grid() {
    let mut rng = stream(32, "sim-sampler-uniform");
    let n = 10;
    let mats = gen_predictors(&mut rng, 2, n);
    let r: Vec<f64> = mats
        .iter()
        .map(|m| 0.3 * m.quad_form(&[0.6, 0.8]) + rng.random::<f64>() - 0.5)
        .collect();
    let s = settings();
    let bins = 40;
    let width = PI / bins as f64;
    let mut target = vec![0.0; bins];
    let mut logs = Vec::new();
    for bin in 0..bins {
        for k in 0..30 {
            let t = -FRAC_PI_2 + width * (bin as f64 + (k as f64 + 0.5) / 30.0);
            let g = [t.sin(), t.cos()];
            let b = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { mats[i].quad_form(&g) });
            logs.push((bin, log_marginal_by_quadrature(&b, &r, 0.0, 1.0, 1.0)));
        }
    }
    let peak = logs.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    for (bin, l) in logs {
        target[bin] += (l - peak).exp();
    }
    normalize(&mut target);

    let mut comp = ComponentState {
        direction: Direction::last_axis(2),
        ridge: RidgeFunction::zero(Knots::new(0.0, 1.0, vec![]).unwrap()),
        m: vec![0],
        w: 0.5,
        lambda: 5.0,
        accept_history: AcceptWindow::default(),
    };
    let mut hist = vec![0.0; bins];
    for it in 0..81_000 {
        comp = mh_sweep(&mut rng, &comp, &r, &mats, &s).unwrap().component;
        comp.accept_history.clear();
        if it >= 1_000 {
            let t = comp.direction.theta().as_slice()[0];
            hist[(((t + FRAC_PI_2) / width) as usize).min(bins - 1)] += 1.0;
        }
    }
    normalize(&mut hist);
    let tv = total_variation(&hist, &target);
    assert!(tv < 0.05, "TV {tv}");
}
