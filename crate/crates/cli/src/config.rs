//! Fit configuration file:
//!
//! ```toml
//! [model]
//! components = 2
//! basis_size = 4
//! rho = 0.1
//!
//! [priors]
//! kind = "spike_slab"   # or "uniform"
//! h0 = 0.05
//! h1 = 1.0
//! alpha_w = 1.0
//! beta_w = 1.0
//! mu_mean = 0.0
//! mu_var = 9.0
//! sigma2_shape = 1.0
//! sigma2_scale = 1.0
//!
//! [mcmc]
//! iterations = 13000
//! warmup = 10000
//! seed = 1
//! lambda_init = 10000.0
//! chains = 1
//!
//! [grid]
//! rho = [0.0, 0.1, 0.2]
//! basis_size = [2, 4, 6]
//! h0 = [0.025, 0.05, 0.075, 0.1]
//! ```
//!
//! Every key is optional. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ppbr_core::{FitConfig, PriorSpec, SslHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    SpikeSlab,
    Uniform,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub priors: PriorSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub grid: GridSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub components: Option<usize>,
    pub basis_size: Option<usize>,
    pub rho: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub kind: Option<PriorKind>,
    pub h0: Option<f64>,
    pub h1: Option<f64>,
    pub alpha_w: Option<f64>,
    pub beta_w: Option<f64>,
    pub mu_mean: Option<f64>,
    pub mu_var: Option<f64>,
    pub sigma2_shape: Option<f64>,
    pub sigma2_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: Option<usize>,
    pub warmup: Option<usize>,
    pub seed: Option<u64>,
    pub lambda_init: Option<f64>,
    pub chains: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub rho: Option<Vec<f64>>,
    pub basis_size: Option<Vec<usize>>,
    pub h0: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// Scalar settings after merging defaults, file and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub base: FitConfig,
    pub prior_kind: PriorKind,
    pub chains: usize,
    pub rho: Vec<f64>,
    pub basis_size: Vec<usize>,
    /// Empty under the uniform prior.
    pub h0: Vec<f64>,
}

/// Flag values; `None` leaves the file (or default) value in place.
#[derive(Debug, Default)]
pub struct Overrides {
    pub components: Option<usize>,
    pub basis_size: Option<usize>,
    pub rho: Option<f64>,
    pub prior: Option<PriorKind>,
    pub h0: Option<f64>,
    pub iterations: Option<usize>,
    pub warmup: Option<usize>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub grid_rho: Option<Vec<f64>>,
    pub grid_basis_size: Option<Vec<usize>>,
    pub grid_h0: Option<Vec<f64>>,
}

pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Resolved> {
    let mut cfg = FitConfig::default();
    let PriorSpec::SpikeSlab(mut ssl) = cfg.prior else {
        unreachable!("default prior is spike-and-slab")
    };

    let m = file.model;
    cfg.components = flags.components.or(m.components).unwrap_or(cfg.components);
    cfg.basis_size = flags.basis_size.or(m.basis_size).unwrap_or(cfg.basis_size);
    cfg.rho = flags.rho.or(m.rho).unwrap_or(cfg.rho);

    let p = file.priors;
    let prior_kind = flags.prior.or(p.kind).unwrap_or(PriorKind::SpikeSlab);
    ssl = SslHyper {
        h0: flags.h0.or(p.h0).unwrap_or(ssl.h0),
        h1: p.h1.unwrap_or(ssl.h1),
        alpha_w: p.alpha_w.unwrap_or(ssl.alpha_w),
        beta_w: p.beta_w.unwrap_or(ssl.beta_w),
    };
    cfg.prior = match prior_kind {
        PriorKind::SpikeSlab => PriorSpec::SpikeSlab(ssl),
        PriorKind::Uniform => PriorSpec::Uniform,
    };
    cfg.mu_prior.mean = p.mu_mean.unwrap_or(cfg.mu_prior.mean);
    cfg.mu_prior.var = p.mu_var.unwrap_or(cfg.mu_prior.var);
    cfg.sigma2_prior.shape = p.sigma2_shape.unwrap_or(cfg.sigma2_prior.shape);
    cfg.sigma2_prior.scale = p.sigma2_scale.unwrap_or(cfg.sigma2_prior.scale);

    let mc = file.mcmc;
    cfg.iterations = flags.iterations.or(mc.iterations).unwrap_or(cfg.iterations);
    cfg.warmup = flags.warmup.or(mc.warmup).unwrap_or(cfg.warmup);
    cfg.seed = flags.seed.or(mc.seed).unwrap_or(cfg.seed);
    cfg.lambda_init = mc.lambda_init.unwrap_or(cfg.lambda_init);
    let chains = flags.chains.or(mc.chains).unwrap_or(1);

    // A scalar flag pins that axis even when the file lists a grid.
    let g = file.grid;
    let rho = flags
        .grid_rho
        .or(flags.rho.map(|v| vec![v]))
        .or(g.rho)
        .unwrap_or_else(|| vec![cfg.rho]);
    let basis_size = flags
        .grid_basis_size
        .or(flags.basis_size.map(|v| vec![v]))
        .or(g.basis_size)
        .unwrap_or_else(|| vec![cfg.basis_size]);
    let h0 = match prior_kind {
        PriorKind::Uniform => Vec::new(),
        PriorKind::SpikeSlab => flags
            .grid_h0
            .or(flags.h0.map(|v| vec![v]))
            .or(g.h0)
            .unwrap_or_else(|| vec![ssl.h0]),
    };

    anyhow::ensure!(cfg.components >= 1, "model.components must be at least 1");
    anyhow::ensure!(chains >= 1, "mcmc.chains must be at least 1");
    anyhow::ensure!(
        !rho.is_empty() && !basis_size.is_empty(),
        "grid axes must not be empty"
    );
    anyhow::ensure!(
        prior_kind == PriorKind::Uniform || !h0.is_empty(),
        "grid.h0 must not be empty"
    );
    cfg.validate()?;

    Ok(Resolved {
        base: cfg,
        prior_kind,
        chains,
        rho,
        basis_size,
        h0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub rho: f64,
    pub basis_size: usize,
    /// `None` under the uniform prior.
    pub h0: Option<f64>,
}

impl Resolved {
    /// Grid points in `rho`-major, then `J`, then `h0` order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let h0: Vec<Option<f64>> = if self.h0.is_empty() {
            vec![None]
        } else {
            self.h0.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &rho in &self.rho {
            for &basis_size in &self.basis_size {
                for &h in &h0 {
                    out.push(GridPoint {
                        index: out.len(),
                        rho,
                        basis_size,
                        h0: h,
                    });
                }
            }
        }
        out
    }

    pub fn config_for(&self, point: &GridPoint) -> Result<FitConfig> {
        let mut cfg = self.base.clone();
        cfg.rho = point.rho;
        cfg.basis_size = point.basis_size;
        if let (PriorSpec::SpikeSlab(ssl), Some(h0)) = (&mut cfg.prior, point.h0) {
            ssl.h0 = h0;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
