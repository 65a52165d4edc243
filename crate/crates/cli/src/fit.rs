use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ppbr_core::backfitter::{replication_label, run_chain};
use ppbr_core::data_model::Chain;
use ppbr_core::evaluation::{waic, Waic};
use ppbr_core::io::{read_dataset_csv, write_chain_dir, write_json, write_timings};
use ppbr_core::rng::stream;

use crate::config::{resolve, FileConfig, GridPoint, Overrides, PriorKind, Resolved};
use crate::output::prepare_dir;

pub const SELECTION_FILE: &str = "selection.json";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Training CSV (`y` column followed by the packed upper triangles).
    #[arg(long)]
    data: PathBuf,
    /// TOML file with [model], [priors], [mcmc] and [grid] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum)]
    prior: Option<PriorKind>,
    /// Number of additive components K.
    #[arg(long = "K")]
    components: Option<usize>,
    /// Spline basis size J.
    #[arg(long = "J")]
    basis_size: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    h0: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    grid_rho: Option<Vec<f64>>,
    #[arg(long = "grid-J", value_delimiter = ',')]
    grid_basis_size: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid_h0: Option<Vec<f64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent chains per grid point.
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "PPBR_JOBS")]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    #[serde(flatten)]
    pub point: GridPoint,
    pub dir: String,
    pub chains: usize,
    pub waic: Waic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub criterion: String,
    pub selected: usize,
    /// Grid point directory, relative to the fit output directory.
    pub selected_dir: String,
    pub points: Vec<PointSummary>,
}

pub fn gridpoint_dir(index: usize) -> String {
    format!("gridpoint-{index}")
}

pub fn run(args: Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        components: args.components,
        basis_size: args.basis_size,
        rho: args.rho,
        prior: args.prior,
        h0: args.h0,
        iterations: args.iterations,
        warmup: args.warmup,
        seed: args.seed,
        chains: args.chains,
        grid_rho: args.grid_rho,
        grid_basis_size: args.grid_basis_size,
        grid_h0: args.grid_h0,
    };
    let resolved = resolve(file, flags)?;
    let data = read_dataset_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    prepare_dir(&args.out, args.force)?;
    write_json(&args.out.join("fit.json"), &resolved)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()?;
    let summaries = pool.install(|| fit_grid(&resolved, &data, &args.out))?;

    let best = summaries
        .iter()
        .min_by(|a, b| a.waic.waic.total_cmp(&b.waic.waic).then(a.point.index.cmp(&b.point.index)))
        .expect("grid is never empty");
    let selection = Selection {
        criterion: "waic".into(),
        selected: best.point.index,
        selected_dir: best.dir.clone(),
        points: summaries.clone(),
    };
    write_json(&args.out.join(SELECTION_FILE), &selection)?;
    Ok(())
}

fn fit_grid(resolved: &Resolved, data: &ppbr_core::Dataset, out: &Path) -> Result<Vec<PointSummary>> {
    let grid = resolved.grid();
    let jobs: Vec<(usize, usize)> = grid
        .iter()
        .flat_map(|g| (0..resolved.chains).map(move |j| (g.index, j)))
        .collect();
    let chains: Vec<Chain> = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<Chain> {
            let cfg = resolved.config_for(&grid[i])?;
            let label = replication_label(&format!("fit/{}", gridpoint_dir(i)), j);
            let start = Instant::now();
            let chain = run_chain(stream(cfg.seed, &label), data, &cfg)
                .with_context(|| format!("grid point {i}, chain {j}"))?;
            let seconds = start.elapsed().as_secs_f64();
            let dir = out.join(gridpoint_dir(i)).join(format!("chain-{j}"));
            write_chain_dir(&dir, &chain, &cfg, &label)?;
            write_timings(&dir, seconds)?;
            Ok(chain)
        })
        .collect::<Result<_>>()?;

    grid.iter()
        .map(|point| {
            let mine: Vec<Chain> = jobs
                .iter()
                .zip(&chains)
                .filter(|((i, _), _)| *i == point.index)
                .map(|(_, c)| c.clone())
                .collect();
            let pooled = Chain::pooled(&mine)?;
            Ok(PointSummary {
                point: point.clone(),
                dir: gridpoint_dir(point.index),
                chains: mine.len(),
                waic: waic(&pooled.loglik)?,
            })
        })
        .collect()
}
