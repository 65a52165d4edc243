use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use ppbr_core::backfitter::predict;
use ppbr_core::data_model::{Chain, Direction, SymMatrix};
use ppbr_core::evaluation::{
    acs_samples, align, align_by_monotonicity, coverage_report, linear_grid, mspe, posterior_index_ranges, quantile,
    ridge_summary, truth_index_ranges, waic, AlignmentMap, CoverageEntry, Waic,
};
use ppbr_core::io::{read_json, read_matrix_table, write_atomic, write_json};
use ppbr_core::simulation::Truth;

use crate::output::{check_target, csv_bytes, prepare_dir};
use crate::predict::load_chain;

pub const METRICS_FILE: &str = "metrics.json";
pub const RIDGE_FILE: &str = "ridge_summary.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// Match sampled components to the true directions.
    Truth,
    /// Order components by the trend of their ridge functions.
    ByMonotonicity,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Fit output, grid point or chain directory.
    #[arg(long, conflicts_with = "glob")]
    chain: Option<PathBuf>,
    /// Training CSV; needed for ridge-function grids and monotonicity alignment.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test CSV with a `y` column.
    #[arg(long)]
    test: Option<PathBuf>,
    /// `predictions.csv` from `ppbr predict`; computed from the chain when absent.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// `truth.json` from `ppbr simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "truth")]
    align: Alignment,
    /// Credible level for coordinate intervals.
    #[arg(long, default_value_t = 0.8)]
    level: f64,
    /// Points per ridge-function grid.
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Aggregate existing metrics files instead, e.g. 'runs/*/metrics.json'.
    #[arg(long)]
    glob: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsSummary {
    pub median: Vec<f64>,
    /// `samples[k][t]`.
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub level: f64,
    /// Fraction of coordinates whose interval contains the truth.
    pub cover_ci: f64,
    pub len_ci: f64,
    pub entries: Vec<CoverageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mspe: Option<f64>,
    pub n_test: Option<usize>,
    pub waic: Option<Waic>,
    pub alignment: Option<Alignment>,
    pub acs: Option<AcsSummary>,
    pub coverage: Option<CoverageSummary>,
    /// File name of the ridge-function bands, when written.
    pub ridge_summary: Option<String>,
}

pub fn run(args: Args) -> Result<()> {
    if let Some(pattern) = &args.glob {
        return aggregate(pattern, &args.out, args.force);
    }
    let target = args.out.join(METRICS_FILE);
    check_target(&target, args.force)?;

    let chain = args.chain.as_deref().map(load_chain).transpose()?;
    let train = args
        .train
        .as_deref()
        .map(|p| read_matrix_table(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let truth_dirs = match &args.truth {
        Some(p) => read_json::<Truth>(p)?.directions(),
        None => None,
    };

    let mut metrics = Metrics {
        mspe: None,
        n_test: None,
        waic: None,
        alignment: None,
        acs: None,
        coverage: None,
        ridge_summary: None,
    };

    if let Some(test_path) = &args.test {
        let test = read_matrix_table(test_path)?;
        let Some(y) = test.responses else {
            bail!("{} has no y column", test_path.display());
        };
        let point = match (&args.predictions, &chain) {
            (Some(p), _) => read_predictions(p)?,
            (None, Some(c)) => predict(c, &test.matrices)?.point,
            (None, None) => bail!("--test needs --predictions or --chain"),
        };
        metrics.mspe = Some(mspe(&point, &y)?);
        metrics.n_test = Some(y.len());
    }

    if let Some(chain) = &chain {
        metrics.waic = Some(waic(&chain.loglik)?);
        let train_mats = train.as_ref().map(|t| t.matrices.as_slice());
        let map = alignment(chain, args.align, truth_dirs.as_deref(), train_mats)?;
        if let (Some((map, mode)), Some(truth)) = (&map, &truth_dirs) {
            if *mode == Alignment::Truth {
                let samples = acs_samples(chain, map, truth)?;
                let median = samples.iter().map(|s| quantile(s, 0.5)).collect::<ppbr_core::Result<_>>()?;
                metrics.acs = Some(AcsSummary { median, samples });
                let entries = coverage_report(chain, map, truth, args.level)?;
                let n = entries.len() as f64;
                metrics.coverage = Some(CoverageSummary {
                    level: args.level,
                    cover_ci: entries.iter().filter(|e| e.cover).count() as f64 / n,
                    len_ci: entries.iter().map(|e| e.length).sum::<f64>() / n,
                    entries,
                });
            }
        }
        if let (Some((map, mode)), Some(train)) = (&map, train_mats) {
            metrics.alignment = Some(*mode);
            let ranges = match (mode, &truth_dirs) {
                (Alignment::Truth, Some(t)) => truth_index_ranges(t, train),
                _ => posterior_index_ranges(chain, map, train),
            };
            let grids: Vec<Vec<f64>> = ranges
                .iter()
                .map(|&(lo, hi)| linear_grid(lo, hi, args.grid_points))
                .collect();
            let bands = ridge_summary(chain, map, &grids)?;
            let header: Vec<String> = ["component", "u", "median", "lo", "hi"].map(String::from).to_vec();
            let rows = bands.iter().enumerate().flat_map(|(k, b)| {
                (0..b.grid.len()).map(move |j| {
                    vec![
                        (k + 1).to_string(),
                        b.grid[j].to_string(),
                        b.median[j].to_string(),
                        b.lo[j].to_string(),
                        b.hi[j].to_string(),
                    ]
                })
            });
            let ridge_path = args.out.join(RIDGE_FILE);
            check_target(&ridge_path, args.force)?;
            write_atomic(&ridge_path, &csv_bytes(&header, rows)?)?;
            metrics.ridge_summary = Some(RIDGE_FILE.into());
        } else if let Some((_, mode)) = &map {
            metrics.alignment = Some(*mode);
        }
    }

    write_json(&target, &metrics)?;
    Ok(())
}

/// Truth alignment needs known directions; without them the monotonicity
/// ordering is used when training data is available.
fn alignment(
    chain: &Chain,
    requested: Alignment,
    truth: Option<&[Direction]>,
    train: Option<&[SymMatrix]>,
) -> Result<Option<(AlignmentMap, Alignment)>> {
    match (requested, truth, train) {
        (Alignment::Truth, Some(t), _) => Ok(Some((align(chain, t)?, Alignment::Truth))),
        (_, _, Some(m)) => Ok(Some((align_by_monotonicity(chain, m)?, Alignment::ByMonotonicity))),
        _ => Ok(None),
    }
}

fn read_predictions(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        let v: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .with_context(|| format!("{}: line {}: bad prediction", path.display(), i + 2))?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct CoordinateCoverage {
    k: usize,
    l: usize,
    cover_ci: f64,
    len_ci: f64,
    runs: usize,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    files: Vec<String>,
    runs: usize,
    mspe_mean: Option<f64>,
    cover_ci_mean: Option<f64>,
    len_ci_mean: Option<f64>,
    coverage: Vec<CoordinateCoverage>,
}

fn aggregate(pattern: &str, out: &Path, force: bool) -> Result<()> {
    let mut files: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad glob pattern {pattern:?}"))?
        .collect::<std::result::Result<_, _>>()?;
    files.sort();
    if files.is_empty() {
        bail!("no files match {pattern:?}");
    }
    let runs: Vec<Metrics> = files
        .iter()
        .map(|f| read_json(f).with_context(|| format!("reading {}", f.display())))
        .collect::<Result<_>>()?;

    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mspes: Vec<f64> = runs.iter().filter_map(|m| m.mspe).collect();
    let mut per_coord: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    let mut covers = Vec::new();
    let mut lengths = Vec::new();
    for cov in runs.iter().filter_map(|m| m.coverage.as_ref()) {
        covers.push(cov.cover_ci);
        lengths.push(cov.len_ci);
        for e in &cov.entries {
            let slot = per_coord.entry((e.k, e.l)).or_insert((0.0, 0.0, 0));
            slot.0 += f64::from(u8::from(e.cover));
            slot.1 += e.length;
            slot.2 += 1;
        }
    }
    let agg = Aggregate {
        files: files.iter().map(|f| f.display().to_string()).collect(),
        runs: runs.len(),
        mspe_mean: mean(&mspes),
        cover_ci_mean: mean(&covers),
        len_ci_mean: mean(&lengths),
        coverage: per_coord
            .into_iter()
            .map(|((k, l), (c, len, n))| CoordinateCoverage {
                k,
                l,
                cover_ci: c / n as f64,
                len_ci: len / n as f64,
                runs: n,
            })
            .collect(),
    };
    prepare_dir(out, true)?;
    let target = out.join(AGGREGATE_FILE);
    check_target(&target, force)?;
    write_json(&target, &agg)?;
    Ok(())
}
