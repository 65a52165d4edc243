use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ppbr_core::backfitter::predict;
use ppbr_core::data_model::Chain;
use ppbr_core::io::{find_chain_dirs, read_chain_dir, read_json, read_matrix_table, write_atomic, META_FILE};

use crate::fit::{Selection, SELECTION_FILE};
use crate::output::{check_target, csv_bytes};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const PER_DRAW_FILE: &str = "predictions_per_draw.csv";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// A chain directory, a grid point directory (chains are pooled) or a
    /// fit output directory (the WAIC-selected grid point is used).
    #[arg(long)]
    chain: PathBuf,
    /// CSV of predictor matrices; a `y` column is allowed and ignored.
    #[arg(long)]
    matrices: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write the draws x subjects matrix of per-draw predictions.
    #[arg(long)]
    per_draw: bool,
    #[arg(long)]
    force: bool,
}

/// Resolves `path` to chain directories and pools their draws.
pub fn load_chain(path: &Path) -> Result<Chain> {
    if !path.is_dir() {
        bail!("chain directory {} does not exist", path.display());
    }
    let root = if path.join(SELECTION_FILE).is_file() {
        let sel: Selection = read_json(&path.join(SELECTION_FILE))?;
        path.join(sel.selected_dir)
    } else {
        path.to_path_buf()
    };
    let dirs = if root.join(META_FILE).is_file() {
        vec![root.clone()]
    } else {
        find_chain_dirs(&root)?
    };
    if dirs.is_empty() {
        bail!("no chain directories under {}", root.display());
    }
    let chains = dirs
        .iter()
        .map(|d| read_chain_dir(d).map(|(c, _)| c).with_context(|| format!("reading chain {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Chain::pooled(&chains)?)
}

pub fn run(args: Args) -> Result<()> {
    let chain = load_chain(&args.chain)?;
    let table = read_matrix_table(&args.matrices).with_context(|| format!("reading {}", args.matrices.display()))?;
    let pred = predict(&chain, &table.matrices).context("predictor dimension does not match the chain")?;

    let target = args.out.join(PREDICTIONS_FILE);
    check_target(&target, args.force)?;
    let header = vec!["subject".to_string(), "prediction".to_string()];
    let rows = pred.point.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]);
    write_atomic(&target, &csv_bytes(&header, rows)?)?;

    if args.per_draw {
        let target = args.out.join(PER_DRAW_FILE);
        check_target(&target, args.force)?;
        let mut header = vec!["draw".to_string()];
        header.extend((0..table.matrices.len()).map(|i| format!("subject_{i}")));
        let rows = pred.per_draw.iter().enumerate().map(|(t, row)| {
            let mut r = vec![t.to_string()];
            r.extend(row.iter().map(ToString::to_string));
            r
        });
        write_atomic(&target, &csv_bytes(&header, rows)?)?;
    }
    Ok(())
}
