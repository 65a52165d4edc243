//! On-disk formats.
//!
//! - Dataset CSV: header `y,m_1_1,m_1_2,...,m_p_p` (packed upper triangle,
//!   row-major, 1-based), one subject per row. The `y` column may be
//!   omitted for predictor-only files.
//! - Chain directory: `meta.json` (configuration and shapes), `draws.csv`
//!   (one row per stored draw) and `loglik.bin` (little-endian `f64`,
//!   row-major `n_obs x n_draws`). Wall-clock timings go to a separate
//!   `timings.json` so the other three files depend only on the inputs.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit. All writes go to a temporary
//! file that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_model::{
    packed_len, AcceptWindow, Chain, ComponentState, Dataset, Direction, FitConfig, LogLikMatrix,
    ModelState, RidgeFunction, SymMatrix,
};
use crate::error::{PbrError, Result};
use crate::geometry::SphericalCoords;
use crate::splines::Knots;

pub const META_FILE: &str = "meta.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const LOGLIK_FILE: &str = "loglik.bin";
pub const TIMINGS_FILE: &str = "timings.json";

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| PbrError::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PbrError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn matrix_columns(p: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(packed_len(p));
    for j in 1..=p {
        for k in j..=p {
            cols.push(format!("m_{j}_{k}"));
        }
    }
    cols
}

/// `p` with `p (p + 1) / 2 = len`, if any.
fn dim_from_packed(len: usize) -> Option<usize> {
    (1..=len).take_while(|p| packed_len(*p) <= len).find(|p| packed_len(*p) == len)
}

fn to_csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.into_inner().map_err(|e| PbrError::Io(e.into_error()))
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut header = vec!["y".to_string()];
    header.extend(matrix_columns(data.dim()));
    let rows = data.matrices().iter().zip(data.responses()).map(|(m, y)| {
        let mut r = Vec::with_capacity(m.upper().len() + 1);
        r.push(*y);
        r.extend_from_slice(m.upper());
        r
    });
    write_atomic(path, &to_csv_bytes(&header, rows)?)
}

pub fn write_matrices_csv(path: &Path, matrices: &[SymMatrix]) -> Result<()> {
    let p = matrices.first().map_or(1, SymMatrix::dim);
    let rows = matrices.iter().map(|m| m.upper().to_vec());
    write_atomic(path, &to_csv_bytes(&matrix_columns(p), rows)?)
}

/// Predictor matrices plus the responses when a `y` column is present.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTable {
    pub matrices: Vec<SymMatrix>,
    pub responses: Option<Vec<f64>>,
}

impl MatrixTable {
    pub fn into_dataset(self) -> Result<Dataset> {
        let y = self
            .responses
            .ok_or_else(|| PbrError::InvalidInput("file has no y column".into()))?;
        Dataset::new(self.matrices, y)
    }
}

pub fn read_matrix_table(path: &Path) -> Result<MatrixTable> {
    let name = path.display().to_string();
    let parse_err = |line: usize, message: String| PbrError::Parse {
        path: name.clone(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let has_y = header.first().is_some_and(|h| h == "y");
    let offset = usize::from(has_y);
    let p = dim_from_packed(header.len() - offset).ok_or_else(|| {
        parse_err(1, format!("{} matrix columns is not p(p+1)/2 for any p", header.len() - offset))
    })?;
    let expected = matrix_columns(p);
    for (i, (got, want)) in header[offset..].iter().zip(&expected).enumerate() {
        if got != want {
            return Err(parse_err(1, format!("column {}: expected {want}, found {got}", i + offset + 1)));
        }
    }

    let mut matrices = Vec::new();
    let mut responses = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let mut values = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: not a number: {field:?}", header[col])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", header[col])));
            }
            values.push(v);
        }
        if has_y {
            responses.push(values[0]);
        }
        matrices.push(SymMatrix::new(p, values[offset..].to_vec())?);
    }
    if matrices.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(MatrixTable {
        matrices,
        responses: has_y.then_some(responses),
    })
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    read_matrix_table(path)?.into_dataset()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub p: usize,
    pub n: usize,
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglikLayout {
    pub file: String,
    pub order: String,
    pub dtype: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub config: FitConfig,
    /// RNG stream label under `config.seed`.
    pub stream: String,
    pub p: usize,
    pub n_obs: usize,
    pub n_draws: usize,
    pub components: usize,
    pub basis_size: usize,
    pub loglik: LoglikLayout,
}

fn draw_header(p: usize, k_total: usize, j: usize) -> Vec<String> {
    let mut h = vec!["mu".to_string(), "sigma2".to_string()];
    for k in 1..=k_total {
        h.push(format!("k{k}_w"));
        h.push(format!("k{k}_lambda"));
        h.extend((1..p).map(|l| format!("k{k}_m_{l}")));
        h.extend((1..p).map(|l| format!("k{k}_theta_{l}")));
        h.extend((1..=p).map(|l| format!("k{k}_gamma_{l}")));
        h.extend((1..=j).map(|l| format!("k{k}_knot_{l}")));
        h.extend((1..=j).map(|l| format!("k{k}_c_{l}")));
        h.push(format!("k{k}_center_offset"));
    }
    h
}

fn draw_row(s: &ModelState) -> Vec<f64> {
    let mut r = vec![s.mu, s.sigma2];
    for c in &s.components {
        r.push(c.w);
        r.push(c.lambda);
        r.extend(c.m.iter().map(|&m| f64::from(m)));
        r.extend_from_slice(c.direction.theta().as_slice());
        r.extend_from_slice(c.direction.gamma());
        r.extend(c.ridge.knots.all());
        r.extend_from_slice(&c.ridge.coeffs);
        r.push(c.ridge.center_offset);
    }
    r
}

/// Writes `meta.json`, `draws.csv` and `loglik.bin` into `dir`.
pub fn write_chain_dir(dir: &Path, chain: &Chain, config: &FitConfig, stream: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = chain.dim;
    let k_total = config.components;
    let j = config.basis_size;
    if let Some(bad) = chain.draws.iter().find(|d| d.components.len() != k_total) {
        return Err(PbrError::DimensionMismatch {
            expected: k_total,
            found: bad.components.len(),
        });
    }
    let meta = ChainMeta {
        config: config.clone(),
        stream: stream.to_string(),
        p,
        n_obs: chain.loglik.n_obs(),
        n_draws: chain.draws.len(),
        components: k_total,
        basis_size: j,
        loglik: LoglikLayout {
            file: LOGLIK_FILE.into(),
            order: "row-major (observation, draw)".into(),
            dtype: "f64 little-endian".into(),
            rows: chain.loglik.n_obs(),
            cols: chain.loglik.n_draws(),
        },
    };
    let draws = to_csv_bytes(&draw_header(p, k_total, j), chain.draws.iter().map(draw_row))?;
    let mut bin = Vec::with_capacity(chain.loglik.values().len() * 8);
    for v in chain.loglik.values() {
        bin.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&dir.join(DRAWS_FILE), &draws)?;
    write_atomic(&dir.join(LOGLIK_FILE), &bin)?;
    write_json(&dir.join(META_FILE), &meta)
}

fn parse_draw(row: &[f64], p: usize, k_total: usize, j: usize) -> Result<ModelState> {
    let mut it = row.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let head = take(2);
    let mut components = Vec::with_capacity(k_total);
    for _ in 0..k_total {
        let wl = take(2);
        let m = take(p - 1).into_iter().map(|v| v as u8).collect();
        let theta = SphericalCoords::new(take(p - 1))?;
        let gamma = take(p);
        let knots = take(j);
        let coeffs = take(j);
        let offset = take(1)[0];
        let knots = Knots::new(knots[0], knots[j - 1], knots[1..j - 1].to_vec())?;
        components.push(ComponentState {
            direction: Direction::from_parts(gamma, theta)?,
            ridge: RidgeFunction {
                coeffs,
                knots,
                center_offset: offset,
            },
            m,
            w: wl[0],
            lambda: wl[1],
            accept_history: AcceptWindow::default(),
        });
    }
    Ok(ModelState {
        mu: head[0],
        sigma2: head[1],
        components,
    })
}

pub fn read_chain_dir(dir: &Path) -> Result<(Chain, ChainMeta)> {
    if !dir.is_dir() {
        return Err(PbrError::InvalidInput(format!("chain directory not found: {}", dir.display())));
    }
    let meta: ChainMeta = read_json(&dir.join(META_FILE))?;
    let draws_path = dir.join(DRAWS_FILE);
    let name = draws_path.display().to_string();
    let header = draw_header(meta.p, meta.components, meta.basis_size);
    let mut rdr = csv::Reader::from_path(&draws_path)?;
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(PbrError::Parse {
            path: name,
            line: 1,
            message: "draws.csv header does not match meta.json".into(),
        });
    }
    let mut draws = Vec::with_capacity(meta.n_draws);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PbrError::Parse {
                path: name.clone(),
                line: i + 2,
                message: e.to_string(),
            })?;
        if row.len() != header.len() {
            return Err(PbrError::Parse {
                path: name.clone(),
                line: i + 2,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        draws.push(parse_draw(&row, meta.p, meta.components, meta.basis_size)?);
    }
    if draws.len() != meta.n_draws {
        return Err(PbrError::DimensionMismatch {
            expected: meta.n_draws,
            found: draws.len(),
        });
    }
    let bytes = fs::read(dir.join(&meta.loglik.file))?;
    if bytes.len() != meta.loglik.rows * meta.loglik.cols * 8 {
        return Err(PbrError::DimensionMismatch {
            expected: meta.loglik.rows * meta.loglik.cols * 8,
            found: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let loglik = LogLikMatrix::from_row_major(meta.loglik.rows, meta.loglik.cols, values)?;
    Ok((
        Chain {
            dim: meta.p,
            draws,
            loglik,
        },
        meta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: f64,
}

pub fn write_timings(dir: &Path, seconds: f64) -> Result<()> {
    write_json(&dir.join(TIMINGS_FILE), &Timings { seconds })
}

/// Sorted chain directories below `root` (any directory holding `meta.json`).
pub fn find_chain_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join(META_FILE).is_file() {
            out.push(d.clone());
        }
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
