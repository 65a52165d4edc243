//! Posterior summaries: prediction error, direction recovery, credible
//! intervals, ridge-function bands and WAIC.
//!
//! Quantiles use linear interpolation between order statistics (type 7)
//! throughout.

use serde::{Deserialize, Serialize};

use crate::data_model::{projection_indices, Chain, Direction, LogLikMatrix, SymMatrix};
use crate::error::{PbrError, Result};
use crate::geometry;
use crate::splines::quantile_sorted;

pub fn mspe(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(PbrError::InvalidInput("MSPE of an empty set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(PbrError::DimensionMismatch {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    let ss: f64 = predictions.iter().zip(truths).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ss / predictions.len() as f64)
}

/// Absolute cosine similarity `|u'v| / (|u| |v|)`.
pub fn acs(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(PbrError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (geometry::norm(u), geometry::norm(v));
    if !(nu > 0.0 && nv > 0.0) {
        return Err(PbrError::ZeroVector);
    }
    Ok((geometry::dot(u, v).abs() / (nu * nv)).min(1.0))
}

/// Which sampled component plays each reference role in each draw, and
/// with which sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// Chain-wide assignment `b_k` (truth alignment only).
    pub permutation: Option<Vec<usize>>,
    /// `slots[t][k]`: sampled component used as component `k` in draw `t`.
    pub slots: Vec<Vec<usize>>,
    /// `signs[t][k]`: +1 or -1 applied to that direction.
    pub signs: Vec<Vec<f64>>,
}

impl AlignmentMap {
    pub fn components(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }

    /// Direction of slot `k` in draw `t` after the sign flip.
    pub fn gamma(&self, chain: &Chain, t: usize, k: usize) -> Vec<f64> {
        let s = self.signs[t][k];
        chain.draws[t].components[self.slots[t][k]]
            .direction
            .gamma()
            .iter()
            .map(|v| s * v)
            .collect()
    }
}

fn check_components(chain: &Chain, k: usize) -> Result<()> {
    if chain.draws.is_empty() {
        return Err(PbrError::InvalidInput("chain has no draws".into()));
    }
    if let Some(d) = chain.draws.iter().find(|d| d.components.len() != k) {
        return Err(PbrError::DimensionMismatch {
            expected: k,
            found: d.components.len(),
        });
    }
    Ok(())
}

/// Greedy matching of sampled components to known directions.
///
/// For `k = 1..K` in order, `b_k` is the not-yet-used sampled component with
/// the largest summed ACS to `truth[k]` over draws. Each draw's direction is
/// then flipped when its sign at `l* = argmax_l |truth[k]_l|` disagrees with
/// the truth.
pub fn align(chain: &Chain, truth: &[Direction]) -> Result<AlignmentMap> {
    let k_total = truth.len();
    check_components(chain, k_total)?;
    let mut remaining: Vec<usize> = (0..k_total).collect();
    let mut perm = Vec::with_capacity(k_total);
    for target in truth {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (pos, &cand) in remaining.iter().enumerate() {
            let mut total = 0.0;
            for d in &chain.draws {
                total += acs(d.components[cand].direction.gamma(), target.gamma())?;
            }
            if total > best.0 {
                best = (total, pos);
            }
        }
        perm.push(remaining.remove(best.1));
    }

    let lead: Vec<usize> = truth
        .iter()
        .map(|d| {
            d.gamma()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map_or(0, |(l, _)| l)
        })
        .collect();
    let signs = chain
        .draws
        .iter()
        .map(|d| {
            (0..k_total)
                .map(|k| {
                    let sampled = d.components[perm[k]].direction.gamma()[lead[k]];
                    let reference = truth[k].gamma()[lead[k]];
                    if (sampled < 0.0) != (reference < 0.0) {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(AlignmentMap {
        slots: vec![perm.clone(); chain.draws.len()],
        permutation: Some(perm),
        signs,
    })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

/// Truth-free alignment: in every draw, components are ordered by the
/// correlation between their training indices and ridge values, most
/// negative first. With two components this puts the decreasing ridge in
/// slot 1 and the increasing one in slot 2.
pub fn align_by_monotonicity(chain: &Chain, train: &[SymMatrix]) -> Result<AlignmentMap> {
    let k_total = chain.components();
    check_components(chain, k_total)?;
    let mut slots = Vec::with_capacity(chain.draws.len());
    for d in &chain.draws {
        let mut scored = Vec::with_capacity(k_total);
        for (k, c) in d.components.iter().enumerate() {
            let u = projection_indices(train, c.direction.gamma());
            let g = c.ridge.eval(&u)?;
            scored.push((correlation(&u, &g), k));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        slots.push(scored.into_iter().map(|(_, k)| k).collect());
    }
    Ok(AlignmentMap {
        permutation: None,
        signs: vec![vec![1.0; k_total]; chain.draws.len()],
        slots,
    })
}

/// Per-draw ACS between aligned direction `k` and `truth[k]`.
pub fn acs_samples(chain: &Chain, map: &AlignmentMap, truth: &[Direction]) -> Result<Vec<Vec<f64>>> {
    (0..truth.len())
        .map(|k| {
            (0..chain.draws.len())
                .map(|t| acs(&map.gamma(chain, t, k), truth[k].gamma()))
                .collect()
        })
        .collect()
}

/// Equal-tailed interval at `level`.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(PbrError::InvalidInput(format!(
            "credible interval needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(PbrError::InvalidInput(format!("level must be in (0, 1), got {level}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(PbrError::NonFinite("credible interval samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail)))
}

pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(PbrError::InvalidInput("quantile of an empty set".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&s, q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    /// Zero-based component.
    pub k: usize,
    /// Zero-based coordinate.
    pub l: usize,
    pub truth: f64,
    pub lo: f64,
    pub hi: f64,
    pub cover: bool,
    pub length: f64,
}

/// Interval coverage of every coordinate of every aligned direction,
/// ordered component-major.
pub fn coverage_report(chain: &Chain, map: &AlignmentMap, truth: &[Direction], level: f64) -> Result<Vec<CoverageEntry>> {
    let mut out = Vec::new();
    for (k, target) in truth.iter().enumerate() {
        let draws: Vec<Vec<f64>> = (0..chain.draws.len()).map(|t| map.gamma(chain, t, k)).collect();
        for (l, &tv) in target.gamma().iter().enumerate() {
            let column: Vec<f64> = draws.iter().map(|g| g[l]).collect();
            let (lo, hi) = credible_interval(&column, level)?;
            out.push(CoverageEntry {
                k,
                l,
                truth: tv,
                lo,
                hi,
                cover: lo <= tv && tv <= hi,
                length: hi - lo,
            });
        }
    }
    Ok(out)
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Range of the true indices on the training predictors, per component.
pub fn truth_index_ranges(truth: &[Direction], train: &[SymMatrix]) -> Vec<(f64, f64)> {
    truth
        .iter()
        .map(|d| min_max(&projection_indices(train, d.gamma())))
        .collect()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `(min, max)` over draws and subjects of the aligned indices, per slot.
pub fn posterior_index_ranges(chain: &Chain, map: &AlignmentMap, train: &[SymMatrix]) -> Vec<(f64, f64)> {
    (0..map.components())
        .map(|k| {
            let mut range = (f64::INFINITY, f64::NEG_INFINITY);
            for t in 0..chain.draws.len() {
                let (lo, hi) = min_max(&projection_indices(train, &map.gamma(chain, t, k)));
                range = (range.0.min(lo), range.1.max(hi));
            }
            range
        })
        .collect()
}

/// Median of per-run lower bounds and of per-run upper bounds.
pub fn pooled_range(bounds: &[(f64, f64)]) -> Result<(f64, f64)> {
    let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    Ok((quantile(&lo, 0.5)?, quantile(&hi, 0.5)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeBand {
    pub grid: Vec<f64>,
    pub median: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Pointwise median and 10%/90% quantiles of each aligned ridge function
/// on its grid.
pub fn ridge_summary(chain: &Chain, map: &AlignmentMap, grids: &[Vec<f64>]) -> Result<Vec<RidgeBand>> {
    if grids.len() != map.components() {
        return Err(PbrError::DimensionMismatch {
            expected: map.components(),
            found: grids.len(),
        });
    }
    let mut out = Vec::with_capacity(grids.len());
    for (k, grid) in grids.iter().enumerate() {
        if grid.iter().any(|x| !x.is_finite()) {
            return Err(PbrError::NonFinite("ridge grid"));
        }
        let curves = (0..chain.draws.len())
            .map(|t| chain.draws[t].components[map.slots[t][k]].ridge.eval(grid))
            .collect::<Result<Vec<_>>>()?;
        let mut band = RidgeBand {
            grid: grid.clone(),
            median: Vec::with_capacity(grid.len()),
            lo: Vec::with_capacity(grid.len()),
            hi: Vec::with_capacity(grid.len()),
        };
        for j in 0..grid.len() {
            let mut col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
            col.sort_by(f64::total_cmp);
            band.median.push(quantile_sorted(&col, 0.5));
            band.lo.push(quantile_sorted(&col, 0.1));
            band.hi.push(quantile_sorted(&col, 0.9));
        }
        out.push(band);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
}

/// `-2 (lppd - p_waic)` with `lppd = sum_i log mean_t exp(l_it)` and
/// `p_waic = sum_i var_t(l_it)` (denominator `S - 1`).
pub fn waic(loglik: &LogLikMatrix) -> Result<Waic> {
    let s = loglik.n_draws();
    if s < 2 {
        return Err(PbrError::InvalidInput(format!("WAIC needs >= 2 draws, got {s}")));
    }
    if loglik.values().iter().any(|v| !v.is_finite()) {
        return Err(PbrError::NonFinite("log-likelihood matrix"));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for i in 0..loglik.n_obs() {
        let row = loglik.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|l| (l - max).exp()).sum();
        lppd += max + (sum_exp / s as f64).ln();
        let m = row.iter().sum::<f64>() / s as f64;
        p_waic += row.iter().map(|l| (l - m).powi(2)).sum::<f64>() / (s - 1) as f64;
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
    })
}
