//! Natural cubic spline ridge functions and their conjugate machinery.
//!
//! The basis has dimension `J` = interior knots + 2 and includes the affine
//! part, so `J = 2` spans exactly the linear functions. It is built from the
//! cubic B-splines on the clamped knot vector, restricted to the subspace
//! with zero second derivative at both boundary knots (an orthonormal basis
//! of that subspace in coefficient space). Outside the boundary knots every
//! basis function continues linearly.
//!
//! Given a design `B` (n x J) and partial residuals `r`, the coefficient
//! prior is `c ~ N(c0, sigma2 * Sigma0)` with
//!
//! ```text
//! Sigma_rho = (B'B + rho I)^-1,  Sigma0 = (B'B)^-1,  c0 = Sigma_rho B'r
//! ```
//!
//! and integrating `c` and `sigma2 ~ IG(alpha, beta)` out of the Gaussian
//! likelihood leaves the factor `(S + 2 beta)^{-(alpha + n/2)}` with
//!
//! ```text
//! S = r'r - r'B (Sigma_rho + Sigma0/2 - Sigma_rho Sigma0^-1 Sigma_rho / 2) B'r.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PbrError, Result};

const ORDER: usize = 4;
/// Relative knot separation enforced on tied quantiles.
const KNOT_NUDGE: f64 = 1e-9;
/// Gram matrices with eigenvalue ratio below this get a ridge jitter.
const GRAM_RCOND: f64 = 1e-12;
const GRAM_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knots {
    pub lo: f64,
    pub hi: f64,
    pub interior: Vec<f64>,
}

impl Knots {
    pub fn new(lo: f64, hi: f64, interior: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || !(lo < hi) {
            return Err(PbrError::InvalidInput(format!(
                "boundary knots must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        let mut prev = lo;
        for &k in &interior {
            if !(k > prev) {
                return Err(PbrError::InvalidInput(
                    "interior knots must be strictly increasing inside (lo, hi)".into(),
                ));
            }
            prev = k;
        }
        if !(prev < hi) {
            return Err(PbrError::InvalidInput(
                "interior knots must be strictly increasing inside (lo, hi)".into(),
            ));
        }
        Ok(Self { lo, hi, interior })
    }

    pub fn basis_dim(&self) -> usize {
        self.interior.len() + 2
    }

    /// `lo, interior.., hi`.
    pub fn all(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.interior.len() + 2);
        v.push(self.lo);
        v.extend_from_slice(&self.interior);
        v.push(self.hi);
        v
    }
}

/// Type-7 (linear interpolation) quantile of already sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Boundary knots at the extremes of `indices`, interior knots at the
/// empirical quantiles `k / (J - 1)`, `k = 1..J-2`.
pub fn make_knots(indices: &[f64], basis_size: usize) -> Result<Knots> {
    if basis_size < 2 {
        return Err(PbrError::InvalidInput(format!(
            "basis size must be >= 2, got {basis_size}"
        )));
    }
    if indices.len() < basis_size {
        return Err(PbrError::InvalidInput(format!(
            "need at least J = {basis_size} indices, got {}",
            indices.len()
        )));
    }
    if indices.iter().any(|x| !x.is_finite()) {
        return Err(PbrError::NonFinite("projection indices"));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    if !(hi > lo) {
        return Err(PbrError::DegenerateIndices);
    }
    let n_int = basis_size - 2;
    let mut interior: Vec<f64> = (1..=n_int)
        .map(|k| quantile_sorted(&sorted, k as f64 / (basis_size - 1) as f64))
        .collect();

    let eps = KNOT_NUDGE * (hi - lo);
    let mut prev = lo;
    for k in interior.iter_mut() {
        if *k <= prev {
            *k = prev + eps;
        }
        prev = *k;
    }
    let mut next = hi;
    for k in interior.iter_mut().rev() {
        if *k >= next {
            *k = next - eps;
        }
        next = *k;
    }
    Knots::new(lo, hi, interior).map_err(|_| PbrError::DegenerateIndices)
}

/// Values (or `deriv`-th derivatives) at `x` of all cubic B-splines on the
/// clamped knot vector `t`.
fn bspline_row(t: &[f64], x: f64, deriv: usize) -> Vec<f64> {
    let nb = t.len() - ORDER;
    let mut span = ORDER - 1;
    while span + 1 < nb && x >= t[span + 1] {
        span += 1;
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

    let mut cur = vec![0.0; t.len() - 1];
    cur[span] = 1.0;
    for k in 2..=ORDER - deriv {
        let mut next = vec![0.0; t.len() - k];
        for (i, out) in next.iter_mut().enumerate() {
            let left = ratio(x - t[i], t[i + k - 1] - t[i]) * cur[i];
            let right = ratio(t[i + k] - x, t[i + k] - t[i + 1]) * cur[i + 1];
            *out = left + right;
        }
        cur = next;
    }
    for k in ORDER - deriv + 1..=ORDER {
        let scale = (k - 1) as f64;
        let mut next = vec![0.0; t.len() - k];
        for (i, out) in next.iter_mut().enumerate() {
            let left = ratio(cur[i], t[i + k - 1] - t[i]);
            let right = ratio(cur[i + 1], t[i + k] - t[i + 1]);
            *out = scale * (left - right);
        }
        cur = next;
    }
    debug_assert_eq!(cur.len(), nb);
    cur
}

/// Evaluator for the natural cubic basis on a fixed knot set.
#[derive(Debug, Clone)]
pub struct NaturalCubicBasis {
    knots: Knots,
    clamped: Vec<f64>,
    /// (J+2) x J map from natural coefficients to B-spline coefficients.
    null_space: DMatrix<f64>,
    value_lo: Vec<f64>,
    slope_lo: Vec<f64>,
    value_hi: Vec<f64>,
    slope_hi: Vec<f64>,
}

impl NaturalCubicBasis {
    pub fn new(knots: &Knots) -> Result<Self> {
        let mut clamped = vec![knots.lo; ORDER];
        clamped.extend_from_slice(&knots.interior);
        clamped.extend(std::iter::repeat_n(knots.hi, ORDER));
        let nb = clamped.len() - ORDER;
        let j = knots.basis_dim();

        // Null space of the two boundary second-derivative functionals:
        // QR of [C' | I] has Q columns 2.. orthogonal to both rows of C.
        let d2_lo = bspline_row(&clamped, knots.lo, 2);
        let d2_hi = bspline_row(&clamped, knots.hi, 2);
        let aug = DMatrix::from_fn(nb, nb + 2, |r, c| match c {
            0 => d2_lo[r],
            1 => d2_hi[r],
            _ => {
                if r == c - 2 {
                    1.0
                } else {
                    0.0
                }
            }
        });
        let q = aug.qr().q();
        let null_space = q.columns(2, j).into_owned();

        let project = |row: Vec<f64>| -> Vec<f64> {
            (0..j)
                .map(|c| (0..nb).map(|r| row[r] * null_space[(r, c)]).sum())
                .collect()
        };
        let value_lo = project(bspline_row(&clamped, knots.lo, 0));
        let slope_lo = project(bspline_row(&clamped, knots.lo, 1));
        let value_hi = project(bspline_row(&clamped, knots.hi, 0));
        let slope_hi = project(bspline_row(&clamped, knots.hi, 1));
        if value_lo
            .iter()
            .chain(&slope_lo)
            .chain(&value_hi)
            .chain(&slope_hi)
            .any(|x| !x.is_finite())
        {
            return Err(PbrError::NonFinite("spline basis"));
        }
        Ok(Self {
            knots: knots.clone(),
            clamped,
            null_space,
            value_lo,
            slope_lo,
            value_hi,
            slope_hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.null_space.ncols()
    }

    pub fn knots(&self) -> &Knots {
        &self.knots
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let j = self.dim();
        debug_assert_eq!(out.len(), j);
        if x < self.knots.lo {
            let dx = x - self.knots.lo;
            for c in 0..j {
                out[c] = self.value_lo[c] + self.slope_lo[c] * dx;
            }
        } else if x > self.knots.hi {
            let dx = x - self.knots.hi;
            for c in 0..j {
                out[c] = self.value_hi[c] + self.slope_hi[c] * dx;
            }
        } else {
            let row = bspline_row(&self.clamped, x, 0);
            for (c, o) in out.iter_mut().enumerate() {
                *o = row
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(r, v)| v * self.null_space[(r, c)])
                    .sum();
            }
        }
    }

    pub fn eval(&self, indices: &[f64]) -> BasisMatrix {
        let j = self.dim();
        let mut values = DMatrix::zeros(indices.len(), j);
        let mut row = vec![0.0; j];
        for (i, &x) in indices.iter().enumerate() {
            self.eval_into(x, &mut row);
            for c in 0..j {
                values[(i, c)] = row[c];
            }
        }
        BasisMatrix {
            values,
            knots: self.knots.clone(),
        }
    }
}

/// Basis evaluations `B` (n x J) at a set of indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub knots: Knots,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// `B c`, accumulated column by column in a fixed order.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.ncols());
        (0..self.nrows())
            .map(|i| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(c, v)| self.values[(i, c)] * v)
                    .sum()
            })
            .collect()
    }
}

pub fn eval_basis(indices: &[f64], knots: &Knots) -> Result<BasisMatrix> {
    Ok(NaturalCubicBasis::new(knots)?.eval(indices))
}

/// Sufficient statistics `B'WB`, `B'Wr`, `r'Wr` and the effective count.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    pub rr: f64,
    pub n: f64,
}

impl NormalEquations {
    pub fn from_design(b: &BasisMatrix, r: &[f64]) -> Result<Self> {
        Self::build(b, r, None)
    }

    pub fn from_weighted(b: &BasisMatrix, r: &[f64], weights: &[f64]) -> Result<Self> {
        Self::build(b, r, Some(weights))
    }

    fn build(b: &BasisMatrix, r: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        if r.len() != b.nrows() {
            return Err(PbrError::DimensionMismatch {
                expected: b.nrows(),
                found: r.len(),
            });
        }
        if let Some(w) = weights {
            if w.len() != r.len() {
                return Err(PbrError::DimensionMismatch {
                    expected: r.len(),
                    found: w.len(),
                });
            }
        }
        let j = b.ncols();
        let mut gram: DMatrix<f64> = DMatrix::zeros(j, j);
        let mut moment: DVector<f64> = DVector::zeros(j);
        let mut rr = 0.0;
        let mut n = 0.0;
        for i in 0..b.nrows() {
            let wi = weights.map_or(1.0, |w| w[i]);
            let ri = r[i];
            rr += wi * ri * ri;
            n += wi;
            for a in 0..j {
                let ba = b.values[(i, a)] * wi;
                moment[a] += ba * ri;
                for c in a..j {
                    gram[(a, c)] += ba * b.values[(i, c)];
                }
            }
        }
        for a in 0..j {
            for c in 0..a {
                gram[(a, c)] = gram[(c, a)];
            }
        }
        if !rr.is_finite() || gram.iter().any(|x| !x.is_finite()) {
            return Err(PbrError::NonFinite("normal equations"));
        }
        Ok(Self { gram, moment, rr, n })
    }

    pub fn posterior(&self, rho: f64) -> Result<CoeffPosterior> {
        let j = self.gram.nrows();
        let mut gram = self.gram.clone();
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(max > 0.0) {
            return Err(PbrError::SingularDesign);
        }
        if min < GRAM_RCOND * max {
            let jitter = GRAM_JITTER * gram.trace() / j as f64;
            for a in 0..j {
                gram[(a, a)] += jitter;
            }
        }
        let sigma0 = gram
            .clone()
            .cholesky()
            .ok_or(PbrError::SingularDesign)?
            .inverse();
        let mut penalized = gram.clone();
        for a in 0..j {
            penalized[(a, a)] += rho;
        }
        let sigma_rho = penalized
            .cholesky()
            .ok_or(PbrError::SingularDesign)?
            .inverse();
        let c0 = &sigma_rho * &self.moment;
        Ok(CoeffPosterior {
            c0,
            sigma_rho,
            sigma0,
            gram,
        })
    }

    /// `S(gamma)` for these statistics.
    pub fn misfit(&self, rho: f64) -> Result<f64> {
        let post = self.posterior(rho)?;
        Ok(post.misfit(self))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPosterior {
    pub c0: DVector<f64>,
    pub sigma_rho: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    /// `B'B` as actually inverted (after any jitter).
    pub gram: DMatrix<f64>,
}

impl CoeffPosterior {
    fn misfit(&self, ne: &NormalEquations) -> f64 {
        let v = &ne.moment;
        let a = &self.c0;
        let b = &self.sigma0 * v;
        let ga = &self.gram * a;
        ne.rr - v.dot(a) - 0.5 * v.dot(&b) + 0.5 * a.dot(&ga)
    }
}

pub fn posterior_coeffs(b: &BasisMatrix, r: &[f64], rho: f64) -> Result<CoeffPosterior> {
    NormalEquations::from_design(b, r)?.posterior(rho)
}

/// `S(gamma)` from a design and residuals.
pub fn misfit(b: &BasisMatrix, r: &[f64], rho: f64) -> Result<f64> {
    NormalEquations::from_design(b, r)?.misfit(rho)
}

/// Everything a sampler needs from one design: the log data factor and
/// the coefficient posterior mean.
#[derive(Debug, Clone)]
pub struct ScoredDesign {
    pub log_score: f64,
    pub misfit: f64,
    pub c0: Vec<f64>,
}

pub fn score_design(b: &BasisMatrix, r: &[f64], rho: f64, alpha: f64, beta: f64) -> Result<ScoredDesign> {
    let ne = NormalEquations::from_design(b, r)?;
    let post = ne.posterior(rho)?;
    let s = post.misfit(&ne);
    let total = s + 2.0 * beta;
    if !(total > 0.0) || !total.is_finite() {
        return Err(PbrError::NonPositiveScore(total));
    }
    Ok(ScoredDesign {
        log_score: -(alpha + ne.n / 2.0) * total.ln(),
        misfit: s,
        c0: post.c0.iter().cloned().collect(),
    })
}

/// `-(alpha + n/2) log(S + 2 beta)`.
pub fn marginal_score(b: &BasisMatrix, r: &[f64], rho: f64, alpha: f64, beta: f64) -> Result<f64> {
    Ok(score_design(b, r, rho, alpha, beta)?.log_score)
}
