//! Synthetic scenarios.
//!
//! Predictors are `M = A E A'` with `A` Haar-orthonormal and eigenvalues
//! i.i.d. `U(-10, 10)`. Two response models are provided:
//!
//! - correctly specified: `y = sum_k g_k(gamma_k' M gamma_k) + eps` with
//!   sparse directions (4 nonzero entries each) and the links
//!   `-u`, `-u^2/4`, `2 exp(-u/5)`, `u^2/4`, each shifted to average zero
//!   over the training sample;
//! - misspecified: `y = 2 <M, C> + 2 <M, C>^2 + eps` with `C = U U'` and
//!   `U` a column-sparsified Haar `p x r` frame.
//!
//! Randomness is split into the named streams `predictors`, `truth` and
//! `noise` of the scenario seed, so two scenarios sharing a seed share
//! predictors and noise.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data_model::{check_identifiability, Dataset, Direction, SymMatrix};
use crate::error::{PbrError, Result};
use crate::geometry;
use crate::rng::stream;

const EIGEN_BOUND: f64 = 10.0;
const NONZEROS_CORRECT: usize = 4;
const NONZEROS_MISSPEC: usize = 8;

/// Haar-distributed `p x r` matrix with orthonormal columns (`r <= p`).
pub fn sample_stiefel<R: Rng + ?Sized>(rng: &mut R, p: usize, r: usize) -> DMatrix<f64> {
    assert!(r <= p && r >= 1, "need 1 <= r <= p");
    let z = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = z.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for c in 0..r {
        if rr[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Haar-distributed `p x p` orthogonal matrix.
pub fn sample_orthonormal<R: Rng + ?Sized>(rng: &mut R, p: usize) -> DMatrix<f64> {
    sample_stiefel(rng, p, p)
}

pub fn gen_predictors<R: Rng + ?Sized>(rng: &mut R, p: usize, count: usize) -> Vec<SymMatrix> {
    let eig = Uniform::new(-EIGEN_BOUND, EIGEN_BOUND).expect("valid range");
    (0..count)
        .map(|_| {
            let a = sample_orthonormal(rng, p);
            let e: Vec<f64> = (0..p).map(|_| eig.sample(rng)).collect();
            let mut scaled = a.clone();
            for (c, ev) in e.iter().enumerate() {
                scaled.column_mut(c).scale_mut(*ev);
            }
            SymMatrix::from_dense(&(scaled * a.transpose())).expect("finite symmetric matrix")
        })
        .collect()
}

/// Zeroes all but `keep` randomly chosen entries of `v`.
fn sparsify<R: Rng + ?Sized>(rng: &mut R, v: &mut [f64], keep: usize) {
    let p = v.len();
    for idx in sample_indices(rng, p, p - keep) {
        v[idx] = 0.0;
    }
}

/// `K` sparse directions `V q_k` with `p - 4` entries zeroed, sharing one
/// Haar rotation `V`.
pub fn gen_directions<R: Rng + ?Sized>(rng: &mut R, p: usize, k: usize) -> Result<Vec<Direction>> {
    if p < NONZEROS_CORRECT + 1 {
        return Err(PbrError::InvalidInput(format!("sparse directions need p >= 5, got {p}")));
    }
    let v = sample_orthonormal(rng, p);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let q: Vec<f64> = (0..p).map(|_| unit.sample(rng)).collect();
        let mut alpha: Vec<f64> = (0..p).map(|r| (0..p).map(|c| v[(r, c)] * q[c]).sum()).collect();
        sparsify(rng, &mut alpha, NONZEROS_CORRECT);
        if geometry::norm(&alpha) > 0.0 {
            out.push(Direction::from_vector(&alpha)?);
        }
    }
    Ok(out)
}

/// Ridge functions of the correctly specified scenario (before centering).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Link {
    /// `-u`
    G1,
    /// `-u^2 / 4`
    G2,
    /// `2 exp(-u / 5)`
    G3,
    /// `u^2 / 4`
    G4,
    /// `linear * u + quadratic * u^2`
    Polynomial { linear: f64, quadratic: f64 },
}

impl Link {
    pub fn from_index(which: usize) -> Result<Self> {
        match which {
            1 => Ok(Link::G1),
            2 => Ok(Link::G2),
            3 => Ok(Link::G3),
            4 => Ok(Link::G4),
            _ => Err(PbrError::InvalidInput(format!("link index must be 1..4, got {which}"))),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Link::G1 => -u,
            Link::G2 => -u * u / 4.0,
            Link::G3 => 2.0 * (-u / 5.0).exp(),
            Link::G4 => u * u / 4.0,
            Link::Polynomial { linear, quadratic } => linear * u + quadratic * u * u,
        }
    }
}

/// Raw (uncentered) value of link `which` in `1..=4`.
pub fn link_function(which: usize, u: f64) -> Result<f64> {
    Ok(Link::from_index(which)?.eval(u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthComponent {
    pub direction: Direction,
    pub link: Link,
    /// Training-sample mean of the raw link, subtracted from it.
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Additive {
        mu: f64,
        components: Vec<TruthComponent>,
    },
    Bilinear {
        c: SymMatrix,
        /// Columns of `U`.
        u: Vec<Vec<f64>>,
    },
}

impl Truth {
    /// Noise-free mean response for one predictor.
    pub fn signal(&self, m: &SymMatrix) -> f64 {
        match self {
            Truth::Additive { mu, components } => {
                mu + components
                    .iter()
                    .map(|c| c.link.eval(m.quad_form(c.direction.gamma())) - c.center)
                    .sum::<f64>()
            }
            Truth::Bilinear { u, .. } => {
                let v: f64 = u.iter().map(|col| m.quad_form(col)).sum();
                2.0 * v + 2.0 * v * v
            }
        }
    }

    pub fn directions(&self) -> Option<Vec<Direction>> {
        match self {
            Truth::Additive { components, .. } => Some(components.iter().map(|c| c.direction.clone()).collect()),
            Truth::Bilinear { .. } => None,
        }
    }

    pub fn links(&self) -> Option<Vec<Link>> {
        match self {
            Truth::Additive { components, .. } => Some(components.iter().map(|c| c.link).collect()),
            Truth::Bilinear { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    CorrectlySpecified { p: usize, k: usize },
    Misspecified { p: usize, r: usize },
}

impl ScenarioKind {
    pub fn dim(&self) -> usize {
        match *self {
            ScenarioKind::CorrectlySpecified { p, .. } | ScenarioKind::Misspecified { p, .. } => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Noise variance; 0 gives noiseless responses.
    pub sigma2: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn correct(p: usize, k: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::CorrectlySpecified { p, k },
            n_train: 400,
            n_test: 1000,
            sigma2: 1.0,
            seed,
        }
    }

    pub fn misspecified(p: usize, r: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Misspecified { p, r },
            ..Self::correct(p, 1, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PbrError::InvalidConfig(m));
        match self.kind {
            ScenarioKind::CorrectlySpecified { p, k } => {
                if p < NONZEROS_CORRECT + 1 {
                    return bad(format!("correctly specified scenario needs p >= 5, got {p}"));
                }
                if !(1..=4).contains(&k) {
                    return bad(format!("K must be in 1..=4, got {k}"));
                }
            }
            ScenarioKind::Misspecified { p, r } => {
                if p < NONZEROS_MISSPEC + 1 {
                    return bad(format!("misspecified scenario needs p >= 9, got {p}"));
                }
                if r < 1 || r > p {
                    return bad(format!("r must be in 1..=p, got {r}"));
                }
            }
        }
        if self.n_train < 2 {
            return bad(format!("n_train must be >= 2, got {}", self.n_train));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return bad(format!("sigma2 must be finite and >= 0, got {}", self.sigma2));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub train: Dataset,
    /// Empty when `n_test = 0`.
    pub test_matrices: Vec<SymMatrix>,
    pub test_responses: Vec<f64>,
    pub truth: Truth,
}

impl Scenario {
    pub fn test(&self) -> Result<Dataset> {
        Dataset::new(self.test_matrices.clone(), self.test_responses.clone())
    }
}

/// `y_i = signal(M_i) + eps_i` with noise from `rng`.
pub fn responses<R: Rng + ?Sized>(rng: &mut R, truth: &Truth, matrices: &[SymMatrix], sigma2: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma2.sqrt()).expect("finite noise scale");
    matrices.iter().map(|m| truth.signal(m) + noise.sample(rng)).collect()
}

/// The single-column bilinear truth written as one additive component:
/// `<M, u u'> = |u|^2 g' M g` with `g = u / |u|`, so the link is the
/// polynomial `2|u|^2 t + 2|u|^4 t^2`. The intercept absorbs the centering.
pub fn single_index_equivalent(truth: &Truth, train: &[SymMatrix]) -> Result<Truth> {
    let Truth::Bilinear { u, .. } = truth else {
        return Err(PbrError::InvalidInput("truth is already additive".into()));
    };
    if u.len() != 1 {
        return Err(PbrError::InvalidInput(format!(
            "only rank-one bilinear truths are single-index, got rank {}",
            u.len()
        )));
    }
    let s = geometry::dot(&u[0], &u[0]);
    let direction = Direction::from_vector(&u[0])?;
    let link = Link::Polynomial {
        linear: 2.0 * s,
        quadratic: 2.0 * s * s,
    };
    let center = mean_link(link, &direction, train);
    Ok(Truth::Additive {
        mu: center,
        components: vec![TruthComponent {
            direction,
            link,
            center,
        }],
    })
}

fn mean_link(link: Link, direction: &Direction, train: &[SymMatrix]) -> f64 {
    train.iter().map(|m| link.eval(m.quad_form(direction.gamma()))).sum::<f64>() / train.len() as f64
}

fn gen_truth(spec: &ScenarioSpec, train: &[SymMatrix]) -> Result<Truth> {
    let mut rng = stream(spec.seed, "truth");
    match spec.kind {
        ScenarioKind::CorrectlySpecified { p, k } => {
            let dirs = gen_directions(&mut rng, p, k)?;
            let components = dirs
                .into_iter()
                .enumerate()
                .map(|(idx, direction)| {
                    let link = Link::from_index(idx + 1)?;
                    let center = mean_link(link, &direction, train);
                    Ok(TruthComponent { direction, link, center })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Truth::Additive { mu: 0.0, components })
        }
        ScenarioKind::Misspecified { p, r } => {
            let frame = sample_stiefel(&mut rng, p, r);
            let mut cols = Vec::with_capacity(r);
            for c in 0..r {
                let mut col: Vec<f64> = frame.column(c).iter().cloned().collect();
                sparsify(&mut rng, &mut col, NONZEROS_MISSPEC);
                cols.push(col);
            }
            let c = SymMatrix::from_fn(p, |a, b| cols.iter().map(|col| col[a] * col[b]).sum());
            Ok(Truth::Bilinear { c, u: cols })
        }
    }
}

pub fn gen_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let p = spec.kind.dim();
    let total = spec.n_train + spec.n_test;
    let mut matrices = gen_predictors(&mut stream(spec.seed, "predictors"), p, total);
    let test_matrices = matrices.split_off(spec.n_train);
    let truth = gen_truth(spec, &matrices)?;
    if let Some(dirs) = truth.directions() {
        let report = check_identifiability(&dirs);
        if !(report.rank_ok && report.hadamard_rank_ok) {
            return Err(PbrError::InvalidInput(format!(
                "generated directions fail the rank conditions (seed {})",
                spec.seed
            )));
        }
    }
    let mut noise = stream(spec.seed, "noise");
    let y_train = responses(&mut noise, &truth, &matrices, spec.sigma2);
    let y_test = responses(&mut noise, &truth, &test_matrices, spec.sigma2);
    Ok(Scenario {
        train: Dataset::new(matrices, y_train)?,
        test_matrices,
        test_responses: y_test,
        truth,
    })
}
