//! Sensing ensembles: perturbed matrix completion, quadratic-activation
//! network training, Gaussian ensembles, and their smoothness constants.

use crate::error::{Error, Result};
use crate::linalg::{self, frob_inner};
use crate::rng::{self, Tag};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// How the off-support weight of perturbed matrix completion enters the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PmcConvention {
    /// Entries off the support are scaled by `rho`, so `δ = (1 − ρ²)/(1 + ρ²)`.
    #[default]
    AsWritten,
    /// Entries off the support are scaled by `sqrt(rho)`, so `δ = (1 − ρ)/(1 + ρ)`.
    SqrtWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// Perturbed matrix completion; `weights` is the row-major `n x n` table of `c_ij`.
    Pmc { rho: f64, convention: PmcConvention, weights: Vec<f64> },
    NnQuadratic,
    Gaussian,
    Custom,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Pmc { .. } => "pmc",
            Family::NnQuadratic => "nn",
            Family::Gaussian => "gaussian",
            Family::Custom => "custom",
        }
    }
}

/// `m` symmetric sensing matrices, the measurements, and optional ground truth.
#[derive(Clone, Debug)]
pub struct SensingEnsemble {
    pub n: usize,
    pub r: usize,
    pub matrices: Vec<DMatrix<f64>>,
    pub b: Vec<f64>,
    pub ground_truth_z: Option<DMatrix<f64>>,
    pub m_star: Option<DMatrix<f64>>,
    pub family: Family,
}

impl SensingEnsemble {
    /// Build an ensemble measuring `ZZᵀ`; matrices are symmetrized.
    pub fn from_ground_truth(matrices: Vec<DMatrix<f64>>, z: DMatrix<f64>, family: Family) -> Result<Self> {
        let n = z.nrows();
        let matrices = symmetrized(matrices, n)?;
        let m_star = &z * z.transpose();
        let b = matrices.iter().map(|a| frob_inner(a, &m_star)).collect();
        Ok(Self { n, r: z.ncols(), matrices, b, ground_truth_z: Some(z), m_star: Some(m_star), family })
    }

    /// Build an ensemble from raw measurements without ground truth.
    pub fn from_measurements(n: usize, r: usize, matrices: Vec<DMatrix<f64>>, b: Vec<f64>) -> Result<Self> {
        let matrices = symmetrized(matrices, n)?;
        if b.len() != matrices.len() {
            return Err(Error::Shape(format!("{} measurements for {} matrices", b.len(), matrices.len())));
        }
        Ok(Self { n, r, matrices, b, ground_truth_z: None, m_star: None, family: Family::Custom })
    }

    pub fn m(&self) -> usize {
        self.matrices.len()
    }

    /// `A(M) = (⟨A_k, M⟩)_k`.
    pub fn measure(&self, m: &DMatrix<f64>) -> Vec<f64> {
        self.matrices.iter().map(|a| frob_inner(a, m)).collect()
    }

    /// `A*(v) = Σ_k v_k A_k`.
    pub fn adjoint(&self, v: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (a, &c) in self.matrices.iter().zip(v) {
            if c != 0.0 {
                out.zip_apply(a, |o, v| *o += c * v);
            }
        }
        out
    }

    /// `∇f(M) = Σ_k (⟨A_k, M⟩ − b_k) A_k`.
    pub fn grad_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let resid: Vec<f64> = self.measure(m).iter().zip(&self.b).map(|(y, b)| y - b).collect();
        self.adjoint(&resid)
    }

    pub fn require_m_star(&self) -> Result<&DMatrix<f64>> {
        self.m_star.as_ref().ok_or_else(|| Error::Missing("ground truth M* is not available".into()))
    }

    /// JSON document with row-major dense matrices.
    pub fn to_json(&self) -> Result<String> {
        let (rho, convention) = match &self.family {
            Family::Pmc { rho, convention, .. } => (Some(*rho), Some(*convention)),
            _ => (None, None),
        };
        let doc = EnsembleDoc {
            n: self.n,
            r: self.r,
            m: self.m(),
            family: self.family.name().to_string(),
            rho,
            convention,
            matrices: self.matrices.iter().map(row_major).collect(),
            b: self.b.clone(),
            z: self.ground_truth_z.as_ref().map(row_major),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EnsembleDoc = serde_json::from_str(text)?;
        if doc.matrices.len() != doc.m || doc.b.len() != doc.m {
            return Err(Error::Shape("ensemble document has inconsistent m".into()));
        }
        let matrices = doc
            .matrices
            .iter()
            .map(|v| from_row_major(v, doc.n, doc.n))
            .collect::<Result<Vec<_>>>()?;
        let family = match doc.family.as_str() {
            "pmc" => {
                let rho = doc.rho.ok_or_else(|| Error::Missing("pmc document without rho".into()))?;
                let convention = doc.convention.unwrap_or_default();
                Family::Pmc { rho, convention, weights: pmc_weights(doc.n, rho, convention) }
            }
            "nn" => Family::NnQuadratic,
            "gaussian" => Family::Gaussian,
            _ => Family::Custom,
        };
        let mut e = Self::from_measurements(doc.n, doc.r, matrices, doc.b)?;
        e.family = family;
        if let Some(z) = doc.z {
            let z = from_row_major(&z, doc.n, doc.r)?;
            e.m_star = Some(&z * z.transpose());
            e.ground_truth_z = Some(z);
        }
        Ok(e)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleDoc {
    n: usize,
    r: usize,
    m: usize,
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    convention: Option<PmcConvention>,
    matrices: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Shape(format!("expected {rows}x{cols} entries, got {}", v.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

fn symmetrized(matrices: Vec<DMatrix<f64>>, n: usize) -> Result<Vec<DMatrix<f64>>> {
    if matrices.is_empty() {
        return Err(Error::InvalidArgument("at least one sensing matrix is required".into()));
    }
    matrices
        .into_iter()
        .map(|a| {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::Shape(format!("sensing matrix is {}x{}, expected {n}x{n}", a.nrows(), a.ncols())));
            }
            Ok((&a + a.transpose()) * 0.5)
        })
        .collect()
}

/// Membership in the fully observed set (0-based): the diagonal plus every
/// row and column whose 1-based index is even.
pub fn pmc_in_omega(i: usize, j: usize) -> bool {
    i == j || i % 2 == 1 || j % 2 == 1
}

pub fn pmc_weights(n: usize, rho: f64, convention: PmcConvention) -> Vec<f64> {
    let off = match convention {
        PmcConvention::AsWritten => rho,
        PmcConvention::SqrtWeights => rho.sqrt(),
    };
    let mut w = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            w.push(if pmc_in_omega(i, j) { 1.0 } else { off });
        }
    }
    w
}

/// Ground-truth factor supported on the rows with odd 1-based index, the
/// block on which the weak entries decouple sign patterns.
pub fn odd_support_factor(n: usize, r: usize, seed: u64, trial: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, trial, Tag::Instance);
    let g = rng::normal_matrix(&mut rng, n, r);
    DMatrix::from_fn(n, r, |i, j| if i % 2 == 0 { g[(i, j)] } else { 0.0 })
}

/// Perturbed matrix completion with the operator scaling the entries of
/// `M` by `c_ij` (1 on the observed set, `rho` elsewhere).
pub fn pmc_instance(n: usize, r: usize, rho: f64, z: Option<DMatrix<f64>>, seed: u64) -> Result<SensingEnsemble> {
    pmc_instance_with(n, r, rho, PmcConvention::AsWritten, z, seed)
}

pub fn pmc_instance_with(
    n: usize,
    r: usize,
    rho: f64,
    convention: PmcConvention,
    z: Option<DMatrix<f64>>,
    seed: u64,
) -> Result<SensingEnsemble> {
    if n < 2 || r == 0 || r >= n {
        return Err(Error::InvalidArgument(format!("pmc requires n >= 2 and 0 < r < n (n={n}, r={r})")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("pmc requires 0 < rho <= 1, got {rho}")));
    }
    let z = match z {
        Some(z) if z.nrows() != n || z.ncols() != r => {
            return Err(Error::Shape(format!("ground truth is {}x{}, expected {n}x{r}", z.nrows(), z.ncols())))
        }
        Some(z) => z,
        None => rng::normal_matrix(&mut rng::stream(seed, 0, Tag::Instance), n, r),
    };
    let weights = pmc_weights(n, rho, convention);
    let mut matrices = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let c = weights[i * n + j];
            let mut a = DMatrix::zeros(n, n);
            a[(i, j)] += 0.5 * c;
            a[(j, i)] += 0.5 * c;
            matrices.push(a);
        }
    }
    SensingEnsemble::from_ground_truth(matrices, z, Family::Pmc { rho, convention, weights })
}

/// Two-layer network with quadratic activation: `A_i = d_i d_iᵀ`.
pub fn nn_quadratic_instance(n: usize, r: usize, m: usize, seed: u64) -> Result<SensingEnsemble> {
    nn_quadratic_trial(n, r, m, seed, 0)
}

/// Independent network instance for trial `trial` of a seeded batch.
pub fn nn_quadratic_trial(n: usize, r: usize, m: usize, seed: u64, trial: u64) -> Result<SensingEnsemble> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidArgument("nn instance requires n, r, m >= 1".into()));
    }
    let mut rng = rng::stream(seed, trial, Tag::Instance);
    let z = rng::normal_matrix(&mut rng, n, r);
    let matrices = (0..m)
        .map(|_| {
            let d = nalgebra::DVector::from_vec(rng::normal_vec(&mut rng, n));
            &d * d.transpose()
        })
        .collect();
    SensingEnsemble::from_ground_truth(matrices, z, Family::NnQuadratic)
}

/// Symmetric Gaussian sensing matrices scaled by `1/sqrt(m)`.
pub fn gaussian_instance(n: usize, r: usize, m: usize, seed: u64) -> Result<SensingEnsemble> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidArgument("gaussian instance requires n, r, m >= 1".into()));
    }
    let mut rng = rng::stream(seed, 0, Tag::Instance);
    let z = rng::normal_matrix(&mut rng, n, r);
    let s = 1.0 / (m as f64).sqrt();
    let matrices = (0..m).map(|_| linalg::random_symmetric(&mut rng, n) * s).collect();
    SensingEnsemble::from_ground_truth(matrices, z, Family::Gaussian)
}

/// Restricted smoothness and convexity constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l_s: f64,
    pub alpha_s: f64,
    pub delta: f64,
    pub exact: bool,
}

impl SmoothnessConstants {
    pub fn new(l_s: f64, alpha_s: f64, exact: bool) -> Result<Self> {
        if !(alpha_s > 0.0) || l_s < alpha_s {
            return Err(Error::Degenerate(format!("invalid constants L={l_s}, alpha={alpha_s}")));
        }
        Ok(Self { l_s, alpha_s, delta: (l_s - alpha_s) / (l_s + alpha_s), exact })
    }
}

/// Closed form for perturbed matrix completion, probe estimate otherwise.
pub fn smoothness_constants(e: &SensingEnsemble, probes: usize, seed: u64) -> Result<SmoothnessConstants> {
    if e.matrices.iter().all(|a| a.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("all sensing matrices are zero".into()));
    }
    if let Family::Pmc { weights, .. } = &e.family {
        let sq = weights.iter().map(|c| c * c);
        let l = sq.clone().fold(f64::MIN, f64::max);
        let a = sq.fold(f64::MAX, f64::min);
        return SmoothnessConstants::new(l, a, true);
    }
    if probes == 0 {
        return Err(Error::InvalidArgument("probe estimate needs at least one probe".into()));
    }
    let mut rng = rng::stream(seed, 0, Tag::Probes);
    let (mut lo, mut hi) = (f64::MAX, 0.0f64);
    for _ in 0..probes {
        let g1 = rng::normal_matrix(&mut rng, e.n, e.r);
        let g2 = rng::normal_matrix(&mut rng, e.n, e.r);
        let d = &g1 * g2.transpose() + &g2 * g1.transpose();
        let dn = d.norm_squared();
        if dn == 0.0 {
            continue;
        }
        let ratio = e.measure(&d).iter().map(|v| v * v).sum::<f64>() / dn;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    SmoothnessConstants::new(hi, lo, false)
}
