//! Burer–Monteiro objective `f(X) = ½‖A(XXᵀ) − b‖²`, its derivatives, point
//! certification, and multi-start harvesting of spurious second-order points.

use crate::error::{Error, Result};
use crate::instances::{SensingEnsemble, SmoothnessConstants};
use crate::linalg::{self, frob_inner};
use crate::rng::{self, Tag};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Factor matrix `X ∈ R^{n x r}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMatrix(pub DMatrix<f64>);

impl FactorMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("factor entries must be finite".into()));
        }
        Ok(Self(x))
    }

    pub fn gram(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }
}

fn check(e: &SensingEnsemble, x: &FactorMatrix) -> Result<()> {
    if x.0.nrows() != e.n {
        return Err(Error::Shape(format!("factor has {} rows, ensemble n = {}", x.0.nrows(), e.n)));
    }
    Ok(())
}

pub fn unlifted_loss(e: &SensingEnsemble, x: &FactorMatrix) -> Result<f64> {
    check(e, x)?;
    let y = e.measure(&x.gram());
    Ok(0.5 * y.iter().zip(&e.b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// `2 ∇f(XXᵀ) X`.
pub fn unlifted_grad(e: &SensingEnsemble, x: &FactorMatrix) -> Result<FactorMatrix> {
    check(e, x)?;
    Ok(FactorMatrix(e.grad_matrix(&x.gram()) * &x.0 * 2.0))
}

/// Second derivative of `f` at `X` along `U`:
/// `2⟨∇f(XXᵀ), UUᵀ⟩ + ‖A(XUᵀ + UXᵀ)‖²`.
pub fn unlifted_quadform(e: &SensingEnsemble, x: &FactorMatrix, u: &DMatrix<f64>) -> Result<f64> {
    check(e, x)?;
    let grad = e.grad_matrix(&x.gram());
    Ok(quadform_with(e, &grad, &x.0, u))
}

fn quadform_with(e: &SensingEnsemble, grad: &DMatrix<f64>, x: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let xu = x * u.transpose();
    let sym = &xu + xu.transpose();
    2.0 * frob_inner(grad, &(u * u.transpose())) + e.measure(&sym).iter().map(|v| v * v).sum::<f64>()
}

/// Hessian of `f` in column-major `vec(X)` coordinates.
pub fn unlifted_hessian(e: &SensingEnsemble, x: &FactorMatrix) -> Result<DMatrix<f64>> {
    check(e, x)?;
    let (n, r) = (e.n, x.rank());
    let grad = e.grad_matrix(&x.gram());
    let mut jac = DMatrix::zeros(e.m(), n * r);
    for j in 0..r {
        for i in 0..n {
            let mut basis = DMatrix::zeros(n, r);
            basis[(i, j)] = 1.0;
            let xu = &x.0 * basis.transpose();
            let col = e.measure(&(&xu + xu.transpose()));
            jac.set_column(j * n + i, &DVector::from_vec(col));
        }
    }
    let mut h = jac.transpose() * &jac;
    for j in 0..r {
        for i in 0..n {
            for k in 0..n {
                h[(j * n + i, j * n + k)] += 2.0 * grad[(i, k)];
            }
        }
    }
    Ok(h)
}

/// Negative-curvature candidate `U = u qᵀ`: `u` the unit eigenvector of the
/// smallest eigenvalue of `∇f(XXᵀ)` and `q` the right singular vector of
/// the smallest singular value of `X`.
#[derive(Clone, Debug)]
pub struct EscapeFactor {
    pub u: DVector<f64>,
    pub q: DVector<f64>,
    pub lambda_min: f64,
    pub grad_matrix: DMatrix<f64>,
}

impl EscapeFactor {
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.u * self.q.transpose()
    }
}

pub fn escape_factor(e: &SensingEnsemble, x: &FactorMatrix) -> Result<EscapeFactor> {
    check(e, x)?;
    let grad = e.grad_matrix(&x.gram());
    let (vals, vecs) = linalg::sym_eigen(&grad);
    let u = vecs.column(0).into_owned();
    let (_, right) = linalg::sym_eigen(&(x.0.transpose() * &x.0));
    let q = right.column(0).into_owned();
    Ok(EscapeFactor { u, q, lambda_min: vals[0], grad_matrix: grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnliftedCertificate {
    pub fop_residual: f64,
    pub min_quadform: f64,
}

/// First- and second-order certificate over random unit directions plus the
/// analytic escape candidate.
pub fn certify_unlifted_point(e: &SensingEnsemble, x: &FactorMatrix, directions: usize, seed: u64) -> Result<UnliftedCertificate> {
    check(e, x)?;
    let grad = e.grad_matrix(&x.gram());
    let fop_residual = (&grad * &x.0).norm();
    let mut rng = rng::stream(seed, 0, Tag::Directions);
    let (n, r) = (e.n, x.rank());
    let cand = escape_factor(e, x)?.matrix();
    let mut min_quadform = quadform_with(e, &grad, &x.0, &cand);
    for _ in 0..directions {
        let u = DMatrix::from_vec(n, r, rng::unit_vec(&mut rng, n * r));
        min_quadform = min_quadform.min(quadform_with(e, &grad, &x.0, &u));
    }
    Ok(UnliftedCertificate { fop_residual, min_quadform })
}

/// Numerical checks of two magnitude bounds satisfied by first-order points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FopChecks {
    /// `λ_r(XXᵀ) < sqrt(2L/(rα)) ‖M*‖_F`.
    pub xhat_bound_ok: bool,
    /// `λ_min(∇f(XXᵀ)) ≤ −α‖XXᵀ − M*‖²_F / (2 tr M*)`.
    pub eig_bound_ok: bool,
    pub lambda_r: f64,
    pub xhat_bound: f64,
    pub lambda_min: f64,
    pub eig_bound: f64,
}

pub fn fop_magnitude_checks(e: &SensingEnsemble, x: &FactorMatrix, c: &SmoothnessConstants) -> Result<FopChecks> {
    check(e, x)?;
    let m_star = e.require_m_star()?;
    let grad = e.grad_matrix(&x.gram());
    let residual = (&grad * &x.0).norm();
    if residual > 1e-6 {
        return Err(Error::Precondition(format!("not a first-order point (residual {residual:e})")));
    }
    let r = x.rank();
    let gram = x.gram();
    let (gvals, _) = linalg::sym_eigen(&gram);
    let lambda_r = gvals[gvals.len() - r];
    let xhat_bound = (2.0 * c.l_s / (r as f64 * c.alpha_s)).sqrt() * m_star.norm();
    let (vals, _) = linalg::sym_eigen(&grad);
    let lambda_min = vals[0];
    let eig_bound = -c.alpha_s * (&gram - m_star).norm_squared() / (2.0 * m_star.trace());
    let tol = 1e-9 * (1.0 + grad.norm());
    Ok(FopChecks {
        xhat_bound_ok: lambda_r < xhat_bound,
        eig_bound_ok: lambda_min <= eig_bound + tol,
        lambda_r,
        xhat_bound,
        lambda_min,
        eig_bound,
    })
}

/// `‖XXᵀ − M*‖_F`.
pub fn recovery_error(e: &SensingEnsemble, x: &FactorMatrix) -> Result<f64> {
    Ok((x.gram() - e.require_m_star()?).norm())
}

/// Settings for multi-start spurious point harvesting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvestConfig {
    pub starts: usize,
    pub rank: usize,
    pub init_scale: f64,
    pub max_gd_iters: usize,
    pub grad_tol: f64,
    pub success_threshold: f64,
    pub seed: u64,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self { starts: 50, rank: 1, init_scale: 1.0, max_gd_iters: 20_000, grad_tol: 1e-10, success_threshold: 0.05, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct HarvestedPoint {
    pub start: usize,
    pub x: FactorMatrix,
    pub grad_norm: f64,
    pub recovery_error: f64,
    pub certificate: UnliftedCertificate,
}

/// Descend from one start: backtracking gradient descent followed by
/// damped Newton refinement. Returns the final point and gradient norm.
pub fn descend_to_stationary(e: &SensingEnsemble, x0: FactorMatrix, max_gd_iters: usize, grad_tol: f64) -> Result<(FactorMatrix, f64)> {
    let mut x = x0;
    let mut f = unlifted_loss(e, &x)?;
    let mut step = 1.0;
    for _ in 0..max_gd_iters {
        let g = unlifted_grad(e, &x)?.0;
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= grad_tol.max(1e-6) {
            break;
        }
        step *= 2.0;
        loop {
            let cand = FactorMatrix(&x.0 - &g * step);
            let fc = unlifted_loss(e, &cand)?;
            if fc <= f - 0.5 * step * gn2 {
                x = cand;
                f = fc;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Ok((x.clone(), gn2.sqrt()));
            }
        }
    }
    let (n, r) = (e.n, x.rank());
    for _ in 0..200 {
        let g = unlifted_grad(e, &x)?.0;
        let gn = g.norm();
        if gn <= grad_tol {
            return Ok((x, gn));
        }
        let h = unlifted_hessian(e, &x)?;
        let gv = DVector::from_column_slice(g.as_slice());
        let dir = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&gv),
            None => -gv.clone(),
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand = FactorMatrix(&x.0 + DMatrix::from_column_slice(n, r, dir.as_slice()) * t);
            let gc = unlifted_grad(e, &cand)?.0.norm();
            let fc = unlifted_loss(e, &cand)?;
            if gc < gn || fc < f {
                x = cand;
                f = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let gn = unlifted_grad(e, &x)?.0.norm();
    Ok((x, gn))
}

/// Multi-start search for spurious second-order points: stationary points
/// with gradient norm at most `grad_tol`, recovery error above the success
/// threshold, and no direction of negative curvature. Duplicates (equal
/// `XXᵀ`) are dropped.
pub fn harvest_spurious(e: &SensingEnsemble, cfg: &HarvestConfig) -> Result<Vec<HarvestedPoint>> {
    e.require_m_star()?;
    let mut out: Vec<HarvestedPoint> = Vec::new();
    for start in 0..cfg.starts {
        let mut rng = rng::stream(cfg.seed, start as u64, Tag::Harvest);
        let x0 = FactorMatrix(rng::normal_matrix(&mut rng, e.n, cfg.rank) * cfg.init_scale);
        let (x, grad_norm) = descend_to_stationary(e, x0, cfg.max_gd_iters, cfg.grad_tol)?;
        if grad_norm > cfg.grad_tol {
            continue;
        }
        let recovery_error = recovery_error(e, &x)?;
        if recovery_error <= cfg.success_threshold {
            continue;
        }
        let certificate = certify_unlifted_point(e, &x, 100, cfg.seed ^ start as u64)?;
        let scale = x.gram().norm().max(1.0);
        if certificate.min_quadform < -1e-8 * scale {
            continue;
        }
        let gram = x.gram();
        if out.iter().any(|p| (p.x.gram() - &gram).norm() <= 1e-6 * scale) {
            continue;
        }
        out.push(HarvestedPoint { start, x, grad_norm, recovery_error, certificate });
    }
    Ok(out)
}
