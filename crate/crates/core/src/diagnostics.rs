//! Trajectory decomposition, eigen-ratio predictions, and saddle
//! certificates for lifted points.

use crate::error::{Error, Result};
use crate::instances::{SensingEnsemble, SmoothnessConstants};
use crate::lifted::{lift_factor, lifted_grad, lifted_hessian_quadform, recover_factor, LiftedProblem};
use crate::linalg;
use crate::optim::condition_terms;
use crate::pca::{deflation_ratio, dominant_component, PcaConfig};
use crate::tensor::{asymmetry, operator_power_apply, symmetrize, DenseTensor};
use crate::unlifted::{escape_factor, FactorMatrix};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// `β = L_s tr(M*) λ_r / (α_s ‖M* − X̂X̂ᵀ‖²_F)`; undefined when the distance vanishes.
pub fn beta_value(l_s: f64, alpha_s: f64, trace: f64, lambda_r: f64, distance_sq: f64) -> Option<f64> {
    (distance_sq > 0.0 && alpha_s > 0.0).then(|| l_s * trace * lambda_r / (alpha_s * distance_sq))
}

/// Smallest odd `l` with `l > 1/(1 − log₂(2β))`; `None` when `β ≥ 1`.
pub fn minimal_odd_l(beta: f64) -> Option<usize> {
    if !(beta < 1.0) {
        return None;
    }
    let bound = if beta <= 0.0 { 0.0 } else { 1.0 / (1.0 - (2.0 * beta).log2()) };
    let mut l = 1usize;
    while (l as f64) <= bound {
        l += 2;
    }
    Some(l)
}

/// `(‖x₀‖^l (1+ησ₂^l)^t) / (|v₁ᵀx₀|^l (1+ησ₁^l)^t)`, `+∞` when `v₁ᵀx₀ = 0`.
pub fn ratio_predictor(sigma1: f64, sigma2: f64, eta: f64, l: usize, x0_norm: f64, align: f64, t: u32) -> f64 {
    if align == 0.0 {
        return f64::INFINITY;
    }
    let li = l as i32;
    let lead = (x0_norm / align.abs()).powi(li);
    let per_step = ((1.0 + eta * sigma2.powi(li)) / (1.0 + eta * sigma1.powi(li))).ln();
    lead * (per_step * t as f64).exp()
}

/// Steps after which [`ratio_predictor`] falls to `kappa`, at least 1.
pub fn t_kappa_l(kappa: f64, l: usize, eta: f64, sigma1: f64, sigma2: f64, x0_norm: f64, align: f64) -> Result<u64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    if !(sigma1 > sigma2) {
        return Err(Error::InvalidArgument(format!("no spectral gap: sigma1 = {sigma1}, sigma2 = {sigma2}")));
    }
    if align == 0.0 {
        return Err(Error::InvalidArgument("initial point orthogonal to the top eigenvector".into()));
    }
    let li = l as i32;
    let num = (x0_norm.powi(li) / (kappa * align.abs().powi(li))).ln();
    let den = ((1.0 + eta * sigma1.powi(li)) / (1.0 + eta * sigma2.powi(li))).ln();
    Ok(((num / den).ceil().max(1.0)) as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub iter: usize,
    /// `‖w̃_t‖_F` with `w̃_t = (I + η' U^{⊗l})^t w₀`.
    pub tilde_norm: f64,
    /// `‖E_t‖_F` with `E_t = w̃_t − w_t`.
    pub e_norm: f64,
    /// Dominant rank-1 scale of `E_t`, a lower estimate of its spectral norm.
    pub e_spectral: Option<f64>,
    pub ratio: Option<f64>,
    pub predicted_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// Effective step `η' = 4η` matching the gradient constant.
    pub eta_effective: f64,
    pub rows: Vec<DecompositionRow>,
}

/// Split recorded GD iterates into the linear part `w̃_t` and the error
/// `E_t`. `x0` is the factor with `w₀ = ε x₀^{⊗l}`. With `pca` present the
/// deflation ratio of `w_t` and the rank-1 scale of `E_t` are reported.
pub fn trajectory_decomposition(
    p: &LiftedProblem,
    iterates: &[(usize, DenseTensor)],
    w0: &DenseTensor,
    x0: &DVector<f64>,
    eta: f64,
    pca: Option<&PcaConfig>,
) -> Result<DecompositionReport> {
    let eta_effective = 4.0 * eta;
    let (vals, vecs) = linalg::sym_eigen(p.u());
    let n = vals.len();
    let (s1, s2) = (vals[n - 1], if n > 1 { vals[n - 2] } else { vals[n - 1] });
    let align = vecs.column(n - 1).dot(x0);
    let mut rows = Vec::with_capacity(iterates.len());
    let mut last = None;
    for (t, w) in iterates {
        if w.shape() != w0.shape() {
            return Err(Error::Shape(format!("iterate {t} has shape {:?}, expected {:?}", w.shape(), w0.shape())));
        }
        if last.is_some_and(|prev| *t <= prev) {
            return Err(Error::InvalidArgument("iterates must be strictly increasing in t".into()));
        }
        last = Some(*t);
        let tilde = operator_power_apply(p.u(), eta_effective, *t as u32, w0)?;
        let e = tilde.sub(w)?;
        let (e_spectral, ratio) = match pca {
            Some(cfg) => {
                let es = if e.norm() == 0.0 { 0.0 } else { dominant_component(&symmetrize(&e)?, cfg)?.scale.abs() };
                let sym = if asymmetry(w)? > 1e-6 { symmetrize(w)? } else { w.clone() };
                (Some(es), Some(deflation_ratio(&sym, cfg)?.ratio))
            }
            None => (None, None),
        };
        rows.push(DecompositionRow {
            iter: *t,
            tilde_norm: tilde.norm(),
            e_norm: e.norm(),
            e_spectral,
            ratio,
            predicted_ratio: ratio_predictor(s1, s2, eta_effective, p.level(), x0.norm(), align, *t as u32),
        });
    }
    Ok(DecompositionReport { eta_effective, rows })
}

/// `∇²h(x^{⊗l})[u^{⊗l}, u^{⊗l}]` for the rank-1 lift of a factor, in closed
/// form: `8 a^l + 4 (c^l − e^l)` with `a = Σ_k ⟨u, Ã_k x⟩²`,
/// `c = Σ_k y_k ⟨u, Ã_k u⟩`, `e = Σ_k b_k ⟨u, Ã_k u⟩`.
pub fn rank1_lift_quadform(e: &SensingEnsemble, x: &FactorMatrix, u: &FactorMatrix, l: usize) -> Result<f64> {
    if x.0.shape() != u.0.shape() || x.0.nrows() != e.n {
        return Err(Error::Shape("factor and direction shapes differ".into()));
    }
    let y = e.measure(&x.gram());
    let (mut a, mut c, mut eb) = (0.0, 0.0, 0.0);
    for ((mat, yk), bk) in e.matrices.iter().zip(&y).zip(&e.b) {
        let ax = mat * &x.0;
        let au = mat * &u.0;
        let cross = u.0.dot(&ax);
        let self_q = u.0.dot(&au);
        a += cross * cross;
        c += yk * self_q;
        eb += bk * self_q;
    }
    let li = l as i32;
    Ok(8.0 * a.powi(li) + 4.0 * (c.powi(li) - eb.powi(li)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleCertificate {
    pub lifted_grad_norm: f64,
    /// `‖∇f(X̂X̂ᵀ) X̂‖_F` for the recovered factor.
    pub fop_residual: f64,
    /// Deflation ratio at the point.
    pub kappa_estimate: f64,
    pub lambda_min: f64,
    pub condition_lhs: Option<f64>,
    pub condition_rhs: Option<f64>,
    /// `r κ^{1/l}`, the slack term with unit constant (a convention).
    pub condition_slack: f64,
    pub condition_holds: Option<bool>,
    pub beta_value: Option<f64>,
    pub minimal_odd_l: Option<usize>,
    /// Quadratic form along `vec(u qᵀ)^{⊗l}` at the point itself.
    pub quadform_at_delta: f64,
    /// Same direction for the rank-1 lift of `X̂` at `minimal_odd_l`.
    pub quadform_at_minimal_l: Option<f64>,
    /// `1/‖M*‖²_F`.
    pub kappa_threshold: Option<f64>,
    /// Global-conversion inequality
    /// `‖M*‖_F ≤ 2√2 α^{5/2} / (τ √r (L+α)² √L)` with `τ = cond(M*)`.
    pub global_condition_holds: Option<bool>,
    pub pca_flagged: bool,
    pub factor: Vec<f64>,
}

pub fn certify_lifted_point(
    p: &LiftedProblem,
    w: &DenseTensor,
    constants: Option<&SmoothnessConstants>,
    pca: &PcaConfig,
) -> Result<SaddleCertificate> {
    let e = p.ensemble();
    let l = p.level();
    let rec = recover_factor(p, w, pca)?;
    let esc = escape_factor(e, &rec.x)?;
    let fop_residual = (&esc.grad_matrix * &rec.x.0).norm();
    let dir = FactorMatrix(esc.matrix());
    let delta = lift_factor(&dir, l, 1.0)?;
    let quadform_at_delta = lifted_hessian_quadform(p, w, &delta)?;
    let sym = if asymmetry(w)? > 1e-6 { symmetrize(w)? } else { w.clone() };
    let kappa_estimate = deflation_ratio(&sym, pca)?.ratio;
    let condition_slack = e.r as f64 * kappa_estimate.powf(1.0 / l as f64);
    let (condition_lhs, condition_rhs, beta, minimal_l) = condition_terms(e, &rec.x, constants);
    let condition_holds = condition_lhs.zip(condition_rhs).map(|(lhs, rhs)| lhs >= rhs + condition_slack);
    let quadform_at_minimal_l = match minimal_l {
        Some(ml) => Some(rank1_lift_quadform(e, &rec.x, &dir, ml)?),
        None => None,
    };
    let (kappa_threshold, global_condition_holds) = match (e.m_star.as_ref(), constants) {
        (Some(m), c) => {
            let thr = 1.0 / m.norm_squared();
            let global = c.map(|c| {
                let (vals, _) = linalg::sym_eigen(m);
                let top = vals[vals.len() - 1];
                let low = vals[vals.len() - e.r];
                let tau = if low > 0.0 { top / low } else { f64::INFINITY };
                let bound = 2.0 * 2f64.sqrt() * c.alpha_s.powf(2.5)
                    / (tau * (e.r as f64).sqrt() * (c.l_s + c.alpha_s).powi(2) * c.l_s.sqrt());
                m.norm() <= bound
            });
            (Some(thr), global)
        }
        (None, _) => (None, None),
    };
    Ok(SaddleCertificate {
        lifted_grad_norm: lifted_grad(p, w)?.norm(),
        fop_residual,
        kappa_estimate,
        lambda_min: esc.lambda_min,
        condition_lhs,
        condition_rhs,
        condition_slack,
        condition_holds,
        beta_value: beta,
        minimal_odd_l: minimal_l,
        quadform_at_delta,
        quadform_at_minimal_l,
        kappa_threshold,
        global_condition_holds,
        pca_flagged: rec.flagged,
        factor: linalg::vectorize(&rec.x.0),
    })
}
