//! First-order drivers over the unlifted and lifted objectives: gradient
//! descent, Adam, perturbed gradient descent, and CustomGD with its
//! deterministic rank-1 escape step.

use crate::diagnostics::{beta_value, minimal_odd_l};
use crate::error::{Error, Result};
use crate::instances::{SensingEnsemble, SmoothnessConstants};
use crate::lifted::{lift_factor, lifted_loss, lifted_loss_grad, recover_factor, LiftedProblem};
use crate::linalg::{self, unstack};
use crate::pca::{deflation_ratio, PcaConfig};
use crate::rng::{self, Tag};
use crate::tensor::{asymmetry, symmetrize, DenseTensor};
use crate::unlifted::{escape_factor, unlifted_grad, unlifted_loss, FactorMatrix};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Gd,
    Adam,
    PerturbedGd,
    CustomGd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Adam => "adam",
            Algorithm::PerturbedGd => "perturbed_gd",
            Algorithm::CustomGd => "custom_gd",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbedParams {
    pub noise_radius: f64,
    pub g_thres: f64,
    pub t_thres: usize,
}

impl Default for PerturbedParams {
    fn default() -> Self {
        Self { noise_radius: 1e-3, g_thres: 1e-6, t_thres: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomGdParams {
    /// `None` means `1e-6 · (1 + loss at the origin)`.
    pub g_thres: Option<f64>,
    pub buffer_limit: usize,
    pub min_iters_before_escape: usize,
    pub armijo_beta: f64,
    pub armijo_gamma: f64,
    pub eta_0: f64,
    pub pca: PcaConfig,
}

impl Default for CustomGdParams {
    fn default() -> Self {
        Self {
            g_thres: None,
            buffer_limit: 10,
            min_iters_before_escape: 100,
            armijo_beta: 1e-4,
            armijo_gamma: 0.5,
            eta_0: 1.0,
            pca: PcaConfig::default(),
        }
    }
}

/// What to record while optimizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogConfig {
    /// Row cadence; iteration 0 and the final iterate are always recorded.
    pub checkpoint_every: usize,
    /// Iterations at which the deflation ratio is computed (lifted runs only).
    pub ratio_at: Vec<usize>,
    /// Additional ratio cadence; 0 disables it.
    pub ratio_every: usize,
    /// Iterations whose full iterate is kept.
    pub keep_iterates_at: Vec<usize>,
    pub pca: PcaConfig,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self { checkpoint_every: 100, ratio_at: Vec::new(), ratio_every: 0, keep_iterates_at: Vec::new(), pca: PcaConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub adam: AdamParams,
    pub perturbed_gd: PerturbedParams,
    pub custom_gd: CustomGdParams,
    pub seed: u64,
    pub log: LogConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Gd,
            learning_rate: 1e-3,
            max_iters: 1000,
            grad_tol: 1e-10,
            adam: AdamParams::default(),
            perturbed_gd: PerturbedParams::default(),
            custom_gd: CustomGdParams::default(),
            seed: 0,
            log: LogConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.custom_gd;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol must be non-negative");
        }
        if !(c.armijo_gamma > 0.0 && c.armijo_gamma < 1.0) {
            return bad("armijo_gamma must lie in (0, 1)");
        }
        if c.buffer_limit == 0 {
            return bad("buffer_limit must be at least 1");
        }
        if !(c.eta_0 > 0.0) {
            return bad("eta_0 must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("adam parameters out of range");
        }
        if !(self.perturbed_gd.noise_radius >= 0.0) {
            return bad("noise_radius must be non-negative");
        }
        if self.log.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1");
        }
        c.pca.validate()?;
        self.log.pca.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub asymmetry: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEvent {
    pub iter: usize,
    pub sign: f64,
    pub step: f64,
    pub accepted: bool,
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    GradTol,
    NoEscape,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
    pub escapes: Vec<EscapeEvent>,
    pub iterates: Vec<(usize, Vec<f64>)>,
    pub iterations: usize,
    pub stop: Option<StopReason>,
}

impl TrajectoryLog {
    pub fn final_row(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Escape direction with the diagnostics used to build it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeDiagnostics {
    /// `λ_min(∇f(X̂X̂ᵀ))`.
    pub lambda_min: f64,
    pub sign: f64,
    /// `‖M* − X̂X̂ᵀ‖²_F`.
    pub condition_lhs: Option<f64>,
    /// `(L_s/α_s) λ_r(X̂X̂ᵀ) tr(M*)`.
    pub condition_rhs: Option<f64>,
    pub beta: Option<f64>,
    pub minimal_odd_l: Option<usize>,
    pub factor: Vec<f64>,
    pub pca_flagged: bool,
}

/// Condition sides, `β` and the minimal odd level for a candidate factor.
pub(crate) fn condition_terms(
    e: &SensingEnsemble,
    x: &FactorMatrix,
    constants: Option<&SmoothnessConstants>,
) -> (Option<f64>, Option<f64>, Option<f64>, Option<usize>) {
    let (Some(m_star), Some(c)) = (e.m_star.as_ref(), constants) else {
        return (None, None, None, None);
    };
    let gram = x.gram();
    let (vals, _) = linalg::sym_eigen(&gram);
    let lambda_r = vals[vals.len() - x.rank()].max(0.0);
    let lhs = (m_star - &gram).norm_squared();
    let rhs = c.l_s / c.alpha_s * lambda_r * m_star.trace();
    let beta = beta_value(c.l_s, c.alpha_s, m_star.trace(), lambda_r, lhs);
    (Some(lhs), Some(rhs), beta, beta.and_then(minimal_odd_l))
}

/// `Δ = ± vec(u qᵀ)^{⊗l}` from the dominant rank-1 factor of `w`, with the
/// sign giving the lower loss at `w + eta_0 Δ`.
pub fn escape_direction(
    p: &LiftedProblem,
    w: &DenseTensor,
    pca: &PcaConfig,
    constants: Option<&SmoothnessConstants>,
    eta_0: f64,
) -> Result<(DenseTensor, EscapeDiagnostics)> {
    let rec = recover_factor(p, w, pca)?;
    let e = p.ensemble();
    let esc = escape_factor(e, &rec.x)?;
    let base = lift_factor(&FactorMatrix(esc.matrix()), p.level(), 1.0)?;
    let plus = lifted_loss(p, &w.add_scaled(eta_0, &base)?)?;
    let minus = lifted_loss(p, &w.add_scaled(-eta_0, &base)?)?;
    let sign = if minus < plus { -1.0 } else { 1.0 };
    let (condition_lhs, condition_rhs, beta, minimal_odd_l) = condition_terms(e, &rec.x, constants);
    let diag = EscapeDiagnostics {
        lambda_min: esc.lambda_min,
        sign,
        condition_lhs,
        condition_rhs,
        beta,
        minimal_odd_l,
        factor: linalg::vectorize(&rec.x.0),
        pca_flagged: rec.flagged,
    };
    Ok((base.scaled(sign), diag))
}

/// Both objectives seen as functions of a flat parameter vector.
trait Objective {
    fn loss(&self, x: &[f64]) -> Result<f64>;
    fn loss_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn asymmetry(&self, x: &[f64]) -> Option<f64>;
    fn ratio(&self, x: &[f64], pca: &PcaConfig) -> Option<f64>;
    fn escape(&self, x: &[f64], pca: &PcaConfig, eta_0: f64) -> Option<Vec<f64>>;
    fn zero_loss(&self) -> Result<f64>;
    fn len(&self) -> usize;
}

struct Unlifted<'a> {
    e: &'a SensingEnsemble,
    r: usize,
}

impl Unlifted<'_> {
    fn factor(&self, x: &[f64]) -> Result<FactorMatrix> {
        Ok(FactorMatrix(unstack(x, self.e.n, self.r)?))
    }
}

impl Objective for Unlifted<'_> {
    fn loss(&self, x: &[f64]) -> Result<f64> {
        unlifted_loss(self.e, &self.factor(x)?)
    }

    fn loss_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f = self.factor(x)?;
        Ok((unlifted_loss(self.e, &f)?, linalg::vectorize(&unlifted_grad(self.e, &f)?.0)))
    }

    fn asymmetry(&self, _: &[f64]) -> Option<f64> {
        None
    }

    fn ratio(&self, _: &[f64], _: &PcaConfig) -> Option<f64> {
        None
    }

    fn escape(&self, x: &[f64], _: &PcaConfig, eta_0: f64) -> Option<Vec<f64>> {
        let f = self.factor(x).ok()?;
        let dir = linalg::vectorize(&escape_factor(self.e, &f).ok()?.matrix());
        let at = |s: f64| self.loss(&x.iter().zip(&dir).map(|(a, d)| a + s * eta_0 * d).collect::<Vec<_>>()).ok();
        let sign = if at(-1.0)? < at(1.0)? { -1.0 } else { 1.0 };
        Some(dir.into_iter().map(|d| sign * d).collect())
    }

    fn zero_loss(&self) -> Result<f64> {
        self.loss(&vec![0.0; self.len()])
    }

    fn len(&self) -> usize {
        self.e.n * self.r
    }
}

struct Lifted<'a> {
    p: &'a LiftedProblem,
}

impl Lifted<'_> {
    fn tensor(&self, x: &[f64]) -> Result<DenseTensor> {
        DenseTensor::from_vec(self.p.level(), self.p.dim(), x.to_vec())
    }
}

impl Objective for Lifted<'_> {
    fn loss(&self, x: &[f64]) -> Result<f64> {
        lifted_loss(self.p, &self.tensor(x)?)
    }

    fn loss_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lg = lifted_loss_grad(self.p, &self.tensor(x)?)?;
        Ok((lg.loss, lg.grad.into_vec()))
    }

    fn asymmetry(&self, x: &[f64]) -> Option<f64> {
        asymmetry(&self.tensor(x).ok()?).ok()
    }

    fn ratio(&self, x: &[f64], pca: &PcaConfig) -> Option<f64> {
        let mut t = self.tensor(x).ok()?;
        if asymmetry(&t).ok()? > 1e-6 {
            t = symmetrize(&t).ok()?;
        }
        deflation_ratio(&t, pca).ok().map(|d| d.ratio)
    }

    fn escape(&self, x: &[f64], pca: &PcaConfig, eta_0: f64) -> Option<Vec<f64>> {
        let w = self.tensor(x).ok()?;
        escape_direction(self.p, &w, pca, None, eta_0).ok().map(|(d, _)| d.into_vec())
    }

    fn zero_loss(&self) -> Result<f64> {
        self.loss(&vec![0.0; self.len()])
    }

    fn len(&self) -> usize {
        self.p.dim().pow(self.p.level() as u32)
    }
}

pub fn run_lifted(p: &LiftedProblem, w0: &DenseTensor, cfg: &OptimizerConfig) -> Result<(DenseTensor, TrajectoryLog)> {
    if w0.order() != p.level() || w0.dim() != p.dim() || !w0.is_cubic() {
        return Err(Error::Shape(format!("initial point has shape {:?}", w0.shape())));
    }
    let (x, log) = drive(&Lifted { p }, w0.data().to_vec(), cfg)?;
    Ok((w0.with_data(x), log))
}

pub fn run_unlifted(e: &SensingEnsemble, x0: &FactorMatrix, cfg: &OptimizerConfig) -> Result<(FactorMatrix, TrajectoryLog)> {
    if x0.0.nrows() != e.n {
        return Err(Error::Shape(format!("initial factor has {} rows, expected {}", x0.0.nrows(), e.n)));
    }
    let obj = Unlifted { e, r: x0.rank() };
    let (x, log) = drive(&obj, linalg::vectorize(&x0.0), cfg)?;
    Ok((obj.factor(&x)?, log))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn drive(obj: &dyn Objective, mut x: Vec<f64>, cfg: &OptimizerConfig) -> Result<(Vec<f64>, TrajectoryLog)> {
    cfg.validate()?;
    let mut log = TrajectoryLog::default();
    let mut rng = rng::stream(cfg.seed, 0, Tag::Optimizer);
    let lr = cfg.learning_rate;
    let cg = &cfg.custom_gd;
    let g_thres = match (cfg.algorithm, cg.g_thres) {
        (Algorithm::CustomGd, Some(g)) => g,
        (Algorithm::CustomGd, None) => 1e-6 * (1.0 + obj.zero_loss()?),
        _ => cfg.perturbed_gd.g_thres,
    };
    let (mut m1, mut m2) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    let mut t_noise: Option<usize> = None;
    let (mut escape_armed, mut buffer_step, mut escape_exhausted) = (false, 0usize, false);
    let mut last_finite = x.clone();

    let mut t = 0usize;
    loop {
        let (mut loss, mut grad) = obj.loss_grad(&x)?;
        if cfg.algorithm == Algorithm::PerturbedGd
            && cfg.perturbed_gd.noise_radius > 0.0
            && norm(&grad) <= g_thres
            && t_noise.map_or(true, |tn| t - tn > cfg.perturbed_gd.t_thres)
        {
            let dir = rng::unit_vec(&mut rng, x.len());
            let radius = cfg.perturbed_gd.noise_radius * rng.random::<f64>().powf(1.0 / x.len() as f64);
            x.iter_mut().zip(&dir).for_each(|(a, d)| *a += radius * d);
            t_noise = Some(t);
            (loss, grad) = obj.loss_grad(&x)?;
        }
        let gn = norm(&grad);
        if !loss.is_finite() || !gn.is_finite() {
            return Err(Error::Diverged { iter: t, last_finite });
        }
        last_finite.clone_from(&x);

        let done_max = t >= cfg.max_iters;
        let done_tol = gn <= cfg.grad_tol && (cfg.algorithm != Algorithm::CustomGd || escape_exhausted);
        let checkpoint = t % cfg.log.checkpoint_every == 0 || done_max || done_tol;
        let want_ratio = cfg.log.ratio_at.contains(&t) || (cfg.log.ratio_every > 0 && t % cfg.log.ratio_every == 0);
        if checkpoint || want_ratio {
            log.rows.push(LogRow {
                iter: t,
                loss,
                grad_norm: gn,
                asymmetry: obj.asymmetry(&x),
                ratio: if want_ratio { obj.ratio(&x, &cfg.log.pca) } else { None },
            });
        }
        if cfg.log.keep_iterates_at.contains(&t) {
            log.iterates.push((t, x.clone()));
        }
        if done_max || done_tol {
            log.iterations = t;
            log.stop = Some(if done_max {
                StopReason::MaxIters
            } else if cfg.algorithm == Algorithm::CustomGd {
                StopReason::NoEscape
            } else {
                StopReason::GradTol
            });
            return Ok((x, log));
        }

        let curr_iter = t + 1;
        match cfg.algorithm {
            Algorithm::Gd | Algorithm::PerturbedGd => x.iter_mut().zip(&grad).for_each(|(a, g)| *a -= lr * g),
            Algorithm::Adam => {
                let AdamParams { beta1, beta2, eps } = cfg.adam;
                let c1 = 1.0 - beta1.powi(curr_iter as i32);
                let c2 = 1.0 - beta2.powi(curr_iter as i32);
                for ((a, g), (m, v)) in x.iter_mut().zip(&grad).zip(m1.iter_mut().zip(m2.iter_mut())) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *a -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            Algorithm::CustomGd => {
                let mut plain = true;
                if gn < g_thres && curr_iter > cg.min_iters_before_escape {
                    if escape_armed {
                        escape_armed = false;
                        plain = false;
                        match obj.escape(&x, &cg.pca, cg.eta_0) {
                            Some(dir) => {
                                let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                                let mut eta = cg.eta_0;
                                let mut trial_loss;
                                loop {
                                    let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + eta * d).collect();
                                    trial_loss = obj.loss(&cand).unwrap_or(f64::INFINITY);
                                    if trial_loss <= loss + cg.armijo_beta * eta * slope || eta < 1e-12 * cg.eta_0 {
                                        break;
                                    }
                                    eta *= cg.armijo_gamma;
                                }
                                let accepted = eta >= 1e-12 * cg.eta_0 && trial_loss.is_finite();
                                let sign = dir.iter().find(|v| **v != 0.0).map_or(1.0, |v| v.signum());
                                log.escapes.push(EscapeEvent {
                                    iter: curr_iter,
                                    sign,
                                    step: if accepted { eta } else { 0.0 },
                                    accepted,
                                    loss_before: loss,
                                    loss_after: if accepted { trial_loss } else { loss },
                                });
                                if accepted {
                                    x.iter_mut().zip(&dir).for_each(|(a, d)| *a += eta * d);
                                    escape_exhausted = false;
                                } else {
                                    escape_exhausted = true;
                                    plain = true;
                                }
                            }
                            None => {
                                log.escapes.push(EscapeEvent {
                                    iter: curr_iter,
                                    sign: 0.0,
                                    step: 0.0,
                                    accepted: false,
                                    loss_before: loss,
                                    loss_after: loss,
                                });
                                escape_exhausted = true;
                                plain = true;
                            }
                        }
                    } else {
                        buffer_step += 1;
                        if buffer_step == cg.buffer_limit {
                            escape_armed = true;
                            buffer_step = 0;
                        }
                    }
                } else {
                    escape_armed = false;
                }
                if plain {
                    x.iter_mut().zip(&grad).for_each(|(a, g)| *a -= lr * g);
                }
            }
        }
        t += 1;
    }
}
