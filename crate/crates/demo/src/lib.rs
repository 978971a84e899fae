//! Browser bindings for three small interactive experiments: the predicted
//! deflation-ratio curve, a lifted versus unlifted completion run, and
//! spiked tensor PCA. Every entry point returns a JSON string.

use serde::Serialize;
use tenslift::diagnostics::{ratio_predictor, t_kappa_l};
use tenslift::instances::{odd_support_factor, pmc_instance};
use tenslift::lifted::{init_lifted, recover_factor, LiftedProblem, Strategy};
use tenslift::optim::{run_lifted, run_unlifted, Algorithm, LogConfig, OptimizerConfig};
use tenslift::pca::{deflation_ratio, dominant_component, PcaConfig};
use tenslift::rng::{self, Tag};
use tenslift::tensor::symmetrize;
use tenslift::unlifted::{recovery_error, FactorMatrix};
use tenslift::DenseTensor;
use wasm_bindgen::prelude::*;

/// Recovery threshold on `‖XXᵀ − M*‖_F`.
pub const SUCCESS_THRESHOLD: f64 = 0.05;
const MAX_COMPLETION_N: usize = 8;
const MAX_PCA_ENTRIES: usize = 1 << 16;

#[derive(Debug, Serialize)]
pub struct RatioCurve {
    pub steps: Vec<u32>,
    pub ratios: Vec<f64>,
    /// Steps until the predicted ratio falls to `kappa`.
    pub t_kappa: Option<u64>,
    pub t_kappa_error: Option<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn ratio_curve_impl(
    sigma1: f64,
    sigma2: f64,
    eta: f64,
    l: usize,
    x0_norm: f64,
    align: f64,
    kappa: f64,
    horizon: u32,
) -> Result<RatioCurve, String> {
    if l == 0 || l % 2 == 0 {
        return Err(format!("l must be a positive odd integer, got {l}"));
    }
    if horizon == 0 {
        return Err("horizon must be positive".into());
    }
    let points = horizon.min(200);
    let steps: Vec<u32> = (0..=points).map(|i| (i as u64 * horizon as u64 / points as u64) as u32).collect();
    let ratios = steps.iter().map(|&t| ratio_predictor(sigma1, sigma2, eta, l, x0_norm, align, t)).collect();
    let (t_kappa, t_kappa_error) = match t_kappa_l(kappa, l, eta, sigma1, sigma2, x0_norm, align) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(RatioCurve { steps, ratios, t_kappa, t_kappa_error })
}

#[derive(Debug, Serialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ArmResult {
    pub recovery_error: Option<f64>,
    pub success: bool,
    pub iters: usize,
    pub trace: Vec<TracePoint>,
    pub diverged: bool,
}

#[derive(Debug, Serialize)]
pub struct CompletionResult {
    pub n: usize,
    pub lifted: ArmResult,
    pub unlifted: ArmResult,
}

fn arm(err: Option<f64>, iters: usize, trace: Vec<TracePoint>) -> ArmResult {
    ArmResult { recovery_error: err, success: err.is_some_and(|v| v <= SUCCESS_THRESHOLD), iters, trace, diverged: false }
}

fn diverged_arm(e: tenslift::Error) -> Result<ArmResult, String> {
    match e {
        tenslift::Error::Diverged { iter, .. } => {
            Ok(ArmResult { recovery_error: None, success: false, iters: iter, trace: Vec::new(), diverged: true })
        }
        other => Err(other.to_string()),
    }
}

/// Rank-1 completion with an odd-support truth, solved both with the
/// order-3 lifted objective and with the plain factored objective.
pub fn completion_impl(n: usize, rho: f64, epsilon: f64, lr: f64, iters: usize, seed: u64) -> Result<CompletionResult, String> {
    if !(2..=MAX_COMPLETION_N).contains(&n) {
        return Err(format!("n must lie in 2..={MAX_COMPLETION_N}, got {n}"));
    }
    let z = odd_support_factor(n, 1, seed, 0);
    let e = pmc_instance(n, 1, rho, Some(z), seed).map_err(|e| e.to_string())?;
    let every = (iters / 50).max(1);
    let opt = |lr: f64| OptimizerConfig {
        algorithm: Algorithm::Gd,
        learning_rate: lr,
        max_iters: iters,
        grad_tol: 1e-12,
        seed,
        log: LogConfig { checkpoint_every: every, ..LogConfig::default() },
        ..OptimizerConfig::default()
    };

    let x0 = FactorMatrix(rng::normal_matrix(&mut rng::stream(seed, 0, Tag::UnliftedInit), n, n) * epsilon);
    let unlifted = match run_unlifted(&e, &x0, &opt(10.0 * lr)) {
        Ok((x, log)) => {
            let err = recovery_error(&e, &x).map_err(|e| e.to_string())?;
            let trace = log.rows.iter().map(|r| TracePoint { iter: r.iter, loss: r.loss, ratio: None }).collect();
            arm(Some(err), log.iterations, trace)
        }
        Err(err) => diverged_arm(err)?,
    };

    let p = LiftedProblem::new(e, 3, Strategy::Auto).map_err(|e| e.to_string())?;
    let init = init_lifted(&p, epsilon, 1.0 / n as f64, seed, 0).map_err(|e| e.to_string())?;
    let mut lifted_opt = opt(lr);
    lifted_opt.log.ratio_every = every;
    let lifted = match run_lifted(&p, &init.w0, &lifted_opt) {
        Ok((w, log)) => {
            let rec = recover_factor(&p, &w, &PcaConfig::default()).map_err(|e| e.to_string())?;
            let trace = log.rows.iter().map(|r| TracePoint { iter: r.iter, loss: r.loss, ratio: r.ratio }).collect();
            arm(rec.recovery_error, log.iterations, trace)
        }
        Err(err) => diverged_arm(err)?,
    };
    Ok(CompletionResult { n, lifted, unlifted })
}

#[derive(Debug, Serialize)]
pub struct PcaResult {
    pub scale: f64,
    pub direction: Vec<f64>,
    pub planted: Vec<f64>,
    /// `|⟨u, v⟩|` between the recovered and planted directions.
    pub overlap: f64,
    pub residual_fro: f64,
    pub deflation_ratio: f64,
}

/// Plant `snr · v^{⊗order}` in symmetric Gaussian noise of unit Frobenius
/// norm and recover it.
pub fn spiked_pca_impl(order: usize, dim: usize, snr: f64, seed: u64) -> Result<PcaResult, String> {
    if order < 2 || dim == 0 {
        return Err(format!("need order >= 2 and dim >= 1, got order {order}, dim {dim}"));
    }
    let entries = dim.checked_pow(order as u32).filter(|&k| k <= MAX_PCA_ENTRIES);
    let entries = entries.ok_or_else(|| format!("dim^order must not exceed {MAX_PCA_ENTRIES}"))?;
    let mut r = rng::stream(seed, 0, Tag::Instance);
    let planted = rng::unit_vec(&mut r, dim);
    let noise = DenseTensor::from_vec(order, dim, rng::normal_vec(&mut r, entries)).map_err(|e| e.to_string())?;
    let noise = symmetrize(&noise).map_err(|e| e.to_string())?;
    let noise = noise.scaled(1.0 / noise.norm());
    let spike = DenseTensor::outer_power(&planted, order, snr).map_err(|e| e.to_string())?;
    let t = spike.add_scaled(1.0, &noise).map_err(|e| e.to_string())?;
    let cfg = PcaConfig::default();
    let c = dominant_component(&t, &cfg).map_err(|e| e.to_string())?;
    let d = deflation_ratio(&t, &cfg).map_err(|e| e.to_string())?;
    let overlap = c.direction.iter().zip(&planted).map(|(a, b)| a * b).sum::<f64>().abs();
    Ok(PcaResult { scale: c.scale, direction: c.direction, planted, overlap, residual_fro: c.residual_fro, deflation_ratio: d.ratio })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn ratio_curve(
    sigma1: f64,
    sigma2: f64,
    eta: f64,
    l: u32,
    x0_norm: f64,
    align: f64,
    kappa: f64,
    horizon: u32,
) -> Result<String, JsError> {
    to_js(ratio_curve_impl(sigma1, sigma2, eta, l as usize, x0_norm, align, kappa, horizon))
}

#[wasm_bindgen]
pub fn completion(n: u32, rho: f64, epsilon: f64, lr: f64, iters: u32, seed: u32) -> Result<String, JsError> {
    to_js(completion_impl(n as usize, rho, epsilon, lr, iters as usize, seed as u64))
}

#[wasm_bindgen]
pub fn spiked_pca(order: u32, dim: u32, snr: f64, seed: u32) -> Result<String, JsError> {
    to_js(spiked_pca_impl(order as usize, dim as usize, snr, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_curve_decays_with_a_gap() {
        let c = ratio_curve_impl(2.0, 1.0, 0.05, 3, 1.0, 0.5, 0.1, 100).unwrap();
        assert_eq!(c.steps.len(), c.ratios.len());
        assert!(c.ratios.windows(2).all(|w| w[1] <= w[0]));
        let t = c.t_kappa.unwrap();
        assert!(ratio_predictor(2.0, 1.0, 0.05, 3, 1.0, 0.5, t as u32) <= 0.1 + 1e-12);
    }

    #[test]
    fn ratio_curve_reports_missing_gap() {
        let c = ratio_curve_impl(1.0, 1.0, 0.05, 3, 1.0, 0.5, 0.1, 10).unwrap();
        assert!(c.t_kappa.is_none() && c.t_kappa_error.is_some());
        assert!(ratio_curve_impl(2.0, 1.0, 0.05, 2, 1.0, 0.5, 0.1, 10).is_err());
    }

    #[test]
    fn completion_runs_both_arms() {
        let r = completion_impl(4, 0.3, 1e-3, 1e-2, 400, 1).unwrap();
        assert!(!r.lifted.trace.is_empty() && !r.unlifted.trace.is_empty());
        assert!(r.lifted.recovery_error.is_some() || r.lifted.diverged);
        assert!(completion_impl(20, 0.3, 1e-3, 1e-2, 10, 1).is_err());
    }

    #[test]
    fn strong_spike_is_recovered() {
        let r = spiked_pca_impl(3, 6, 10.0, 7).unwrap();
        assert!(r.overlap > 0.95, "{}", r.overlap);
        assert!(r.deflation_ratio < 0.2);
        assert!(spiked_pca_impl(3, 100, 1.0, 0).is_err());
    }

    #[test]
    fn bindings_return_json() {
        let s = to_js(spiked_pca_impl(2, 4, 3.0, 0)).unwrap();
        assert!(s.starts_with('{') && s.contains("\"overlap\""));
    }
}
