//! Ratio tracing, certification and spurious-point harvesting.

use crate::config::ExperimentConfig;
use crate::report::write_csv;
use crate::runner::{build_instance, lifted_problem};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use tenslift::diagnostics::{certify_lifted_point, SaddleCertificate};
use tenslift::instances::{smoothness_constants, SensingEnsemble};
use tenslift::lifted::{init_lifted, lift_factor, LiftedProblem};
use tenslift::linalg::unstack;
use tenslift::optim::run_lifted;
use tenslift::rng::{self, Tag};
use tenslift::unlifted::{harvest_spurious, FactorMatrix};
use tenslift::DenseTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub trial: usize,
    pub iter: usize,
    pub ratio: Option<f64>,
}

/// Deflation ratio of the lifted iterate at each configured checkpoint.
pub fn ratio_trace(cfg: &ExperimentConfig) -> Result<Vec<RatioRow>> {
    cfg.validate()?;
    let last = *cfg.ratio_checkpoints.iter().max().context("ratio_checkpoints is empty")?;
    let per_trial: Vec<Vec<RatioRow>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<RatioRow>> {
            let p = lifted_problem(cfg, build_instance(cfg, trial)?)?;
            let init = init_lifted(&p, cfg.epsilon, cfg.rho_init(), cfg.seed, trial as u64)?;
            let mut opt = cfg.lifted_optimizer();
            opt.max_iters = last;
            opt.grad_tol = 0.0;
            opt.seed = rng::derive_seed(cfg.seed, trial as u64, Tag::Optimizer);
            opt.log.ratio_at = cfg.ratio_checkpoints.clone();
            opt.log.pca = cfg.pca.clone();
            let (_, log) = run_lifted(&p, &init.w0, &opt)?;
            Ok(cfg
                .ratio_checkpoints
                .iter()
                .map(|&iter| RatioRow {
                    trial,
                    iter,
                    ratio: log.rows.iter().find(|r| r.iter == iter).and_then(|r| r.ratio),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn write_ratio_trace(out: &Path, rows: &[RatioRow]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("ratio_trace.csv"), &["trial", "iter", "ratio"], rows)
}

/// A lifted point: either the tensor itself or a factor to be lifted.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    /// Column-major `n × r` factor.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    /// Flattened order-`l` tensor.
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub l: Option<usize>,
}

impl PointFile {
    pub fn tensor(&self, e: &SensingEnsemble, default_l: usize) -> Result<DenseTensor> {
        let l = self.l.unwrap_or(default_l);
        let d = e.n * e.r;
        match (&self.x, &self.w) {
            (Some(x), None) => {
                if x.len() != d {
                    bail!("point factor has {} entries, expected n*r = {d}", x.len());
                }
                Ok(lift_factor(&FactorMatrix(unstack(x, e.n, e.r)?), l, 1.0)?)
            }
            (None, Some(w)) => {
                let want = d.checked_pow(l as u32).context("tensor size overflows")?;
                if w.len() != want {
                    bail!("point tensor has {} entries, expected (n*r)^l = {want}", w.len());
                }
                Ok(DenseTensor::from_vec(l, d, w.clone())?)
            }
            _ => bail!("point file needs exactly one of \"x\" or \"w\""),
        }
    }
}

/// Certificate fields in display order, with omission markers for values
/// that need the ground truth or smoothness constants.
pub fn certificate_fields(c: &SaddleCertificate) -> Vec<(&'static str, String)> {
    const OMIT: &str = "omitted (no ground truth)";
    let opt = |v: Option<f64>| v.map_or_else(|| OMIT.to_string(), |v| format!("{v:e}"));
    vec![
        ("lifted_grad_norm", format!("{:e}", c.lifted_grad_norm)),
        ("fop_residual", format!("{:e}", c.fop_residual)),
        ("kappa_estimate", format!("{:e}", c.kappa_estimate)),
        ("lambda_min", format!("{:e}", c.lambda_min)),
        ("condition_lhs", opt(c.condition_lhs)),
        ("condition_rhs", opt(c.condition_rhs)),
        ("condition_slack", format!("{:e}", c.condition_slack)),
        ("condition_holds", c.condition_holds.map_or_else(|| OMIT.to_string(), |b| b.to_string())),
        ("beta_value", opt(c.beta_value)),
        (
            "minimal_odd_l",
            match (c.minimal_odd_l, c.beta_value) {
                (Some(l), _) => l.to_string(),
                (None, Some(_)) => "none (beta >= 1)".to_string(),
                (None, None) => OMIT.to_string(),
            },
        ),
        ("quadform_at_delta", format!("{:e}", c.quadform_at_delta)),
        (
            "quadform_at_minimal_l",
            match (c.quadform_at_minimal_l, c.beta_value) {
                (Some(q), _) => format!("{q:e}"),
                (None, Some(_)) => "none (no admissible level)".to_string(),
                (None, None) => OMIT.to_string(),
            },
        ),
        ("kappa_threshold", opt(c.kappa_threshold)),
        ("global_condition_holds", c.global_condition_holds.map_or_else(|| OMIT.to_string(), |b| b.to_string())),
        ("pca_flagged", c.pca_flagged.to_string()),
        ("factor", c.factor.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")),
    ]
}

pub fn certify(e: SensingEnsemble, point: &PointFile, cfg: &ExperimentConfig) -> Result<SaddleCertificate> {
    let w = point.tensor(&e, cfg.l)?;
    let constants = smoothness_constants(&e, 200, cfg.seed).ok();
    let p = LiftedProblem::new(e, w.order(), cfg.strategy)?;
    Ok(certify_lifted_point(&p, &w, constants.as_ref(), &cfg.pca)?)
}

pub fn write_certificate(out: &Path, c: &SaddleCertificate) -> Result<String> {
    std::fs::create_dir_all(out)?;
    let fields = certificate_fields(c);
    let mut text = String::new();
    for (k, v) in &fields {
        writeln!(text, "{k:<24} {v}")?;
    }
    std::fs::write(out.join("certificate.txt"), &text)?;
    let mut w = csv::Writer::from_path(out.join("certificate.csv"))?;
    w.write_record(["field", "value"])?;
    for (k, v) in &fields {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(text)
}

#[derive(Clone, Debug, Serialize)]
pub struct HarvestRow {
    pub start: usize,
    pub grad_norm: f64,
    pub recovery_error: f64,
    pub fop_residual: f64,
    pub min_quadform: f64,
}

/// Harvest spurious second-order points of the unlifted problem and write
/// them as a table plus point files accepted by `certify`.
pub fn harvest(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    cfg.validate()?;
    let e = build_instance(cfg, 0)?;
    let mut hc = cfg.harvest.clone();
    hc.rank = cfg.r;
    let points = harvest_spurious(&e, &hc)?;
    std::fs::create_dir_all(out)?;
    let rows: Vec<HarvestRow> = points
        .iter()
        .map(|p| HarvestRow {
            start: p.start,
            grad_norm: p.grad_norm,
            recovery_error: p.recovery_error,
            fop_residual: p.certificate.fop_residual,
            min_quadform: p.certificate.min_quadform,
        })
        .collect();
    write_csv(&out.join("harvest.csv"), &["start", "grad_norm", "recovery_error", "fop_residual", "min_quadform"], &rows)?;
    let files: Vec<PointFile> =
        points.iter().map(|p| PointFile { x: Some(p.x.0.as_slice().to_vec()), w: None, l: Some(cfg.l) }).collect();
    std::fs::write(out.join("points.json"), serde_json::to_string_pretty(&files)? + "\n")?;
    std::fs::write(out.join("instance.json"), e.to_json()? + "\n")?;
    Ok(points.len())
}
