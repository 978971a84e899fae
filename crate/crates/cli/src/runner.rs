//! Seeded trial execution for the lifted and unlifted arms.

use crate::config::{ExperimentConfig, ExperimentKind, PmcTruth};
use anyhow::{Context, Result};
use rayon::prelude::*;
use std::time::Instant;
use tenslift::instances::{nn_quadratic_trial, odd_support_factor, pmc_instance_with, SensingEnsemble};
use tenslift::lifted::{init_lifted, recover_factor, LiftedProblem, Strategy};
use tenslift::optim::{run_lifted, run_unlifted, LogRow, StopReason};
use tenslift::rng::{self, Tag};
use tenslift::unlifted::{recovery_error, FactorMatrix};
use tenslift::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Lifted,
    Unlifted,
}

impl Arm {
    pub fn name(&self) -> &'static str {
        match self {
            Arm::Lifted => "lifted",
            Arm::Unlifted => "unlifted",
        }
    }
}

/// Result of one arm of one trial.
#[derive(Clone, Debug)]
pub struct ArmOutcome {
    pub success: bool,
    pub recovery_error: Option<f64>,
    pub iters: usize,
    pub wall_ms: Option<u64>,
    pub trajectory: Vec<LogRow>,
    pub stop: Option<StopReason>,
    /// Set when the optimizer diverged; the trial then counts as a failure.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub lifted: ArmOutcome,
    pub unlifted: Option<ArmOutcome>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialOutcome>,
    /// Evaluation path actually used by the lifted arm.
    pub strategy: Strategy,
    pub fell_back_to_staged: bool,
}

impl ExperimentResult {
    pub fn success_count(&self, arm: Arm) -> usize {
        self.arm(arm).filter(|a| a.success).count()
    }

    pub fn success_rate(&self, arm: Arm) -> Option<f64> {
        let n = self.arm(arm).count();
        (n > 0).then(|| self.success_count(arm) as f64 / n as f64)
    }

    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &ArmOutcome> {
        self.trials.iter().filter_map(move |t| match arm {
            Arm::Lifted => Some(&t.lifted),
            Arm::Unlifted => t.unlifted.as_ref(),
        })
    }
}

/// The sensing instance shared by both arms of `trial`.
pub fn build_instance(cfg: &ExperimentConfig, trial: usize) -> Result<SensingEnsemble> {
    let t = trial as u64;
    Ok(match cfg.experiment {
        ExperimentKind::Pmc => {
            let z = match cfg.pmc_truth {
                PmcTruth::OddSupport => odd_support_factor(cfg.n, cfg.r, cfg.seed, t),
                PmcTruth::Gaussian => rng::normal_matrix(&mut rng::stream(cfg.seed, t, Tag::Instance), cfg.n, cfg.r),
            };
            pmc_instance_with(cfg.n, cfg.r, cfg.rho.unwrap_or(0.01), cfg.pmc_convention, Some(z), cfg.seed)?
        }
        ExperimentKind::Nn => nn_quadratic_trial(cfg.n, cfg.r, cfg.m.context("nn experiments need m")?, cfg.seed, t)?,
        ExperimentKind::Custom => {
            let path = cfg.instance_file.as_ref().context("custom experiments need instance_file")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SensingEnsemble::from_json(&text)?
        }
    })
}

/// Build the lifted problem, honouring the configured strategy and the
/// memory budget from the environment.
pub fn lifted_problem(cfg: &ExperimentConfig, e: SensingEnsemble) -> Result<LiftedProblem> {
    let p = LiftedProblem::new(e, cfg.l, cfg.strategy)?;
    if p.fell_back_to_staged() {
        log::warn!("gram path over the memory budget for n={} r={} l={}; using the staged path", cfg.n, cfg.r, cfg.l);
    }
    Ok(p)
}

fn timed<T>(on: bool, f: impl FnOnce() -> T) -> (T, Option<u64>) {
    let start = Instant::now();
    let out = f();
    (out, on.then(|| start.elapsed().as_millis() as u64))
}

fn diverged(wall_ms: Option<u64>, err: Error) -> Result<ArmOutcome> {
    match err {
        Error::Diverged { iter: at, .. } => Ok(ArmOutcome {
            success: false,
            recovery_error: None,
            iters: at,
            wall_ms,
            trajectory: Vec::new(),
            stop: None,
            failure: Some(format!("diverged at iteration {at}")),
        }),
        other => Err(other.into()),
    }
}

pub fn run_lifted_arm(cfg: &ExperimentConfig, p: &LiftedProblem, trial: usize) -> Result<ArmOutcome> {
    let init = init_lifted(p, cfg.epsilon, cfg.rho_init(), cfg.seed, trial as u64)?;
    let mut opt = cfg.lifted_optimizer();
    opt.seed = rng::derive_seed(cfg.seed, trial as u64, Tag::Optimizer);
    let (res, wall_ms) = timed(cfg.record_wall_time, || {
        run_lifted(p, &init.w0, &opt).and_then(|(w, log)| Ok((recover_factor(p, &w, &cfg.pca)?, log)))
    });
    let (rec, log) = match res {
        Ok(v) => v,
        Err(e) => return diverged(wall_ms, e),
    };
    let err = rec.recovery_error;
    Ok(ArmOutcome {
        success: err.is_some_and(|v| v <= cfg.success_threshold),
        recovery_error: err,
        iters: log.iterations,
        wall_ms,
        trajectory: log.rows,
        stop: log.stop,
        failure: None,
    })
}

pub fn run_unlifted_arm(cfg: &ExperimentConfig, e: &SensingEnsemble, trial: usize) -> Result<ArmOutcome> {
    let rank = cfg.unlifted_rank();
    let scale = cfg.unlifted.init_scale.unwrap_or(cfg.epsilon);
    let g = rng::normal_matrix(&mut rng::stream(cfg.seed, trial as u64, Tag::UnliftedInit), cfg.n, rank);
    let x0 = FactorMatrix(g * scale);
    let mut opt = cfg.unlifted_optimizer();
    opt.seed = rng::derive_seed(cfg.seed, trial as u64, Tag::Optimizer);
    let (res, wall_ms) = timed(cfg.record_wall_time, || run_unlifted(e, &x0, &opt));
    let (x, log) = match res {
        Ok(v) => v,
        Err(err) => return diverged(wall_ms, err),
    };
    let err = e.m_star.as_ref().map(|_| recovery_error(e, &x)).transpose()?;
    Ok(ArmOutcome {
        success: err.is_some_and(|v| v <= cfg.success_threshold),
        recovery_error: err,
        iters: log.iterations,
        wall_ms,
        trajectory: log.rows,
        stop: log.stop,
        failure: None,
    })
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<(TrialOutcome, Strategy, bool)> {
    let e = build_instance(cfg, trial)?;
    let unlifted = if cfg.unlifted.enabled { Some(run_unlifted_arm(cfg, &e, trial)?) } else { None };
    let p = lifted_problem(cfg, e)?;
    let lifted = run_lifted_arm(cfg, &p, trial)?;
    Ok((TrialOutcome { trial, lifted, unlifted }, p.strategy(), p.fell_back_to_staged()))
}

/// Run every trial on the current rayon pool; outcomes come back in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let results: Vec<_> = (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect::<Result<_>>()?;
    let strategy = results.first().map_or(cfg.strategy, |r| r.1);
    let fell_back = results.iter().any(|r| r.2);
    Ok(ExperimentResult {
        config: cfg.clone(),
        trials: results.into_iter().map(|r| r.0).collect(),
        strategy,
        fell_back_to_staged: fell_back,
    })
}
