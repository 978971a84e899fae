//! CSV reports, trajectories and the run manifest.

use crate::config::ExperimentConfig;
use crate::runner::{Arm, ArmOutcome, ExperimentResult};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Column order of the per-trial report.
pub const REPORT_COLUMNS: [&str; 13] =
    ["experiment", "n", "r", "m", "l", "epsilon", "algorithm", "seed", "trial", "success", "recovery_error", "iters", "wall_ms"];

/// Column order of trajectory files.
pub const TRAJECTORY_COLUMNS: [&str; 6] = ["trial", "iter", "loss", "grad_norm", "asymmetry", "ratio"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub n: usize,
    pub r: usize,
    pub m: usize,
    /// Lift level; empty for the unlifted arm.
    pub l: Option<usize>,
    pub epsilon: f64,
    pub algorithm: String,
    pub seed: u64,
    pub trial: usize,
    pub success: bool,
    pub recovery_error: Option<f64>,
    pub iters: usize,
    pub wall_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub trial: usize,
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub asymmetry: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub r: usize,
    pub m: usize,
    pub l: Option<usize>,
    pub epsilon: f64,
    pub algorithm: String,
    pub arm: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

/// Measurement count of the instance family described by `cfg`.
fn measurement_count(cfg: &ExperimentConfig) -> usize {
    cfg.m.unwrap_or(cfg.n * cfg.n)
}

fn arm_meta(cfg: &ExperimentConfig, arm: Arm) -> (Option<usize>, String) {
    match arm {
        Arm::Lifted => (Some(cfg.l), cfg.optimizer.algorithm.name().to_string()),
        Arm::Unlifted => (None, cfg.unlifted_optimizer().algorithm.name().to_string()),
    }
}

pub fn report_rows(res: &ExperimentResult, arm: Arm) -> Vec<ReportRow> {
    let cfg = &res.config;
    let (l, algorithm) = arm_meta(cfg, arm);
    res.trials
        .iter()
        .filter_map(|t| {
            let a: &ArmOutcome = match arm {
                Arm::Lifted => &t.lifted,
                Arm::Unlifted => t.unlifted.as_ref()?,
            };
            Some(ReportRow {
                experiment: cfg.experiment.name().to_string(),
                n: cfg.n,
                r: cfg.r,
                m: measurement_count(cfg),
                l,
                epsilon: cfg.epsilon,
                algorithm: algorithm.clone(),
                seed: cfg.seed,
                trial: t.trial,
                success: a.success,
                recovery_error: a.recovery_error,
                iters: a.iters,
                wall_ms: a.wall_ms,
            })
        })
        .collect()
}

pub fn summary_row(res: &ExperimentResult, arm: Arm) -> Option<SummaryRow> {
    let cfg = &res.config;
    let (l, algorithm) = arm_meta(cfg, arm);
    let trials = res.arm(arm).count();
    (trials > 0).then(|| SummaryRow {
        experiment: cfg.experiment.name().to_string(),
        n: cfg.n,
        r: cfg.r,
        m: measurement_count(cfg),
        l,
        epsilon: cfg.epsilon,
        algorithm,
        arm: arm.name().to_string(),
        trials,
        successes: res.success_count(arm),
        success_rate: res.success_rate(arm).unwrap_or(0.0),
    })
}

pub fn trajectory_rows(res: &ExperimentResult, arm: Arm) -> Vec<TrajectoryRow> {
    let mut out = Vec::new();
    for t in &res.trials {
        let a = match arm {
            Arm::Lifted => &t.lifted,
            Arm::Unlifted => match &t.unlifted {
                Some(a) => a,
                None => continue,
            },
        };
        out.extend(a.trajectory.iter().map(|r| TrajectoryRow {
            trial: t.trial,
            iter: r.iter,
            loss: r.loss,
            grad_norm: r.grad_norm,
            asymmetry: r.asymmetry,
            ratio: r.ratio,
        }));
    }
    out
}

/// Serialize rows with a header even when `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ManifestPoint<'a> {
    label: String,
    config: &'a ExperimentConfig,
    strategy: tenslift::lifted::Strategy,
    fell_back_to_staged: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    library: &'static str,
    version: &'static str,
    command: &'a str,
    preset: Option<&'a str>,
    full_grid: bool,
    threads: usize,
    gram_budget_bytes: usize,
    points: Vec<ManifestPoint<'a>>,
}

pub struct RunMeta<'a> {
    pub command: &'a str,
    pub preset: Option<&'a str>,
    pub full_grid: bool,
    pub threads: usize,
}

/// Write reports, summaries, trajectories and the manifest for a sweep.
pub fn write_run(out: &Path, results: &[ExperimentResult], meta: &RunMeta) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = Vec::new();
    for arm in [Arm::Lifted, Arm::Unlifted] {
        let rows: Vec<ReportRow> = results.iter().flat_map(|r| report_rows(r, arm)).collect();
        if arm == Arm::Lifted || !rows.is_empty() {
            write_csv(&out.join(format!("report_{}.csv", arm.name())), &REPORT_COLUMNS, &rows)?;
        }
        summary.extend(results.iter().filter_map(|r| summary_row(r, arm)));
    }
    write_csv(
        &out.join("summary.csv"),
        &["experiment", "n", "r", "m", "l", "epsilon", "algorithm", "arm", "trials", "successes", "success_rate"],
        &summary,
    )?;
    let traj_dir = out.join("trajectories");
    for (i, res) in results.iter().enumerate().filter(|(_, r)| r.config.write_trajectories) {
        fs::create_dir_all(&traj_dir)?;
        for arm in [Arm::Lifted, Arm::Unlifted] {
            if res.arm(arm).next().is_none() {
                continue;
            }
            let name = format!("{:02}_{}_{}.csv", i, res.config.label(), arm.name());
            write_csv(&traj_dir.join(name), &TRAJECTORY_COLUMNS, &trajectory_rows(res, arm))?;
        }
    }
    let manifest = Manifest {
        library: "tenslift",
        version: env!("CARGO_PKG_VERSION"),
        command: meta.command,
        preset: meta.preset,
        full_grid: meta.full_grid,
        threads: meta.threads,
        gram_budget_bytes: tenslift::lifted::gram_budget_from_env(),
        points: results
            .iter()
            .map(|r| ManifestPoint {
                label: r.config.label(),
                config: &r.config,
                strategy: r.strategy,
                fell_back_to_staged: r.fell_back_to_staged,
            })
            .collect(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Plain-text success table for the terminal.
pub fn render_summary(results: &[ExperimentResult]) -> String {
    let mut s = String::from("point                                     arm        successes  rate\n");
    for res in results {
        for arm in [Arm::Lifted, Arm::Unlifted] {
            if let Some(row) = summary_row(res, arm) {
                s.push_str(&format!(
                    "{:<41} {:<10} {:>4}/{:<5} {:.2}\n",
                    res.config.label(),
                    row.arm,
                    row.successes,
                    row.trials,
                    row.success_rate
                ));
            }
        }
    }
    s
}
