//! Experiment configuration: a JSON document whose unknown keys are errors.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use tenslift::instances::PmcConvention;
use tenslift::lifted::Strategy;
use tenslift::optim::OptimizerConfig;
use tenslift::pca::PcaConfig;
use tenslift::unlifted::HarvestConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Perturbed matrix completion.
    #[default]
    Pmc,
    /// Two-layer network with quadratic activation.
    Nn,
    /// Ensemble loaded from `instance_file`.
    Custom,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Pmc => "pmc",
            ExperimentKind::Nn => "nn",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// Ground-truth factor distribution for completion instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PmcTruth {
    /// Gaussian entries on the rows outside the fully observed set, zero elsewhere.
    #[default]
    OddSupport,
    Gaussian,
}

/// Settings of the Burer–Monteiro comparison arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnliftedArm {
    pub enabled: bool,
    /// Optimizer for this arm; the lifted optimizer when absent.
    pub optimizer: Option<OptimizerConfig>,
    /// Search rank; `n` for network instances and `r` otherwise when absent.
    pub rank: Option<usize>,
    /// Scale of the Gaussian start; `epsilon` when absent.
    pub init_scale: Option<f64>,
}

impl Default for UnliftedArm {
    fn default() -> Self {
        Self { enabled: true, optimizer: None, rank: None, init_scale: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub r: usize,
    /// Sample count for network instances.
    pub m: Option<usize>,
    /// Off-support weight for completion instances.
    pub rho: Option<f64>,
    pub pmc_convention: PmcConvention,
    pub pmc_truth: PmcTruth,
    /// Ensemble document for `custom` experiments.
    pub instance_file: Option<PathBuf>,
    pub l: usize,
    pub epsilon: f64,
    /// Standard deviation of the Gaussian part of the lifted start; `1/(nr)` when absent.
    pub rho_init: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub unlifted: UnliftedArm,
    pub trials: usize,
    pub success_threshold: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Iterations at which `ratio-trace` evaluates the deflation ratio.
    pub ratio_checkpoints: Vec<usize>,
    pub strategy: Strategy,
    /// Rank-1 extraction settings used for recovery.
    pub pca: PcaConfig,
    /// Multi-start settings for `harvest-spurious`.
    pub harvest: HarvestConfig,
    /// Wall-clock time breaks byte-identical reports, so it is opt-in.
    pub record_wall_time: bool,
    pub write_trajectories: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Pmc,
            n: 10,
            r: 1,
            m: None,
            rho: Some(0.01),
            pmc_convention: PmcConvention::AsWritten,
            pmc_truth: PmcTruth::OddSupport,
            instance_file: None,
            l: 3,
            epsilon: 1e-7,
            rho_init: None,
            optimizer: OptimizerConfig::default(),
            unlifted: UnliftedArm::default(),
            trials: 10,
            success_threshold: 0.05,
            seed: 0,
            checkpoint_every: 100,
            ratio_checkpoints: (1..=9).map(|k| 20 * k).collect(),
            strategy: Strategy::Auto,
            pca: PcaConfig::default(),
            harvest: HarvestConfig::default(),
            record_wall_time: false,
            write_trajectories: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let unknown = unknown_keys(&value);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let cfg: Self = serde_json::from_value(value).context("invalid config value")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.l == 0 {
            bail!("l must be at least 1");
        }
        if !(self.success_threshold > 0.0) {
            bail!("success_threshold must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bail!("epsilon must be positive");
        }
        if self.n == 0 || self.r == 0 {
            bail!("n and r must be positive");
        }
        if self.checkpoint_every == 0 {
            bail!("checkpoint_every must be at least 1");
        }
        match self.experiment {
            ExperimentKind::Pmc => {
                let rho = self.rho.context("pmc experiments need rho")?;
                if !(rho > 0.0 && rho <= 1.0) {
                    bail!("rho must lie in (0, 1]");
                }
            }
            ExperimentKind::Nn => {
                self.m.context("nn experiments need m")?;
            }
            ExperimentKind::Custom => {
                self.instance_file.as_ref().context("custom experiments need instance_file")?;
            }
        }
        self.optimizer.validate()?;
        if let Some(o) = &self.unlifted.optimizer {
            o.validate()?;
        }
        self.pca.validate()?;
        Ok(())
    }

    pub fn rho_init(&self) -> f64 {
        self.rho_init.unwrap_or(1.0 / (self.n * self.r) as f64)
    }

    pub fn unlifted_rank(&self) -> usize {
        self.unlifted.rank.unwrap_or(match self.experiment {
            ExperimentKind::Nn => self.n,
            _ => self.r,
        })
    }

    /// Lifted optimizer with the experiment-level checkpoint cadence applied.
    pub fn lifted_optimizer(&self) -> OptimizerConfig {
        let mut o = self.optimizer.clone();
        o.log.checkpoint_every = self.checkpoint_every;
        o
    }

    pub fn unlifted_optimizer(&self) -> OptimizerConfig {
        let mut o = self.unlifted.optimizer.clone().unwrap_or_else(|| self.optimizer.clone());
        o.log.checkpoint_every = self.checkpoint_every;
        o
    }

    /// Short label used in file names for one sweep point.
    pub fn label(&self) -> String {
        let mut s = format!("{}_n{}_r{}", self.experiment.name(), self.n, self.r);
        if let Some(m) = self.m {
            s.push_str(&format!("_m{m}"));
        }
        s.push_str(&format!("_l{}_eps{:e}_{}", self.l, self.epsilon, self.optimizer.algorithm.name()));
        s
    }
}

/// Key paths present in `input` that no configuration field accepts.
fn unknown_keys(input: &Value) -> Vec<String> {
    let mut full = ExperimentConfig::default();
    full.unlifted.optimizer = Some(OptimizerConfig::default());
    let schema = serde_json::to_value(&full).expect("config serializes");
    let mut out = Vec::new();
    collect_unknown(input, &schema, "", &mut out);
    out
}

fn collect_unknown(input: &Value, schema: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(inp), Value::Object(sch)) = (input, schema) else {
        return;
    };
    for (k, v) in inp {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match sch.get(k) {
            None => out.push(path),
            Some(s) => collect_unknown(v, s, &path, out),
        }
    }
}
