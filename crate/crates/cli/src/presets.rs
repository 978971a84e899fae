//! Shipped sweep presets. Each runs a desk-sized subset unless the full grid
//! is requested.

use crate::config::{ExperimentConfig, ExperimentKind};
use anyhow::{bail, Result};
use tenslift::optim::{Algorithm, OptimizerConfig};

pub const PRESETS: [&str; 5] = ["figure1_n", "figure1_eps", "figure2_algorithms", "table1a", "table1b"];

/// Lifted step size for completion instances.
pub const PMC_LEARNING_RATE: f64 = 1e-3;
/// Iteration cap for completion instances on the full grid.
pub const PMC_MAX_ITERS: usize = 45_000;
pub const NN_LEARNING_RATE: f64 = 3e-3;
pub const NN_MAX_ITERS: usize = 15_000;

fn optimizer(algorithm: Algorithm, learning_rate: f64, max_iters: usize) -> OptimizerConfig {
    OptimizerConfig { algorithm, learning_rate, max_iters, grad_tol: 1e-12, ..OptimizerConfig::default() }
}

/// Completion experiment at the default point: n = 10, ε = 1e-7, CustomGD.
pub fn pmc_base(full: bool) -> ExperimentConfig {
    let iters = if full { PMC_MAX_ITERS } else { PMC_MAX_ITERS / 3 };
    let mut cfg = ExperimentConfig {
        experiment: ExperimentKind::Pmc,
        n: 10,
        r: 1,
        rho: Some(0.01),
        l: 3,
        epsilon: 1e-7,
        optimizer: optimizer(Algorithm::CustomGd, PMC_LEARNING_RATE, iters),
        trials: if full { 10 } else { 3 },
        checkpoint_every: 500,
        ..ExperimentConfig::default()
    };
    cfg.unlifted.optimizer = Some(optimizer(Algorithm::CustomGd, 10.0 * PMC_LEARNING_RATE, iters));
    cfg
}

/// Network experiment with Adam on both arms.
pub fn nn_base(n: usize, r: usize, m: usize, full: bool) -> ExperimentConfig {
    let iters = if full { NN_MAX_ITERS } else { NN_MAX_ITERS / 2 };
    ExperimentConfig {
        experiment: ExperimentKind::Nn,
        n,
        r,
        m: Some(m),
        rho: None,
        l: 3,
        epsilon: 1e-5,
        optimizer: optimizer(Algorithm::Adam, NN_LEARNING_RATE, iters),
        trials: if full { 10 } else { 3 },
        checkpoint_every: 250,
        ..ExperimentConfig::default()
    }
}

pub fn preset(name: &str, full: bool) -> Result<Vec<ExperimentConfig>> {
    let base = pmc_base(full);
    Ok(match name {
        "figure1_n" => {
            let ns: &[usize] = if full { &[8, 10, 12] } else { &[8, 10] };
            ns.iter().map(|&n| ExperimentConfig { n, ..base.clone() }).collect()
        }
        "figure1_eps" => [1e-3, 1e-5, 1e-7].iter().map(|&epsilon| ExperimentConfig { epsilon, ..base.clone() }).collect(),
        "figure2_algorithms" => [Algorithm::CustomGd, Algorithm::Gd, Algorithm::PerturbedGd, Algorithm::Adam]
            .iter()
            .map(|&alg| {
                let mut cfg = base.clone();
                cfg.optimizer.algorithm = alg;
                cfg.unlifted.enabled = false;
                if alg == Algorithm::Adam {
                    cfg.optimizer.learning_rate = NN_LEARNING_RATE;
                }
                cfg
            })
            .collect(),
        "table1a" | "table1b" => {
            let (r, ms): (usize, [usize; 3]) = if name == "table1a" { (1, [20, 30, 40]) } else { (2, [30, 40, 50]) };
            let ns: &[usize] = if full { &[8, 10, 12] } else { &[8] };
            ns.iter().flat_map(|&n| ms.iter().map(move |&m| nn_base(n, r, m, full))).collect()
        }
        other => bail!("unknown preset {other:?}; available: {}", PRESETS.join(", ")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            for full in [false, true] {
                let cfgs = preset(name, full).unwrap();
                assert!(!cfgs.is_empty());
                for c in &cfgs {
                    c.validate().unwrap();
                }
            }
        }
        assert!(preset("nope", false).is_err());
    }

    #[test]
    fn full_grids_match_published_sweeps() {
        let ns: Vec<usize> = preset("figure1_n", true).unwrap().iter().map(|c| c.n).collect();
        assert_eq!(ns, [8, 10, 12]);
        assert_eq!(preset("table1a", true).unwrap().len(), 9);
        let b = preset("table1b", true).unwrap();
        assert!(b.iter().all(|c| c.r == 2 && c.experiment == ExperimentKind::Nn));
        assert!(preset("figure1_eps", false).unwrap().iter().all(|c| c.trials < 10));
    }
}
