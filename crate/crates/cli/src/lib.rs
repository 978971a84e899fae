//! Experiment driver for lifted matrix sensing: configuration, seeded
//! trial batches, reports, certificates and plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod plot;
pub mod presets;
pub mod report;
pub mod runner;

use anyhow::Result;
use config::ExperimentConfig;
use runner::{run_experiment, ExperimentResult};

/// Run sweep points one after another; trials within a point run in parallel.
pub fn run_all(configs: &[ExperimentConfig]) -> Result<Vec<ExperimentResult>> {
    configs
        .iter()
        .map(|c| {
            log::info!("running {} ({} trials)", c.label(), c.trials);
            run_experiment(c)
        })
        .collect()
}
