use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use tenslift::instances::SensingEnsemble;
use tenslift_cli::commands::{self, PointFile};
use tenslift_cli::config::ExperimentConfig;
use tenslift_cli::presets;
use tenslift_cli::report::{self, RunMeta};
use tenslift_cli::runner::build_instance;

#[derive(Parser)]
#[command(name = "tenslift", version, about = "Lifted matrix sensing experiments")]
struct Cli {
    /// Worker threads for the trial pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped sweep preset.
    #[arg(long)]
    preset: Option<String>,
    /// Run the preset's full grid instead of the desk-sized subset.
    #[arg(long, requires = "preset")]
    full_grid: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run lifted and unlifted trials and write reports.
    Run(Source),
    /// Log the deflation ratio of lifted iterates at checkpoints.
    RatioTrace(Source),
    /// Certify a lifted point against an instance.
    Certify {
        #[arg(long, required_unless_present = "instance")]
        config: Option<PathBuf>,
        /// Ensemble JSON, used instead of building one from a config.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// JSON point: an object with "x" or "w", or an array of them.
        #[arg(long)]
        point: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render report, ratio or trajectory CSVs as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-start search for spurious second-order points.
    HarvestSpurious(Source),
}

fn configs(src: &Source) -> Result<Vec<ExperimentConfig>> {
    match (&src.config, &src.preset) {
        (Some(path), None) => Ok(vec![ExperimentConfig::load(path)?]),
        (None, Some(name)) => presets::preset(name, src.full_grid),
        _ => bail!("pass either --config or --preset"),
    }
}

fn out_dir(explicit: &Option<PathBuf>, cfg: Option<&ExperimentConfig>, fallback: &str) -> PathBuf {
    explicit.clone().or_else(|| cfg.and_then(|c| c.output_dir.clone())).unwrap_or_else(|| Path::new("out").join(fallback))
}

fn single(src: &Source, what: &str) -> Result<ExperimentConfig> {
    let mut cfgs = configs(src)?;
    if cfgs.len() != 1 {
        log::info!("{what} uses the first of {} preset points", cfgs.len());
    }
    Ok(cfgs.swap_remove(0))
}

fn read_points(path: &Path) -> Result<Vec<PointFile>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    let points = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value),
        _ => serde_json::from_value(value).map(|p| vec![p]),
    };
    points.with_context(|| format!("malformed point file {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("building the thread pool")?;
    }
    let threads = rayon::current_num_threads();
    match &cli.command {
        Command::Run(src) => {
            let cfgs = configs(src)?;
            let out = out_dir(&src.out, cfgs.first(), "run");
            let results = tenslift_cli::run_all(&cfgs)?;
            let meta = RunMeta { command: "run", preset: src.preset.as_deref(), full_grid: src.full_grid, threads };
            report::write_run(&out, &results, &meta)?;
            print!("{}", report::render_summary(&results));
            println!("reports written to {}", out.display());
        }
        Command::RatioTrace(src) => {
            let cfg = single(src, "ratio-trace")?;
            let out = out_dir(&src.out, Some(&cfg), "ratio_trace");
            let rows = commands::ratio_trace(&cfg)?;
            commands::write_ratio_trace(&out, &rows)?;
            for r in &rows {
                println!("trial {:>3}  iter {:>5}  ratio {}", r.trial, r.iter, r.ratio.map_or("-".into(), |v| format!("{v:.4e}")));
            }
        }
        Command::Certify { config, instance, point, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let ensemble = match instance {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    SensingEnsemble::from_json(&text).with_context(|| format!("malformed instance file {}", p.display()))?
                }
                None => build_instance(&cfg, 0)?,
            };
            let out = out_dir(out, config.as_ref().map(|_| &cfg), "certify");
            let points = read_points(point)?;
            for (i, pt) in points.iter().enumerate() {
                let dir = if points.len() == 1 { out.clone() } else { out.join(format!("point_{i:03}")) };
                let cert = commands::certify(ensemble.clone(), pt, &cfg)?;
                let text = commands::write_certificate(&dir, &cert)?;
                println!("== point {i} ==\n{text}");
            }
        }
        Command::Plot { inputs, out } => {
            let out = out.clone().unwrap_or_else(|| PathBuf::from("out/plots"));
            for p in tenslift_cli::plot::plot_files(inputs, &out)? {
                println!("{}", p.display());
            }
        }
        Command::HarvestSpurious(src) => {
            let cfg = single(src, "harvest-spurious")?;
            let out = out_dir(&src.out, Some(&cfg), "harvest");
            let count = commands::harvest(&cfg, &out)?;
            println!("{count} spurious second-order points written to {}", out.display());
        }
    }
    Ok(())
}
