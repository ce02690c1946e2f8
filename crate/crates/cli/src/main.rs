use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use slots_core::config::{DataSource, RunConfig};
use slots_core::data::{write_dataset, SplitPattern};
use slots_core::error::ErrorCategory;
use slots_core::experiment::{self, load_dataset};
use slots_core::nn::read_checkpoint;
use slots_core::{Error, Result};

#[derive(Parser)]
#[command(name = "slots", version, about = "Semi-supervised contrastive training for multichannel time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and report test metrics.
    Train(Common),
    /// Score a saved checkpoint on the test split of each seed.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare full, no_Lu and no_Ls (and optionally two_stage_with_Ls).
    Ablate(Common),
    /// Train both regimes at each label ratio on identical data.
    CompareRegimes(Common),
    /// Write the configured synthetic dataset as CSV plus a manifest.
    SynthGen(Common),
}

#[derive(Args)]
struct Common {
    /// Config file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    pattern: Option<SplitPattern>,
    #[arg(long)]
    label_ratio: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(p) = self.pattern {
            cfg.split_pattern = p;
        }
        if let Some(r) = self.label_ratio {
            cfg.label_ratio = r;
            cfg.compare_label_ratios = vec![r];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn unix_time() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Appends a timestamped line to `<out>/run.log`. Timestamps go nowhere else.
fn sidecar(out: &Path, line: &str) {
    if std::fs::create_dir_all(out).is_err() {
        return;
    }
    if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(out.join("run.log")) {
        let _ = writeln!(f, "{:.3} {line}", unix_time());
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Eval { common, .. } => ("eval", common),
        Command::Ablate(c) => ("ablate", c),
        Command::CompareRegimes(c) => ("compare-regimes", c),
        Command::SynthGen(c) => ("synth-gen", c),
    };
    let cfg = common.config()?;
    let out = &common.out;
    let seeds = &common.seeds;
    sidecar(out, &format!("start {name} seeds {seeds:?}"));
    let started = Instant::now();
    match &cli.command {
        Command::Train(_) => {
            let report = experiment::train(&cfg, seeds, out)?;
            print!("{}", report.to_csv());
        }
        Command::Eval { checkpoint, .. } => {
            let model = read_checkpoint(checkpoint)?;
            let report = experiment::eval(&cfg, &model, seeds, out)?;
            print!("{}", report.to_csv());
        }
        Command::Ablate(_) => {
            let data = load_dataset(&cfg)?;
            let runs = experiment::ablate(&cfg, &data, seeds)?;
            experiment::write_ablation(&runs, out)?;
            print!("{}", experiment::ablation_csv(&runs));
        }
        Command::CompareRegimes(_) => {
            let data = load_dataset(&cfg)?;
            let cmp = experiment::compare_regimes(&cfg, &data, &cfg.compare_label_ratios, seeds)?;
            for row in cmp.metric("f1") {
                log::info!("ratio {} label subset {}", row.label_ratio, row.label_hash);
                sidecar(out, &format!("ratio {} label_hash {}", row.label_ratio, row.label_hash));
            }
            experiment::write_comparison(&cmp, out)?;
            print!("{}", cmp.to_csv());
        }
        Command::SynthGen(_) => {
            if !matches!(cfg.source, DataSource::Synth(_)) {
                return Err(Error::Config("synth-gen needs data.source = synth".into()));
            }
            let data = load_dataset(&cfg)?;
            write_dataset(&data, out)?;
            println!("wrote {} samples to {}", data.len(), out.display());
        }
    }
    sidecar(out, &format!("done {name} in {:.1}s", started.elapsed().as_secs_f64()));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (tag, code) = match e.category() {
                ErrorCategory::Config => ("config", 2),
                ErrorCategory::Divergence => ("divergence", 3),
                ErrorCategory::Io => ("io", 4),
                ErrorCategory::Other => ("error", 1),
            };
            eprintln!("error[{tag}]: {e}");
            ExitCode::from(code)
        }
    }
}
