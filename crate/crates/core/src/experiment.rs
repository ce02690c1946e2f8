//! Multi-seed runs built from a [`RunConfig`]: plain training, regime
//! comparison across label ratios, and loss ablations.

use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, RunConfig};
use crate::data::{apply_label_ratio_within, load_csv, make_split, SemiLabeledDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::metrics::{mean_std, EvalReport, RunMetrics};
use crate::nn::{write_checkpoint, SlotsModel};
use crate::rng::{stream_rng, Stream};
use crate::train::{fit, fit_two_stage_transfer, Ablation, Regime, TrainConfig, TrainTrace};

/// Loads or generates the dataset named by the config.
pub fn load_dataset(cfg: &RunConfig) -> Result<SemiLabeledDataset> {
    match &cfg.source {
        DataSource::Synth(spec) => spec.generate(cfg.data_seed),
        DataSource::Csv(manifest) => load_csv(manifest),
    }
}

/// One trained model and what was measured on it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub regime: Regime,
    pub ablation: Ablation,
    pub label_ratio: f64,
    pub split_hash: String,
    /// SHA-256 of the sorted indices that kept their labels in the train split.
    pub label_hash: String,
    pub metrics: RunMetrics,
    pub trace: TrainTrace,
    pub model: SlotsModel,
}

/// What varies between runs that share a config and dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub seed: u64,
    pub regime: Regime,
    pub ablation: Ablation,
    pub label_ratio: f64,
}

impl RunSpec {
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Self {
        RunSpec { seed, regime: cfg.train.regime, ablation: cfg.train.ablation, label_ratio: cfg.label_ratio }
    }
}

pub fn label_hash(dataset: &SemiLabeledDataset, train: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in train {
        if dataset.samples()[i].label.is_some() {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Split, label subset and initial weights of a seed. Two runs with the same
/// seed and ratio see the same data whatever their regime.
pub fn prepare_run(cfg: &RunConfig, dataset: &SemiLabeledDataset, seed: u64, label_ratio: f64) -> Result<(SplitPlan, SemiLabeledDataset, SlotsModel)> {
    let split = make_split(dataset, cfg.split_pattern, &cfg.split, seed)?;
    let data = apply_label_ratio_within(dataset, &split.train, label_ratio, seed)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.in_channels = dataset.channels();
    let model = SlotsModel::new(model_cfg, dataset.num_classes(), &mut stream_rng(seed, Stream::Init))?;
    Ok((split, data, model))
}

pub fn run_one(
    cfg: &RunConfig,
    dataset: &SemiLabeledDataset,
    pretrain: Option<&SemiLabeledDataset>,
    spec: RunSpec,
) -> Result<RunOutput> {
    let (split, data, model) = prepare_run(cfg, dataset, spec.seed, spec.label_ratio)?;
    let train_cfg = TrainConfig { seed: spec.seed, regime: spec.regime, ablation: spec.ablation, ..cfg.train.clone() };
    let (model, trace) = match (spec.regime, pretrain) {
        (Regime::TwoStage, Some(pre)) => fit_two_stage_transfer(model, pre, &data, &split, &train_cfg)?,
        _ => fit(model, &data, &split, &train_cfg)?,
    };
    let metrics = crate::train::evaluate_split(&model, &data, &split)?;
    log::info!(
        "seed {} {} {} ratio {}: accuracy {:.4} f1 {:.4}",
        spec.seed,
        spec.regime.name(),
        spec.ablation.name(),
        spec.label_ratio,
        metrics.accuracy,
        metrics.f1
    );
    Ok(RunOutput {
        seed: spec.seed,
        regime: spec.regime,
        ablation: spec.ablation,
        label_ratio: spec.label_ratio,
        split_hash: split.hash(),
        label_hash: label_hash(&data, &split.train),
        metrics,
        trace,
        model,
    })
}

/// Runs every spec in parallel; results keep the input order.
pub fn run_many(cfg: &RunConfig, dataset: &SemiLabeledDataset, specs: &[RunSpec]) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let pretrain = match &cfg.pretrain_manifest {
        Some(path) => Some(load_csv(path)?),
        None => None,
    };
    specs.par_iter().map(|s| run_one(cfg, dataset, pretrain.as_ref(), *s)).collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::Config(format!("seed list {seeds:?} has duplicates")));
    }
    Ok(())
}

/// Trains one model per seed with the configured regime and writes
/// `report.csv` plus `seed-<s>/{trace.csv, model.ckpt}` under `out`.
pub fn train(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<EvalReport> {
    check_seeds(seeds)?;
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let specs: Vec<RunSpec> = seeds.iter().map(|&s| RunSpec::from_config(cfg, s)).collect();
    let runs = run_many(cfg, &dataset, &specs)?;
    create_dir(out)?;
    for r in &runs {
        let dir = out.join(format!("seed-{}", r.seed));
        create_dir(&dir)?;
        r.trace.write_csv(&dir.join("trace.csv"))?;
        write_checkpoint(&r.model, &dir.join("model.ckpt"))?;
    }
    let report = EvalReport::new(runs.iter().map(|r| (r.seed, r.metrics)).collect())?;
    write(&out.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

/// Scores a saved model on the test split of each seed.
pub fn eval(cfg: &RunConfig, model: &SlotsModel, seeds: &[u64], out: &Path) -> Result<EvalReport> {
    check_seeds(seeds)?;
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    if model.config().in_channels != dataset.channels() || model.num_classes() != dataset.num_classes() {
        return Err(Error::Schema(format!(
            "checkpoint expects {} channels and {} classes, data has {} and {}",
            model.config().in_channels,
            model.num_classes(),
            dataset.channels(),
            dataset.num_classes()
        )));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let split = make_split(&dataset, cfg.split_pattern, &cfg.split, seed)?;
            let data = apply_label_ratio_within(&dataset, &split.train, cfg.label_ratio, seed)?;
            Ok((seed, crate::train::evaluate_split(model, &data, &split)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::new(runs)?;
    create_dir(out)?;
    write(&out.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

/// One row of the regime comparison: a metric at one label ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label_ratio: f64,
    pub metric: &'static str,
    pub end_to_end: (f64, f64),
    pub two_stage: (f64, f64),
    pub label_hash: String,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub runs: Vec<RunOutput>,
}

impl Comparison {
    pub const HEADER: &'static str =
        "label_ratio,metric,end_to_end_mean,end_to_end_std,two_stage_mean,two_stage_std,label_hash";
    pub const RUNS_HEADER: &'static str =
        "label_ratio,regime,seed,split_hash,label_hash,accuracy,precision,recall,f1,auroc,auprc";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                r.label_ratio, r.metric, r.end_to_end.0, r.end_to_end.1, r.two_stage.0, r.two_stage.1, r.label_hash
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = format!("{}\n", Self::RUNS_HEADER);
        for r in &self.runs {
            out += &format!("{},{},{},{},{}", r.label_ratio, r.regime.name(), r.seed, r.split_hash, r.label_hash);
            for v in r.metrics.values() {
                out += &format!(",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Rows for `metric`, in label-ratio order.
    pub fn metric(&self, metric: &str) -> Vec<&CompareRow> {
        self.rows.iter().filter(|r| r.metric == metric).collect()
    }
}

fn combined_hash(hashes: &[&str]) -> String {
    let mut h = Sha256::new();
    for s in hashes {
        h.update(s.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs both regimes at every ratio and seed. Both regimes of a seed share
/// the split, label subset and initial weights.
pub fn compare_regimes(cfg: &RunConfig, dataset: &SemiLabeledDataset, ratios: &[f64], seeds: &[u64]) -> Result<Comparison> {
    check_seeds(seeds)?;
    let ablation_for = |regime| match (regime, cfg.train.ablation) {
        (Regime::EndToEnd, Ablation::TwoStageWithLs) => Ablation::Full,
        (_, a) => a,
    };
    let mut specs = Vec::new();
    for &label_ratio in ratios {
        for regime in [Regime::EndToEnd, Regime::TwoStage] {
            for &seed in seeds {
                specs.push(RunSpec { seed, regime, ablation: ablation_for(regime), label_ratio });
            }
        }
    }
    let runs = run_many(cfg, dataset, &specs)?;
    let mut rows = Vec::new();
    let n = seeds.len();
    for (k, &label_ratio) in ratios.iter().enumerate() {
        let e2e = &runs[2 * k * n..(2 * k + 1) * n];
        let two = &runs[(2 * k + 1) * n..(2 * k + 2) * n];
        for (a, b) in e2e.iter().zip(two) {
            if a.label_hash != b.label_hash {
                return Err(Error::State(format!(
                    "regimes saw different labeled subsets at seed {} ratio {label_ratio}",
                    a.seed
                )));
            }
        }
        let hash = combined_hash(&e2e.iter().map(|r| r.label_hash.as_str()).collect::<Vec<_>>());
        for (m, metric) in RunMetrics::NAMES.iter().enumerate() {
            let stats = |rs: &[RunOutput]| mean_std(&rs.iter().map(|r| r.metrics.values()[m]).collect::<Vec<_>>());
            rows.push(CompareRow {
                label_ratio,
                metric,
                end_to_end: stats(e2e),
                two_stage: stats(two),
                label_hash: hash.clone(),
            });
        }
    }
    Ok(Comparison { rows, runs })
}

/// Writes `compare.csv` and the per-run `compare_runs.csv`.
pub fn write_comparison(cmp: &Comparison, out: &Path) -> Result<()> {
    create_dir(out)?;
    write(&out.join("compare.csv"), &cmp.to_csv())?;
    write(&out.join("compare_runs.csv"), &cmp.runs_csv())
}

/// The ablations to run for a config.
pub fn ablations(cfg: &RunConfig) -> Vec<Ablation> {
    let mut list = vec![Ablation::Full, Ablation::NoLu, Ablation::NoLs];
    if cfg.ablate_two_stage_with_ls {
        list.push(Ablation::TwoStageWithLs);
    }
    list
}

/// One run per ablation per seed at the configured label ratio.
pub fn ablate(cfg: &RunConfig, dataset: &SemiLabeledDataset, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    check_seeds(seeds)?;
    let mut specs = Vec::new();
    for ablation in ablations(cfg) {
        let regime = if ablation == Ablation::TwoStageWithLs { Regime::TwoStage } else { Regime::EndToEnd };
        for &seed in seeds {
            specs.push(RunSpec { seed, regime, ablation, label_ratio: cfg.label_ratio });
        }
    }
    run_many(cfg, dataset, &specs)
}

pub const ABLATE_HEADER: &str = "ablation,seed,split_hash,label_hash,accuracy,precision,recall,f1,auroc,auprc";

pub fn ablation_csv(runs: &[RunOutput]) -> String {
    let mut out = format!("{ABLATE_HEADER}\n");
    for r in runs {
        out += &format!("{},{},{},{}", r.ablation.name(), r.seed, r.split_hash, r.label_hash);
        for v in r.metrics.values() {
            out += &format!(",{v}");
        }
        out.push('\n');
    }
    out
}

/// Mean of `metric` over the runs of `ablation`.
pub fn ablation_mean(runs: &[RunOutput], ablation: Ablation, metric: &str) -> Option<f64> {
    let m = RunMetrics::NAMES.iter().position(|n| *n == metric)?;
    let v: Vec<f64> = runs.iter().filter(|r| r.ablation == ablation).map(|r| r.metrics.values()[m]).collect();
    (!v.is_empty()).then(|| mean_std(&v).0)
}

pub fn write_ablation(runs: &[RunOutput], out: &Path) -> Result<()> {
    create_dir(out)?;
    write(&out.join("ablate.csv"), &ablation_csv(runs))
}
