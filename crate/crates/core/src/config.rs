//! Run configuration: flat `key = value` lines with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! data.source = synth
//! losses.tau = 0.5
//! compare.label_ratios = 0.1,0.2,0.4
//! ```
//!
//! The schema is closed: an unknown key, a repeated key or a malformed value
//! is an error. Relative paths in a file resolve against the file's directory.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{SplitParams, SplitPattern, SynthSpec};
use crate::error::{Error, Result};
use crate::losses::NtXentDenominator;
use crate::nn::EncoderConfig;
use crate::rng::ALGORITHM;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    /// Seed of the synthetic generator; the dataset is shared by every run seed.
    pub data_seed: u64,
    pub label_ratio: f64,
    pub split_pattern: SplitPattern,
    pub split: SplitParams,
    /// Encoder shape; `in_channels` is taken from the data.
    pub model: EncoderConfig,
    /// Training settings; `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    pub compare_label_ratios: Vec<f64>,
    pub ablate_two_stage_with_ls: bool,
    /// Pre-train the two-stage encoder on this dataset instead of the unlabeled pool.
    pub pretrain_manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: DataSource::Synth(SynthSpec::default()),
            data_seed: 0,
            label_ratio: 1.0,
            split_pattern: SplitPattern::TrialDependent,
            split: SplitParams::default(),
            model: EncoderConfig::new(1),
            train: TrainConfig::default(),
            compare_label_ratios: vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            ablate_two_stage_with_ls: false,
            pretrain_manifest: None,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "rng.algorithm",
    "data.source",
    "data.manifest",
    "data.seed",
    "data.num_samples",
    "data.num_classes",
    "data.channels",
    "data.length",
    "data.noise_sigma",
    "data.num_subjects",
    "data.label_ratio",
    "split.pattern",
    "split.test_fraction",
    "split.holdout_trials",
    "split.holdout_subjects",
    "model.num_blocks",
    "model.dilations",
    "model.feature_channels",
    "model.embed_dim",
    "losses.lambda1",
    "losses.lambda2",
    "losses.lambda3",
    "losses.tau",
    "losses.nt_xent_denominator",
    "augment.temporal_mask",
    "augment.mask_prob",
    "augment.jitter",
    "augment.jitter_sigma",
    "train.regime",
    "train.ablation",
    "train.epochs",
    "train.batch_size",
    "train.optimizer",
    "train.learning_rate",
    "train.pretrain_epochs",
    "train.freeze_encoder",
    "compare.label_ratios",
    "ablate.include_two_stage_with_ls",
    "transfer.pretrain_manifest",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn synth_mut<'a>(source: &'a mut DataSource, key: &str) -> Result<&'a mut SynthSpec> {
    match source {
        DataSource::Synth(spec) => Ok(spec),
        DataSource::Csv(_) => Err(Error::Config(format!("{key} only applies to data.source = synth"))),
    }
}

fn denominator(value: &str) -> Result<NtXentDenominator> {
    match value {
        "all_views" => Ok(NtXentDenominator::AllViews),
        "first_view_only" => Ok(NtXentDenominator::FirstViewOnly),
        _ => Err(Error::Config(format!("losses.nt_xent_denominator: unknown value {value:?}"))),
    }
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; relative paths resolve against `base`.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            self.set(key, value.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("configuration error: "))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override; relative paths stay relative to the
    /// working directory.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {kv:?}")))?;
        self.set(key.trim(), value.trim(), Path::new(""))
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let t = &mut self.train;
        match key {
            "rng.algorithm" => {
                if value != ALGORITHM {
                    return Err(Error::Config(format!("rng.algorithm: only {ALGORITHM} is available, got {value:?}")));
                }
            }
            "data.source" => match value {
                "synth" => {
                    if !matches!(self.source, DataSource::Synth(_)) {
                        self.source = DataSource::Synth(SynthSpec::default());
                    }
                }
                "csv" => {
                    if !matches!(self.source, DataSource::Csv(_)) {
                        self.source = DataSource::Csv(PathBuf::new());
                    }
                }
                _ => return Err(Error::Config(format!("data.source: expected synth or csv, got {value:?}"))),
            },
            "data.manifest" => match &mut self.source {
                DataSource::Csv(p) => *p = base.join(value),
                DataSource::Synth(_) => {
                    return Err(Error::Config("data.manifest needs data.source = csv set before it".into()))
                }
            },
            "data.seed" => self.data_seed = parse(key, value)?,
            "data.num_samples" => synth_mut(&mut self.source, key)?.num_samples = parse(key, value)?,
            "data.num_classes" => synth_mut(&mut self.source, key)?.num_classes = parse(key, value)?,
            "data.channels" => synth_mut(&mut self.source, key)?.channels = parse(key, value)?,
            "data.length" => synth_mut(&mut self.source, key)?.length = parse(key, value)?,
            "data.noise_sigma" => synth_mut(&mut self.source, key)?.noise_sigma = parse(key, value)?,
            "data.num_subjects" => synth_mut(&mut self.source, key)?.num_subjects = parse(key, value)?,
            "data.label_ratio" => self.label_ratio = parse(key, value)?,
            "split.pattern" => self.split_pattern = value.parse()?,
            "split.test_fraction" => self.split.test_fraction = parse(key, value)?,
            "split.holdout_trials" => self.split.holdout_trials = parse(key, value)?,
            "split.holdout_subjects" => self.split.holdout_subjects = parse(key, value)?,
            "model.num_blocks" => self.model.num_blocks = parse(key, value)?,
            "model.dilations" => self.model.dilations = parse_list(key, value)?,
            "model.feature_channels" => self.model.feature_channels = parse_list(key, value)?,
            "model.embed_dim" => self.model.embed_dim = parse(key, value)?,
            "losses.lambda1" => t.weights.lambda1 = parse(key, value)?,
            "losses.lambda2" => t.weights.lambda2 = parse(key, value)?,
            "losses.lambda3" => t.weights.lambda3 = parse(key, value)?,
            "losses.tau" => t.weights.tau = parse(key, value)?,
            "losses.nt_xent_denominator" => t.denominator = denominator(value)?,
            "augment.temporal_mask" => t.augment.temporal_mask = parse(key, value)?,
            "augment.mask_prob" => t.augment.mask_prob = parse(key, value)?,
            "augment.jitter" => t.augment.jitter = parse(key, value)?,
            "augment.jitter_sigma" => t.augment.jitter_sigma = parse(key, value)?,
            "train.regime" => t.regime = value.parse()?,
            "train.ablation" => t.ablation = value.parse()?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.optimizer" => t.optimizer = value.parse()?,
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
            "train.freeze_encoder" => t.freeze_encoder = parse(key, value)?,
            "compare.label_ratios" => self.compare_label_ratios = parse_list(key, value)?,
            "ablate.include_two_stage_with_ls" => self.ablate_two_stage_with_ls = parse(key, value)?,
            "transfer.pretrain_manifest" => {
                self.pretrain_manifest = (!value.is_empty()).then(|| base.join(value));
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let mut model = self.model.clone();
        model.in_channels = model.in_channels.max(1);
        model.validate().map_err(|e| Error::Config(e.to_string()))?;
        let ratio_ok = |r: f64| r > 0.0 && r <= 1.0;
        if !ratio_ok(self.label_ratio) {
            return Err(Error::Config(format!("data.label_ratio must lie in (0, 1], got {}", self.label_ratio)));
        }
        if self.compare_label_ratios.is_empty() || !self.compare_label_ratios.iter().all(|r| ratio_ok(*r)) {
            return Err(Error::Config(format!(
                "compare.label_ratios must be a non-empty list in (0, 1], got {:?}",
                self.compare_label_ratios
            )));
        }
        match &self.source {
            DataSource::Csv(p) if p.as_os_str().is_empty() => {
                return Err(Error::Config("data.source = csv needs data.manifest".into()))
            }
            DataSource::Synth(s) if s.num_classes < 2 => {
                return Err(Error::Config(format!("data.num_classes must be at least 2, got {}", s.num_classes)))
            }
            _ => {}
        }
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split.test_fraction must lie in (0, 1), got {f}")));
        }
        Ok(())
    }
}
