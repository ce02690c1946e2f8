//! Training: the end-to-end hybrid-loss loop, the two-stage
//! pre-train/fine-tune baseline, ablations and optimizers.
//!
//! Each end-to-end step draws one unlabeled batch (two augmented views per
//! sample) and one labeled batch, runs all of them through the encoder in a
//! single pass, and updates encoder and classifier on the weighted sum of the
//! active loss components. An epoch lasts until the larger of the two pools
//! has been seen once; the smaller pool is reshuffled and reused as needed.

mod optim;
mod trace;

pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trace::{EpochRecord, TrainTrace};

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::{make_views, AugmentSpec};
use crate::autodiff::{Tape, Tensor};
use crate::data::{SemiLabeledDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, has_contrastive_anchor, hybrid, sup_contrastive, unsup_contrastive_with, LossWeights,
    NtXentDenominator,
};
use crate::metrics::{argmax_rows, classification_metrics, evaluate, RunMetrics};
use crate::nn::SlotsModel;
use crate::rng::{stream_rng, RunRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regime {
    #[default]
    EndToEnd,
    TwoStage,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::EndToEnd => "end_to_end",
            Regime::TwoStage => "two_stage",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Regime::EndToEnd, Regime::TwoStage]
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Drop the unsupervised contrastive term.
    NoLu,
    /// Drop the supervised contrastive term.
    NoLs,
    /// Two-stage training with the supervised contrastive term added to fine-tuning.
    TwoStageWithLs,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoLu, Ablation::NoLs, Ablation::TwoStageWithLs];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoLu => "no_Lu",
            Ablation::NoLs => "no_Ls",
            Ablation::TwoStageWithLs => "two_stage_with_Ls",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub ablation: Ablation,
    pub weights: LossWeights,
    pub denominator: NtXentDenominator,
    pub augment: AugmentSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stage-1 epochs of the two-stage regime.
    pub pretrain_epochs: usize,
    /// Keep the encoder fixed while fine-tuning in the two-stage regime.
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::EndToEnd,
            ablation: Ablation::Full,
            weights: LossWeights::default(),
            denominator: NtXentDenominator::AllViews,
            augment: AugmentSpec::default(),
            epochs: 30,
            batch_size: 100,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            seed: 0,
            pretrain_epochs: 30,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        self.weights.validate()?;
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.ablation == Ablation::TwoStageWithLs && self.regime != Regime::TwoStage {
            return Err(Error::Config("ablation two_stage_with_Ls requires the two_stage regime".into()));
        }
        if self.regime == Regime::TwoStage && self.weights.lambda3 == 0.0 {
            return Err(Error::Config("two-stage fine-tuning needs lambda3 > 0".into()));
        }
        Ok(())
    }
}

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    EncoderOnly,
    ClassifierOnly,
}

impl Trainable {
    fn includes(self, model: &SlotsModel, index: usize) -> bool {
        match self {
            Trainable::All => true,
            Trainable::EncoderOnly => !model.is_classifier_param(index),
            Trainable::ClassifierOnly => model.is_classifier_param(index),
        }
    }
}

/// The loss components a step computes, and how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub unsup: bool,
    pub sup: bool,
    pub classification: bool,
    pub weights: LossWeights,
    pub denominator: NtXentDenominator,
}

impl Objective {
    /// Components switched on by the configured weights and ablation.
    pub fn end_to_end(cfg: &TrainConfig) -> Self {
        let w = cfg.weights;
        Objective {
            unsup: w.lambda1 > 0.0 && cfg.ablation != Ablation::NoLu,
            sup: w.lambda2 > 0.0 && cfg.ablation != Ablation::NoLs,
            classification: w.lambda3 > 0.0,
            weights: w,
            denominator: cfg.denominator,
        }
    }
}

/// Inputs of one step: augmented view pair `[b, C, L]` x 2 and labeled samples.
#[derive(Debug, Clone, Default)]
pub struct StepBatch {
    pub views: Option<(Tensor, Tensor)>,
    pub labeled: Option<(Tensor, Vec<usize>)>,
}

/// Component values of one step; `None` for components not computed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub unsup: Option<f64>,
    pub sup: Option<f64>,
    pub classification: Option<f64>,
    /// Weighted sum; `None` when no component could be computed.
    pub hybrid: Option<f64>,
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0].shape();
    let mut shape = first.to_vec();
    shape[0] = parts.iter().map(|t| t.shape()[0]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for t in parts {
        if t.shape()[1..] != first[1..] {
            return Err(Error::dim("stack", format!("{:?} vs {:?}", t.shape(), first)));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data)
}

fn finite(component: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { component: component.into(), context: format!(" (value {v})") })
    }
}

/// Forward and backward pass of one step. Gradients are `None` for parameters
/// outside `trainable`, and for all parameters when nothing was computed.
pub fn compute_losses(
    model: &SlotsModel,
    batch: &StepBatch,
    objective: &Objective,
    trainable: Trainable,
) -> Result<(StepLosses, Vec<Option<Tensor>>)> {
    let n_params = model.parameters().len();
    let views = batch.views.as_ref().filter(|_| objective.unsup);
    let labeled = batch.labeled.as_ref().filter(|_| objective.sup || objective.classification);
    let mut parts: Vec<&Tensor> = Vec::new();
    if let Some((xi, xj)) = views {
        if xi.shape()[0] < 2 || xi.shape() != xj.shape() {
            return Err(Error::DegenerateBatch(format!("view batches {:?} and {:?}", xi.shape(), xj.shape())));
        }
        parts.extend([xi, xj]);
    }
    if let Some((xl, yl)) = labeled {
        if xl.shape()[0] != yl.len() || yl.is_empty() {
            return Err(Error::DegenerateBatch(format!("{} labels for labeled batch {:?}", yl.len(), xl.shape())));
        }
        parts.push(xl);
    }
    if parts.is_empty() {
        return Ok((StepLosses::default(), vec![None; n_params]));
    }

    let mut tape = Tape::new();
    let params = model.bind_selected(&mut tape, |i| trainable.includes(model, i));
    let x = tape.constant(stack(&parts)?);
    let z = model.encode(&mut tape, &params, x)?;
    let mut offset = 0;
    let mut losses = StepLosses::default();
    let mut lu = None;
    if let Some((xi, _)) = views {
        let b = xi.shape()[0];
        let zi = tape.slice(z, 0, 0, b)?;
        let zj = tape.slice(z, 0, b, 2 * b)?;
        offset = 2 * b;
        let v = unsup_contrastive_with(&mut tape, zi, zj, objective.weights.tau, objective.denominator)?;
        losses.unsup = Some(finite("L_u", tape.value(v).item()?)?);
        lu = Some(v);
    }
    let (mut ls, mut lc) = (None, None);
    if let Some((xl, yl)) = labeled {
        let zl = tape.slice(z, 0, offset, offset + xl.shape()[0])?;
        if objective.sup {
            if has_contrastive_anchor(yl) {
                let v = sup_contrastive(&mut tape, zl, yl, objective.weights.tau)?;
                losses.sup = Some(finite("L_s", tape.value(v).item()?)?);
                ls = Some(v);
            } else {
                log::debug!("labeled batch has no anchor with both positives and negatives; L_s skipped");
            }
        }
        if objective.classification {
            let logits = model.classify(&mut tape, &params, zl)?;
            let v = cross_entropy(&mut tape, logits, yl)?;
            losses.classification = Some(finite("L_c", tape.value(v).item()?)?);
            lc = Some(v);
        }
    }
    if lu.is_none() && ls.is_none() && lc.is_none() {
        return Ok((losses, vec![None; n_params]));
    }
    let h = hybrid(&mut tape, lu, ls, lc, &objective.weights)?;
    losses.hybrid = Some(finite("hybrid", tape.value(h).item()?)?);
    tape.backward(h)?;
    let grads = params
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| if trainable.includes(model, i) { tape.grad(*v).cloned() } else { None })
        .collect();
    Ok((losses, grads))
}

fn step_with(
    model: &mut SlotsModel,
    opt: &mut Optimizer,
    batch: &StepBatch,
    objective: &Objective,
    trainable: Trainable,
) -> Result<StepLosses> {
    let (losses, grads) = compute_losses(model, batch, objective, trainable)?;
    if losses.hybrid.is_some() {
        opt.step(model.parameters_mut(), &grads)?;
    }
    Ok(losses)
}

/// One end-to-end optimizer step on encoder and classifier.
pub fn step_end_to_end(
    model: &mut SlotsModel,
    opt: &mut Optimizer,
    batch: &StepBatch,
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    step_with(model, opt, batch, &Objective::end_to_end(cfg), Trainable::All)
}

/// Sample indices handed out in shuffled batches. A trailing batch of one is
/// folded into the batch before it.
struct Pool {
    indices: Vec<usize>,
    batch_size: usize,
    queue: VecDeque<Vec<usize>>,
}

impl Pool {
    fn new(indices: Vec<usize>, batch_size: usize) -> Option<Self> {
        (!indices.is_empty()).then_some(Pool { indices, batch_size, queue: VecDeque::new() })
    }

    fn plan<R: Rng>(&self, rng: &mut R) -> VecDeque<Vec<usize>> {
        let mut order = self.indices.clone();
        order.shuffle(rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
        batches.into()
    }

    /// Starts a fresh pass and returns its number of batches.
    fn start_epoch<R: Rng>(&mut self, rng: &mut R) -> usize {
        self.queue = self.plan(rng);
        self.queue.len()
    }

    /// Next batch, reshuffling when the current pass is used up.
    fn next<R: Rng>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = self.plan(rng);
        }
        self.queue.pop_front().expect("non-empty pool")
    }
}

/// Dataset normalized with train-split statistics, with the split's index
/// sets resolved.
struct Prepared {
    data: SemiLabeledDataset,
    unlabeled: Vec<usize>,
    labeled: Vec<usize>,
    test: Vec<usize>,
}

fn prepare(dataset: &SemiLabeledDataset, split: &SplitPlan) -> Result<Prepared> {
    if let Some(&bad) = split.train.iter().chain(&split.test).find(|i| **i >= dataset.len()) {
        return Err(Error::Split(format!("split references sample {bad} of {}", dataset.len())));
    }
    let stats = dataset.channel_stats(&split.train)?;
    let data = dataset.normalized(&stats)?;
    let labeled_in = |i: &&usize| data.samples()[**i].label.is_some();
    let labeled = split.train.iter().filter(labeled_in).copied().collect();
    let unlabeled = split.train.iter().filter(|i| !labeled_in(i)).copied().collect();
    let test = split.test.iter().filter(labeled_in).copied().collect();
    Ok(Prepared { data, unlabeled, labeled, test })
}

fn labels(data: &SemiLabeledDataset, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| data.samples()[i].label.expect("labeled index")).collect()
}

fn view_batch<R: Rng>(data: &SemiLabeledDataset, indices: &[usize], spec: &AugmentSpec, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let (c, l) = (data.channels(), data.length());
    let mut a = Vec::with_capacity(indices.len() * c * l);
    let mut b = Vec::with_capacity(indices.len() * c * l);
    for &i in indices {
        let (x, y) = make_views(&data.samples()[i].series, spec, rng)?;
        a.extend_from_slice(x.values());
        b.extend_from_slice(y.values());
    }
    let shape = vec![indices.len(), c, l];
    Ok((Tensor::new(shape.clone(), a)?, Tensor::new(shape, b)?))
}

const EVAL_CHUNK: usize = 256;

/// Class probabilities for the selected samples, evaluated in chunks.
pub fn predict_proba(model: &SlotsModel, data: &SemiLabeledDataset, indices: &[usize]) -> Result<Tensor> {
    let k = model.num_classes();
    let mut out = Vec::with_capacity(indices.len() * k);
    for chunk in indices.chunks(EVAL_CHUNK) {
        out.extend_from_slice(model.predict_proba(&data.batch(chunk))?.data());
    }
    Tensor::new(vec![indices.len(), k], out)
}

fn validation(model: &SlotsModel, p: &Prepared) -> Result<(Option<f64>, Option<f64>)> {
    if p.test.is_empty() {
        return Ok((None, None));
    }
    let proba = predict_proba(model, &p.data, &p.test)?;
    let m = classification_metrics(&labels(&p.data, &p.test), &argmax_rows(&proba), model.num_classes())?;
    Ok((Some(m.accuracy), Some(m.f1)))
}

/// Six-metric evaluation of `model` on the labeled test samples of `split`,
/// normalized with train-split statistics exactly as during training.
pub fn evaluate_split(model: &SlotsModel, dataset: &SemiLabeledDataset, split: &SplitPlan) -> Result<RunMetrics> {
    let p = prepare(dataset, split)?;
    if p.test.is_empty() {
        return Err(Error::Split("test split has no labeled samples".into()));
    }
    evaluate(&labels(&p.data, &p.test), &predict_proba(model, &p.data, &p.test)?)
}

#[derive(Default)]
struct EpochAcc {
    sums: [f64; 4],
    counts: [usize; 4],
}

impl EpochAcc {
    fn add(&mut self, l: &StepLosses) {
        for (i, v) in [l.unsup, l.sup, l.classification, l.hybrid].into_iter().enumerate() {
            if let Some(v) = v {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
    }

    fn record(&self, epoch: usize, val: (Option<f64>, Option<f64>)) -> EpochRecord {
        let mean = |i: usize| (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64);
        EpochRecord {
            epoch,
            unsup: mean(0),
            sup: mean(1),
            classification: mean(2),
            hybrid: mean(3),
            val_accuracy: val.0,
            val_f1: val.1,
        }
    }
}

fn context(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| e.with_context(&format!("epoch {epoch}, batch {}", step + 1))
}

/// End-to-end training on the hybrid loss.
pub fn fit_end_to_end(
    mut model: SlotsModel,
    dataset: &SemiLabeledDataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(SlotsModel, TrainTrace)> {
    cfg.validate()?;
    let p = prepare(dataset, split)?;
    let mut objective = Objective::end_to_end(cfg);
    if objective.unsup && p.unlabeled.len() < 2 {
        log::warn!("unlabeled pool has {} samples; L_u skipped", p.unlabeled.len());
        objective.unsup = false;
    }
    if (objective.sup || objective.classification) && p.labeled.is_empty() {
        log::warn!("no labeled training samples; L_s and L_c skipped");
        objective.sup = false;
        objective.classification = false;
    }
    if !(objective.unsup || objective.sup || objective.classification) {
        return Err(Error::Contract("no loss component can be computed on this split".into()));
    }

    let mut shuffle = stream_rng(cfg.seed, Stream::Shuffle);
    let mut aug = stream_rng(cfg.seed, Stream::Augment);
    let mut u_pool = Pool::new(p.unlabeled.clone(), cfg.batch_size);
    let mut l_pool = Pool::new(p.labeled.clone(), cfg.batch_size);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.parameters());
    let mut trace = TrainTrace::default();
    for epoch in 1..=cfg.epochs {
        let steps = [u_pool.as_mut(), l_pool.as_mut()]
            .into_iter()
            .flatten()
            .map(|pool| pool.start_epoch(&mut shuffle))
            .max()
            .unwrap_or(0);
        let mut acc = EpochAcc::default();
        for step in 0..steps {
            let bu = u_pool.as_mut().map(|pool| pool.next(&mut shuffle));
            let bl = l_pool.as_mut().map(|pool| pool.next(&mut shuffle));
            let mut batch = StepBatch::default();
            if objective.unsup {
                if let Some(bu) = &bu {
                    batch.views = Some(view_batch(&p.data, bu, &cfg.augment, &mut aug)?);
                }
            }
            if let Some(bl) = &bl {
                batch.labeled = Some((p.data.batch(bl), labels(&p.data, bl)));
            }
            let losses = step_with(&mut model, &mut opt, &batch, &objective, Trainable::All)
                .map_err(context(epoch, step))?;
            acc.add(&losses);
        }
        let record = acc.record(epoch, validation(&model, &p)?);
        log::info!("{record}");
        trace.records.push(record);
    }
    Ok((model, trace))
}

/// Two-stage training: encoder pre-training on `L_u` over the unlabeled pool,
/// then fine-tuning on the labeled pool with a fresh optimizer.
pub fn fit_two_stage(
    model: SlotsModel,
    dataset: &SemiLabeledDataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(SlotsModel, TrainTrace)> {
    cfg.validate()?;
    let p = prepare(dataset, split)?;
    let pool = p.unlabeled.clone();
    two_stage(model, &p.data, &pool, &p, cfg)
}

/// Two-stage training that pre-trains on every sample of `pretrain` (labels
/// ignored) and fine-tunes on the labeled training samples of `dataset`.
pub fn fit_two_stage_transfer(
    model: SlotsModel,
    pretrain: &SemiLabeledDataset,
    dataset: &SemiLabeledDataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(SlotsModel, TrainTrace)> {
    cfg.validate()?;
    if pretrain.channels() != dataset.channels() {
        return Err(Error::Schema(format!(
            "pre-training data has {} channels, fine-tuning data {}",
            pretrain.channels(),
            dataset.channels()
        )));
    }
    let all: Vec<usize> = (0..pretrain.len()).collect();
    let pre = pretrain.normalized(&pretrain.channel_stats(&all)?)?;
    let p = prepare(dataset, split)?;
    two_stage(model, &pre, &all, &p, cfg)
}

fn two_stage(
    mut model: SlotsModel,
    pre_data: &SemiLabeledDataset,
    pre_pool: &[usize],
    p: &Prepared,
    cfg: &TrainConfig,
) -> Result<(SlotsModel, TrainTrace)> {
    let mut shuffle = stream_rng(cfg.seed, Stream::Shuffle);
    let mut aug = stream_rng(cfg.seed, Stream::Augment);
    let mut trace = TrainTrace::default();
    if cfg.pretrain_epochs > 0 && cfg.ablation != Ablation::NoLu {
        pretrain_encoder(&mut model, pre_data, pre_pool, cfg, &mut shuffle, &mut aug, &mut trace)?;
    }
    let mut epoch = trace.records.len();

    let mut pool = Pool::new(p.labeled.clone(), cfg.batch_size)
        .ok_or_else(|| Error::EmptyDataset("no labeled training samples to fine-tune on".into()))?;
    let objective = Objective {
        unsup: false,
        sup: cfg.ablation == Ablation::TwoStageWithLs && cfg.weights.lambda2 > 0.0,
        classification: true,
        weights: cfg.weights,
        denominator: cfg.denominator,
    };
    let trainable = if cfg.freeze_encoder { Trainable::ClassifierOnly } else { Trainable::All };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.parameters());
    for _ in 0..cfg.epochs {
        epoch += 1;
        let steps = pool.start_epoch(&mut shuffle);
        let mut acc = EpochAcc::default();
        for step in 0..steps {
            let idx = pool.next(&mut shuffle);
            let batch = StepBatch { views: None, labeled: Some((p.data.batch(&idx), labels(&p.data, &idx))) };
            let losses = step_with(&mut model, &mut opt, &batch, &objective, trainable).map_err(context(epoch, step))?;
            acc.add(&losses);
        }
        let record = acc.record(epoch, validation(&model, p)?);
        log::info!("finetune {record}");
        trace.records.push(record);
    }
    Ok((model, trace))
}

/// Stage 1: `cfg.pretrain_epochs` epochs of `L_u` on the encoder alone.
fn pretrain_encoder(
    model: &mut SlotsModel,
    data: &SemiLabeledDataset,
    indices: &[usize],
    cfg: &TrainConfig,
    shuffle: &mut RunRng,
    aug: &mut RunRng,
    trace: &mut TrainTrace,
) -> Result<()> {
    let Some(mut pool) = Pool::new(indices.to_vec(), cfg.batch_size).filter(|_| indices.len() >= 2) else {
        log::warn!("pre-training pool has {} samples; stage 1 skipped", indices.len());
        return Ok(());
    };
    let objective = Objective {
        unsup: true,
        sup: false,
        classification: false,
        weights: LossWeights { lambda1: 1.0, lambda2: 0.0, lambda3: 0.0, tau: cfg.weights.tau },
        denominator: cfg.denominator,
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.parameters());
    for _ in 0..cfg.pretrain_epochs {
        let epoch = trace.records.len() + 1;
        let steps = pool.start_epoch(shuffle);
        let mut acc = EpochAcc::default();
        for step in 0..steps {
            let idx = pool.next(shuffle);
            let batch = StepBatch { views: Some(view_batch(data, &idx, &cfg.augment, aug)?), labeled: None };
            let losses =
                step_with(model, &mut opt, &batch, &objective, Trainable::EncoderOnly).map_err(context(epoch, step))?;
            acc.add(&losses);
        }
        let record = acc.record(epoch, (None, None));
        log::info!("pretrain {record}");
        trace.records.push(record);
    }
    Ok(())
}

/// Runs the regime named in `cfg`.
pub fn fit(
    model: SlotsModel,
    dataset: &SemiLabeledDataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(SlotsModel, TrainTrace)> {
    match cfg.regime {
        Regime::EndToEnd => fit_end_to_end(model, dataset, split, cfg),
        Regime::TwoStage => fit_two_stage(model, dataset, split, cfg),
    }
}
