//! Semi-labeled datasets: sample model, CSV ingestion, label-ratio subsetting,
//! split protocols and a synthetic generator.

mod csv_io;
mod split;
mod synth;

pub use csv_io::{load_csv, load_sample_csv, write_csv, write_dataset, ManifestEntry};
pub use split::{make_split, SplitParams, SplitPattern, SplitPlan};
pub use synth::{class_frequency, synth_generate, SynthSpec};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// A `channels x length` block of values, row-major by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    channels: usize,
    length: usize,
    values: Vec<f64>,
}

impl Series {
    pub fn new(channels: usize, length: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::Schema(format!("series must be non-empty, got {channels}x{length}")));
        }
        if values.len() != channels * length {
            return Err(Error::Schema(format!(
                "{} values for a {channels}x{length} series",
                values.len()
            )));
        }
        Ok(Series { channels, length, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub sample_id: String,
    pub subject_id: String,
    pub trial_id: String,
    /// `None` marks an unlabeled sample.
    pub label: Option<usize>,
    pub series: Series,
}

/// `D = D^u ∪ D^l`: every sample, labeled or not, sharing one channel count
/// and length.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiLabeledDataset {
    samples: Vec<TimeSeriesSample>,
    num_classes: usize,
    label_ratio: f64,
}

impl SemiLabeledDataset {
    pub fn new(samples: Vec<TimeSeriesSample>, num_classes: usize) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::EmptyDataset("no samples".into()));
        };
        if num_classes == 0 {
            return Err(Error::Schema("number of classes must be positive".into()));
        }
        let (channels, length) = (first.series.channels, first.series.length);
        for s in &samples {
            if s.series.channels != channels {
                return Err(Error::Schema(format!(
                    "sample {} has {} channels, expected {channels}",
                    s.sample_id, s.series.channels
                )));
            }
            if s.series.length != length {
                return Err(Error::Schema(format!(
                    "sample {} has length {}, expected {length}",
                    s.sample_id, s.series.length
                )));
            }
            if let Some(y) = s.label {
                if y >= num_classes {
                    return Err(Error::LabelRange { label: y as i64, num_classes });
                }
            }
        }
        Ok(SemiLabeledDataset { samples, num_classes, label_ratio: 1.0 })
    }

    pub fn samples(&self) -> &[TimeSeriesSample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Ratio most recently passed to [`apply_label_ratio`]; 1.0 on load.
    pub fn label_ratio(&self) -> f64 {
        self.label_ratio
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples[0].series.channels
    }

    pub fn length(&self) -> usize {
        self.samples[0].series.length
    }

    /// `M`.
    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label.is_some()).count()
    }

    /// `N`.
    pub fn unlabeled_count(&self) -> usize {
        self.len() - self.labeled_count()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for y in self.samples.iter().filter_map(|s| s.label) {
            counts[y] += 1;
        }
        counts
    }

    /// Stacks the selected samples into a `[n, channels, length]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let (c, l) = (self.channels(), self.length());
        let mut data = Vec::with_capacity(indices.len() * c * l);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].series.values);
        }
        Tensor::new(vec![indices.len(), c, l], data).expect("consistent series shapes")
    }

    /// Per-channel mean and standard deviation over the selected samples.
    pub fn channel_stats(&self, indices: &[usize]) -> Result<ChannelStats> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("no samples to fit normalization on".into()));
        }
        let (c, l) = (self.channels(), self.length());
        let count = (indices.len() * l) as f64;
        let mut mean = vec![0.0; c];
        for &i in indices {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += self.samples[i].series.channel(ch).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for &i in indices {
            for (ch, v) in var.iter_mut().enumerate() {
                *v += self.samples[i].series.channel(ch).iter().map(|x| (x - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt()).collect();
        Ok(ChannelStats { mean, std })
    }

    /// Applies a per-channel z-score to every sample.
    pub fn normalized(&self, stats: &ChannelStats) -> Result<Self> {
        if stats.mean.len() != self.channels() || stats.std.len() != self.channels() {
            return Err(Error::Schema(format!(
                "statistics for {} channels applied to {}",
                stats.mean.len(),
                self.channels()
            )));
        }
        let mut out = self.clone();
        let l = self.length();
        for s in &mut out.samples {
            for (ch, chunk) in s.series.values.chunks_mut(l).enumerate() {
                let sd = if stats.std[ch] > 0.0 { stats.std[ch] } else { 1.0 };
                chunk.iter_mut().for_each(|x| *x = (*x - stats.mean[ch]) / sd);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Keeps labels on a stratified random `ceil(ratio * M)` subset of the labeled
/// samples and hides the rest. Sample count never changes.
pub fn apply_label_ratio(dataset: &SemiLabeledDataset, ratio: f64, seed: u64) -> Result<SemiLabeledDataset> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    apply_label_ratio_within(dataset, &all, ratio, seed)
}

/// As [`apply_label_ratio`], but only samples listed in `indices` are
/// candidates for hiding; labels elsewhere (a test split, say) are untouched.
pub fn apply_label_ratio_within(
    dataset: &SemiLabeledDataset,
    indices: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<SemiLabeledDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Contract(format!("label ratio must lie in (0, 1], got {ratio}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let sample = dataset
            .samples
            .get(i)
            .ok_or_else(|| Error::Contract(format!("sample index {i} out of range")))?;
        if let Some(y) = sample.label {
            by_class.entry(y).or_default().push(i);
        }
    }
    let m: usize = by_class.values().map(Vec::len).sum();
    let mut out = dataset.clone();
    out.label_ratio = ratio;
    if m == 0 {
        return Err(Error::Stratification("no labeled samples to subset".into()));
    }
    // the small slack keeps products like 0.1 * 480 from rounding up past 48
    let target = ((ratio * m as f64 - 1e-9).ceil() as usize).clamp(1, m);
    let quotas = largest_remainder(target, &by_class.values().map(Vec::len).collect::<Vec<_>>());
    let mut rng = stream_rng(seed, Stream::Label);
    for ((class, members), keep) in by_class.iter().zip(quotas) {
        if keep == 0 {
            return Err(Error::Stratification(format!(
                "label ratio {ratio} leaves class {class} with no labeled samples ({} available)",
                members.len()
            )));
        }
        let mut order = members.clone();
        order.shuffle(&mut rng);
        for &i in &order[keep..] {
            out.samples[i].label = None;
        }
    }
    Ok(out)
}

/// Splits `total` across groups proportionally to `sizes`, floors first, then
/// hands leftover units to the largest fractional parts (earlier group on ties).
fn largest_remainder(total: usize, sizes: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    let mut alloc: Vec<usize> = sizes.iter().map(|s| total * s / sum).collect();
    let mut rest: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, s)| (total * s % sum, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = total - alloc.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(left) {
        alloc[i] += 1;
    }
    alloc
}
