use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{SemiLabeledDataset, Series, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Sinusoid dataset. Sample `i` has class `i % C`, subject `(i / C) % S`
/// and trial `(i / (C * S)) * C + class`, so every subject sees every class
/// and each trial holds one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_samples: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub length: usize,
    pub noise_sigma: f64,
    pub num_subjects: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { num_samples: 600, num_classes: 2, channels: 1, length: 128, noise_sigma: 0.3, num_subjects: 10 }
    }
}

/// Frequency of class `c` in cycles per time step for series of `length`
/// samples: `1/16 + 2c/length`. Classes sit two DFT bins apart, starting at
/// `length/16` cycles per window.
pub fn class_frequency(class: usize, length: usize) -> f64 {
    1.0 / 16.0 + 2.0 * class as f64 / length as f64
}

impl SynthSpec {
    pub fn generate(&self, seed: u64) -> Result<SemiLabeledDataset> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::Contract(format!("synthetic data needs at least 2 classes, got {c}")));
        }
        if self.num_samples == 0 || self.channels == 0 || self.length == 0 || self.num_subjects == 0 {
            return Err(Error::Contract(format!("degenerate synthetic spec {self:?}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Contract(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if class_frequency(c - 1, self.length) >= 0.5 {
            return Err(Error::Contract(format!(
                "{c} classes do not fit below Nyquist at length {}",
                self.length
            )));
        }
        let mut rng = stream_rng(seed, Stream::Synth);
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma checked");
        let s = self.num_subjects;
        let samples = (0..self.num_samples)
            .map(|i| {
                let label = i % c;
                let freq = class_frequency(label, self.length);
                let mut values = Vec::with_capacity(self.channels * self.length);
                for _ in 0..self.channels {
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for t in 0..self.length {
                        let clean = (2.0 * PI * freq * t as f64 + phase).sin();
                        let eps = if self.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        values.push(clean + eps);
                    }
                }
                TimeSeriesSample {
                    sample_id: format!("s{i}"),
                    subject_id: format!("subj{}", (i / c) % s),
                    trial_id: format!("t{}", (i / (c * s)) * c + label),
                    label: Some(label),
                    series: Series { channels: self.channels, length: self.length, values },
                }
            })
            .collect();
        SemiLabeledDataset::new(samples, c)
    }
}

pub fn synth_generate(
    num_samples: usize,
    num_classes: usize,
    channels: usize,
    length: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SemiLabeledDataset> {
    SynthSpec { num_samples, num_classes, channels, length, noise_sigma, ..Default::default() }.generate(seed)
}
