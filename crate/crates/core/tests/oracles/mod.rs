//! Brute-force reference implementations used by the integration and
//! acceptance tests. Everything here works on plain `f64` slices and shares
//! no code with the library.
#![allow(dead_code)]

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// NT-Xent by enumeration. With `first_view_only` the anchors are the rows of
/// `zi` and the denominator holds the other rows of `zi`; otherwise every one
/// of the `2N` views is an anchor and the denominator holds the `2N - 2`
/// embeddings that are neither the anchor nor its partner.
pub fn nt_xent(zi: &[Vec<f64>], zj: &[Vec<f64>], tau: f64, first_view_only: bool) -> f64 {
    let n = zi.len();
    let views: Vec<&Vec<f64>> = zi.iter().chain(zj).collect();
    let anchors = if first_view_only { n } else { 2 * n };
    let mut total = 0.0;
    for a in 0..anchors {
        let partner = if a < n { a + n } else { a - n };
        let num = (cosine(views[a], views[partner]) / tau).exp();
        let mut den = 0.0;
        for k in 0..2 * n {
            let include = if first_view_only { k < n && k != a } else { k != a && k != partner };
            if include {
                den += (cosine(views[a], views[k]) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / anchors as f64
}

/// Ratio-of-sums supervised contrastive loss by enumeration; `None` when no
/// anchor has both a positive and a negative.
pub fn sup_con(z: &[Vec<f64>], y: &[usize], tau: f64) -> Option<f64> {
    let m = z.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for a in 0..m {
        let mut pos = 0.0;
        let mut neg = 0.0;
        let (mut np, mut nn) = (0, 0);
        for k in 0..m {
            let e = (cosine(&z[a], &z[k]) / tau).exp();
            if k != a && y[k] == y[a] {
                pos += e;
                np += 1;
            }
            if y[k] != y[a] {
                neg += e;
                nn += 1;
            }
        }
        if np > 0 && nn > 0 {
            total += -(pos / neg).ln();
            anchors += 1;
        }
    }
    (anchors > 0).then(|| total / anchors as f64)
}

/// For all-equal embeddings: mean over valid anchors of ln(#negatives / #positives).
pub fn sup_con_equal_embeddings(y: &[usize]) -> Option<f64> {
    let mut total = 0.0;
    let mut anchors = 0;
    for (a, ya) in y.iter().enumerate() {
        let np = y.iter().enumerate().filter(|(k, yk)| *k != a && *yk == ya).count();
        let nn = y.iter().filter(|yk| *yk != ya).count();
        if np > 0 && nn > 0 {
            total += (nn as f64 / np as f64).ln();
            anchors += 1;
        }
    }
    (anchors > 0).then(|| total / anchors as f64)
}

/// Mean softmax cross-entropy by direct exponentiation.
pub fn cross_entropy(logits: &[Vec<f64>], y: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(y)
        .map(|(row, &c)| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[c].exp() / z).ln()
        })
        .sum();
    total / y.len() as f64
}

/// Fraction of positive/negative pairs ordered correctly, ties counted 1/2.
pub fn pairwise_auroc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let (mut good, mut pairs) = (0.0, 0usize);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    good += 1.0;
                } else if scores[i] == scores[j] {
                    good += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

/// Step-wise average precision: for every distinct score, taken as a
/// threshold from the highest down, recount precision and recall from
/// scratch and add `(R_k - R_{k-1}) * P_k`.
pub fn threshold_auprc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let p = positive.iter().filter(|x| **x).count();
    if p == 0 || p == positive.len() {
        return None;
    }
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| positive[i]).count();
        let precision = tp as f64 / selected.len() as f64;
        let recall = tp as f64 / p as f64;
        ap += (recall - prev) * precision;
        prev = recall;
    }
    Some(ap)
}

/// Macro one-vs-rest average of a binary oracle over classes with both
/// positives and negatives. `scores` is row-major `[M, C]`.
pub fn macro_ovr(
    y: &[usize],
    scores: &[Vec<f64>],
    f: fn(&[bool], &[f64]) -> Option<f64>,
) -> Option<f64> {
    let c = scores[0].len();
    let per: Vec<f64> = (0..c)
        .filter_map(|k| {
            let pos: Vec<bool> = y.iter().map(|v| *v == k).collect();
            let col: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            f(&pos, &col)
        })
        .collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

/// Power of `x` at DFT bin `k`.
pub fn bin_power(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let w = 2.0 * std::f64::consts::PI * k as f64 * t as f64 / n;
        re += v * w.cos();
        im -= v * w.sin();
    }
    re * re + im * im
}

/// Spectral-energy classifier. Each class is represented by the DFT bin where
/// its mean training power spectrum peaks; a series is assigned to the class
/// whose bin carries the most power. Series are `channels` rows of equal
/// length, concatenated; power is summed over channels.
pub struct BandpowerClassifier {
    peaks: Vec<usize>,
}

impl BandpowerClassifier {
    fn spectrum(series: &[f64], channels: usize) -> Vec<f64> {
        let len = series.len() / channels;
        (0..=len / 2)
            .map(|k| series.chunks(len).map(|ch| bin_power(ch, k)).sum())
            .collect()
    }

    pub fn fit(series: &[&[f64]], labels: &[usize], channels: usize, num_classes: usize) -> Self {
        let peaks = (0..num_classes)
            .map(|c| {
                let mut mean: Vec<f64> = Vec::new();
                for (s, _) in series.iter().zip(labels).filter(|(_, y)| **y == c) {
                    let spec = Self::spectrum(s, channels);
                    if mean.is_empty() {
                        mean = vec![0.0; spec.len()];
                    }
                    mean.iter_mut().zip(&spec).for_each(|(m, v)| *m += v);
                }
                // skip the DC bin
                (1..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).expect("class with samples")
            })
            .collect();
        BandpowerClassifier { peaks }
    }

    pub fn predict(&self, series: &[f64], channels: usize) -> usize {
        let len = series.len() / channels;
        let power = |k: usize| series.chunks(len).map(|ch| bin_power(ch, k)).sum::<f64>();
        (0..self.peaks.len()).max_by(|&a, &b| power(self.peaks[a]).total_cmp(&power(self.peaks[b]))).unwrap()
    }

    pub fn accuracy(&self, series: &[&[f64]], labels: &[usize], channels: usize) -> f64 {
        let hits = series.iter().zip(labels).filter(|(s, y)| self.predict(s, channels) == **y).count();
        hits as f64 / labels.len() as f64
    }
}

/// Weight count of a dense `kh x kw` convolution.
pub fn dense_conv_weights(in_channels: usize, out_channels: usize, kh: usize, kw: usize) -> usize {
    in_channels * out_channels * kh * kw
}
