//! Unsupervised contrastive, supervised contrastive and cross-entropy losses,
//! and their weighted sum.
//!
//! All three are written as "log-sum-exp over a masked row of a similarity or
//! logit matrix", which keeps every ratio in log space with max subtraction.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Weights of the hybrid objective and the contrastive temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Unsupervised contrastive term.
    pub lambda1: f64,
    /// Supervised contrastive term.
    pub lambda2: f64,
    /// Classification term.
    pub lambda3: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, tau: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        let lambdas = [self.lambda1, self.lambda2, self.lambda3];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {lambdas:?}")));
        }
        if lambdas.iter().all(|l| *l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Which embeddings enter the denominator of the unsupervised loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NtXentDenominator {
    /// All `2N` views are anchors; each anchor's denominator covers the other
    /// `2N - 2` embeddings (itself and its positive excluded).
    #[default]
    AllViews,
    /// Only the first view of each sample is an anchor; the denominator covers
    /// the first views of the other `N - 1` samples.
    FirstViewOnly,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Mean of `lse(negatives) - lse(positives)` over the rows flagged in `active`.
fn masked_ratio_loss(
    tape: &mut Tape,
    logits: Var,
    positives: Vec<bool>,
    negatives: Vec<bool>,
    active: &[bool],
) -> Result<Var> {
    let count = active.iter().filter(|a| **a).count();
    let pos = tape.masked_logsumexp(logits, positives)?;
    let neg = tape.masked_logsumexp(logits, negatives)?;
    let per_anchor = tape.sub(neg, pos)?;
    let weights = active.iter().map(|a| if *a { 1.0 / count as f64 } else { 0.0 }).collect();
    let w = tape.constant(Tensor::vector(weights));
    let weighted = tape.mul(per_anchor, w)?;
    Ok(tape.sum(weighted))
}

/// NT-Xent over two aligned batches of view embeddings `[N, D]`, cosine similarity.
pub fn unsup_contrastive(tape: &mut Tape, zi: Var, zj: Var, tau: f64) -> Result<Var> {
    unsup_contrastive_with(tape, zi, zj, tau, NtXentDenominator::AllViews)
}

pub fn unsup_contrastive_with(
    tape: &mut Tape,
    zi: Var,
    zj: Var,
    tau: f64,
    denominator: NtXentDenominator,
) -> Result<Var> {
    check_tau(tau)?;
    let (si, sj) = (tape.shape(zi).to_vec(), tape.shape(zj).to_vec());
    if si.len() != 2 || si != sj {
        return Err(Error::dim("unsup_contrastive", format!("views {si:?} and {sj:?}")));
    }
    let n = si[0];
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("unsupervised contrastive loss needs N >= 2, got {n}")));
    }
    let all = tape.concat(&[zi, zj], 0)?;
    let (anchors, cols) = match denominator {
        NtXentDenominator::AllViews => (all, 2 * n),
        NtXentDenominator::FirstViewOnly => (zi, 2 * n),
    };
    let rows = tape.shape(anchors)[0];
    let sim = tape.cosine_similarity_matrix(anchors, all)?;
    let logits = tape.mul_scalar(sim, 1.0 / tau);
    let mut pos = vec![false; rows * cols];
    let mut neg = vec![false; rows * cols];
    for a in 0..rows {
        let partner = (a + n) % (2 * n);
        pos[a * cols + partner] = true;
        for k in 0..cols {
            neg[a * cols + k] = match denominator {
                NtXentDenominator::AllViews => k != a && k != partner,
                NtXentDenominator::FirstViewOnly => k < n && k != a,
            };
        }
    }
    masked_ratio_loss(tape, logits, pos, neg, &vec![true; rows])
}

/// Whether some anchor has both a same-label partner and a different-label sample.
pub fn has_contrastive_anchor(labels: &[usize]) -> bool {
    labels.iter().enumerate().any(|(a, ya)| {
        let pos = labels.iter().enumerate().any(|(p, yp)| p != a && yp == ya);
        let neg = labels.iter().any(|y| y != ya);
        pos && neg
    })
}

/// Supervised contrastive loss over labeled embeddings `[M, D]`.
///
/// For each anchor the log of (summed exponentiated similarity to same-label
/// samples) over (summed exponentiated similarity to other-label samples);
/// anchors lacking either set are skipped. The value can be negative.
pub fn sup_contrastive(tape: &mut Tape, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim("sup_contrastive", format!("embeddings {shape:?} with {} labels", labels.len())));
    }
    let m = labels.len();
    if m < 2 {
        return Err(Error::DegenerateBatch(format!("supervised contrastive loss needs M >= 2, got {m}")));
    }
    let sim = tape.cosine_similarity_matrix(z, z)?;
    let logits = tape.mul_scalar(sim, 1.0 / tau);
    let mut pos = vec![false; m * m];
    let mut neg = vec![false; m * m];
    let mut active = vec![false; m];
    for a in 0..m {
        for k in 0..m {
            pos[a * m + k] = k != a && labels[k] == labels[a];
            neg[a * m + k] = labels[k] != labels[a];
        }
        let row = a * m..(a + 1) * m;
        active[a] = pos[row.clone()].iter().any(|x| *x) && neg[row].iter().any(|x| *x);
    }
    if !active.iter().any(|a| *a) {
        return Err(Error::DegenerateLabels(
            "no anchor has both a same-label and a different-label sample".into(),
        ));
    }
    masked_ratio_loss(tape, logits, pos, neg, &active)
}

/// Mean softmax cross-entropy of logits `[M, C]` against class indices.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim("cross_entropy", format!("logits {shape:?} with {} labels", labels.len())));
    }
    let (m, c) = (shape[0], shape[1]);
    if m == 0 {
        return Err(Error::DegenerateBatch("cross-entropy of an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|y| **y >= c) {
        return Err(Error::LabelRange { label: bad as i64, num_classes: c });
    }
    let mut target = vec![false; m * c];
    for (i, y) in labels.iter().enumerate() {
        target[i * c + y] = true;
    }
    masked_ratio_loss(tape, logits, target, vec![true; m * c], &vec![true; m])
}

/// `λ1·L_u + λ2·L_s + λ3·L_c`; absent components contribute exactly zero.
pub fn hybrid(
    tape: &mut Tape,
    unsup: Option<Var>,
    sup: Option<Var>,
    classification: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let terms: Vec<Var> = [(unsup, weights.lambda1), (sup, weights.lambda2), (classification, weights.lambda3)]
        .into_iter()
        .filter_map(|(v, w)| v.map(|v| tape.mul_scalar(v, w)))
        .collect();
    let Some((&first, rest)) = terms.split_first() else {
        return Err(Error::Contract("hybrid loss with every component absent".into()));
    };
    let mut total = first;
    for &t in rest {
        total = tape.add(total, t)?;
    }
    Ok(total)
}
