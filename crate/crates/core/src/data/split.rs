use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use super::SemiLabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPattern {
    /// Samples are split at random regardless of subject or trial.
    TrialDependent,
    /// Each subject keeps some trials for training and holds out the rest.
    LeaveTrialsOut,
    /// Whole subjects are held out.
    LeaveSubjectsOut,
}

impl SplitPattern {
    pub const ALL: [SplitPattern; 3] =
        [SplitPattern::TrialDependent, SplitPattern::LeaveTrialsOut, SplitPattern::LeaveSubjectsOut];

    pub fn name(self) -> &'static str {
        match self {
            SplitPattern::TrialDependent => "trial_dependent",
            SplitPattern::LeaveTrialsOut => "leave_trials_out",
            SplitPattern::LeaveSubjectsOut => "leave_subjects_out",
        }
    }
}

impl fmt::Display for SplitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitPattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split pattern {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    /// Fraction of samples held out by `trial_dependent`.
    pub test_fraction: f64,
    /// Trials held out per subject by `leave_trials_out`.
    pub holdout_trials: usize,
    /// Subjects held out by `leave_subjects_out`.
    pub holdout_subjects: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams { test_fraction: 0.2, holdout_trials: 1, holdout_subjects: 1 }
    }
}

/// Disjoint train/test sample indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub pattern: SplitPattern,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// SHA-256 over the pattern and both index lists, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.pattern.name().as_bytes());
        for (tag, list) in [(b'r', &self.train), (b'e', &self.test)] {
            h.update([tag]);
            for i in list {
                h.update((*i as u64).to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn make_split(dataset: &SemiLabeledDataset, pattern: SplitPattern, params: &SplitParams, seed: u64) -> Result<SplitPlan> {
    let mut rng = stream_rng(seed, Stream::Split);
    let samples = dataset.samples();
    let n = samples.len();
    let is_test: Vec<bool> = match pattern {
        SplitPattern::TrialDependent => {
            let f = params.test_fraction;
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Split(format!("test fraction must lie in (0, 1), got {f}")));
            }
            let k = ((f * n as f64).round() as usize).max(1);
            if k >= n {
                return Err(Error::Split(format!("{n} samples leave nothing to train on at test fraction {f}")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut mask = vec![false; n];
            order[..k].iter().for_each(|&i| mask[i] = true);
            mask
        }
        SplitPattern::LeaveTrialsOut => {
            let k = params.holdout_trials;
            if k == 0 {
                return Err(Error::Split("leave_trials_out needs at least one held-out trial".into()));
            }
            let mut trials: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
            for s in samples {
                trials.entry(&s.subject_id).or_default().insert(&s.trial_id);
            }
            let mut held: BTreeSet<(&str, &str)> = BTreeSet::new();
            for (subject, set) in &trials {
                if set.len() <= k {
                    return Err(Error::Split(format!(
                        "subject {subject} has {} trials, cannot hold out {k}",
                        set.len()
                    )));
                }
                let mut ids: Vec<&str> = set.iter().copied().collect();
                ids.shuffle(&mut rng);
                held.extend(ids[..k].iter().map(|t| (*subject, *t)));
            }
            samples.iter().map(|s| held.contains(&(s.subject_id.as_str(), s.trial_id.as_str()))).collect()
        }
        SplitPattern::LeaveSubjectsOut => {
            let k = params.holdout_subjects;
            if k == 0 {
                return Err(Error::Split("leave_subjects_out needs at least one held-out subject".into()));
            }
            let subjects: BTreeSet<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
            if subjects.len() <= k {
                return Err(Error::Split(format!("{} subjects, cannot hold out {k}", subjects.len())));
            }
            let mut ids: Vec<&str> = subjects.into_iter().collect();
            ids.shuffle(&mut rng);
            let held: BTreeSet<&str> = ids[..k].iter().copied().collect();
            samples.iter().map(|s| held.contains(s.subject_id.as_str())).collect()
        }
    };
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok(SplitPlan { pattern, train, test, seed })
}
