use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-epoch means of each loss component over the steps that computed it,
/// plus validation accuracy and macro F1 after the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub unsup: Option<f64>,
    pub sup: Option<f64>,
    pub classification: Option<f64>,
    pub hybrid: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_f1: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        write!(
            f,
            "epoch {}: L_u {} L_s {} L_c {} hybrid {} val_acc {} val_f1 {}",
            self.epoch,
            show(self.unsup),
            show(self.sup),
            show(self.classification),
            show(self.hybrid),
            show(self.val_accuracy),
            show(self.val_f1)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub const HEADER: &'static str = "epoch,L_u,L_s,L_c,hybrid,val_accuracy,val_f1";

    /// Absent values are written as empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                cell(r.unsup),
                cell(r.sup),
                cell(r.classification),
                cell(r.hybrid),
                cell(r.val_accuracy),
                cell(r.val_f1)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn first_hybrid(&self) -> Option<f64> {
        self.records.iter().find_map(|r| r.hybrid)
    }

    pub fn last_hybrid(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.hybrid)
    }
}
