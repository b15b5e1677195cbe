use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Relationship, NUM_RELATIONSHIPS};

/// `Collapsed` merges the five exceptions into one class (mAcc);
/// `Full` keeps all seven (mAcc-E).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    Collapsed,
    Full,
}

impl AccuracyMode {
    pub fn num_classes(self) -> usize {
        match self {
            AccuracyMode::Collapsed => 3,
            AccuracyMode::Full => NUM_RELATIONSHIPS,
        }
    }

    pub fn class_of(self, r: Relationship) -> usize {
        match self {
            AccuracyMode::Collapsed => r.collapsed_index(),
            AccuracyMode::Full => r.index(),
        }
    }
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    mode: AccuracyMode,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(mode: AccuracyMode) -> Self {
        let k = mode.num_classes();
        ConfusionMatrix {
            mode,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_labels(preds: &[Relationship], gts: &[Relationship], mode: AccuracyMode) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::dim(
                "confusion matrix",
                format!("{} predictions for {} ground-truth labels", preds.len(), gts.len()),
            ));
        }
        let mut m = Self::new(mode);
        for (&p, &g) in preds.iter().zip(gts) {
            m.add(g, p);
        }
        Ok(m)
    }

    pub fn add(&mut self, gt: Relationship, pred: Relationship) {
        self.counts[self.mode.class_of(gt)][self.mode.class_of(pred)] += 1;
    }

    pub fn mode(&self) -> AccuracyMode {
        self.mode
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Recall per class; `None` for classes absent from ground truth.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.counts.len())
            .map(|c| {
                let n = self.row_total(c);
                (n > 0).then(|| self.counts[c][c] as f64 / n as f64)
            })
            .collect()
    }

    /// Mean recall over the classes present in ground truth.
    pub fn mean_accuracy(&self) -> Result<f64> {
        let present: Vec<f64> = self.recalls().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::EmptyInput("mean accuracy over zero samples"));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn mean_accuracy(preds: &[Relationship], gts: &[Relationship], mode: AccuracyMode) -> Result<f64> {
    ConfusionMatrix::from_labels(preds, gts, mode)?.mean_accuracy()
}

/// Mean accuracy against each annotator's labels in turn, averaged.
pub fn mean_accuracy_multi(
    preds: &[Relationship],
    annotators: &[Vec<Relationship>],
    mode: AccuracyMode,
) -> Result<f64> {
    if annotators.is_empty() {
        return Err(Error::EmptyInput("mean accuracy without annotators"));
    }
    let mut sum = 0.0;
    for gts in annotators {
        sum += mean_accuracy(preds, gts, mode)?;
    }
    Ok(sum / annotators.len() as f64)
}
