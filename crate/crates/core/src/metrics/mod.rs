//! Exception-aware mean accuracies and caption metrics (BLEU-4, ROUGE-L,
//! CIDEr-D). METEOR is not provided.

mod accuracy;
mod caption;
mod report;

pub use accuracy::{mean_accuracy, mean_accuracy_multi, AccuracyMode, ConfusionMatrix};
pub use caption::{bleu4, multi_reference_average, rouge_l, CiderCorpus, ROUGE_BETA};
pub use report::{ReportRow, ReportTable};
