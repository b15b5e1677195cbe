use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::harness::config::{RunConfig, Task};
use crate::harness::eval::{evaluate, EvalReport, SplitName};
use crate::harness::train::{train, LogEvent};
use crate::metrics::ReportTable;

pub const DEFAULT_SWEEP: [usize; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub label: String,
    pub steps: usize,
    pub val: EvalReport,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub table: ReportTable,
    pub runs: Vec<SweepRun>,
}

/// Trains the relationship model once per step count with the same seed,
/// plus a unary reference run, and tabulates val and test accuracies.
pub fn sweep_steps(
    config: &RunConfig,
    dataset: &Dataset,
    steps: &[usize],
    mut on_event: impl FnMut(&str, &LogEvent),
) -> Result<SweepResult> {
    if config.task != Task::Relationship {
        return Err(Error::Config("the step sweep trains relationship models".into()));
    }
    if steps.is_empty() {
        return Err(Error::Config("no step counts to sweep".into()));
    }
    let mut columns = Vec::new();
    for a in &config.actions {
        for split in ["val", "test"] {
            columns.push(format!("{a} {split} mAcc"));
            columns.push(format!("{a} {split} mAcc-E"));
        }
    }
    let mut table = ReportTable::new(format!("{} steps sweep", config.topology.name()), columns);
    let mut variants: Vec<(String, RunConfig)> = vec![(
        "unary".into(),
        RunConfig {
            topology: Topology::Unary,
            steps: 0,
            ..config.clone()
        },
    )];
    for &t in steps {
        variants.push((
            format!("T={t}"),
            RunConfig {
                steps: t,
                ..config.clone()
            },
        ));
    }
    let mut runs = Vec::new();
    for (label, cfg) in variants {
        let outcome = train(&cfg, dataset, |e| on_event(&label, e))?;
        let val = evaluate(&outcome.model, dataset, SplitName::Val)?;
        let test = evaluate(&outcome.model, dataset, SplitName::Test)?;
        let mut values = Vec::new();
        for a in &cfg.actions {
            for r in [&val, &test] {
                let rel = r.relationship.get(a);
                values.push(rel.map(|x| x.macc));
                values.push(rel.map(|x| x.macc_e));
            }
        }
        table.push(label.clone(), values);
        runs.push(SweepRun {
            label,
            steps: cfg.effective_steps(),
            val,
            test,
        });
    }
    Ok(SweepResult { table, runs })
}
