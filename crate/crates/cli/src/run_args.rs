use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use affordance_core::graph::{Connectivity, Topology};
use affordance_core::harness::{Regime, RunConfig, Task};
use affordance_core::labels::Action;

use crate::{read_json, write_json, Usage};

/// Overrides for [`RunConfig`]. Flags are named after the config fields;
/// unset flags keep the value from `--config` or the default.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Start from this config file instead of the defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write the effective config here before running.
    #[arg(long, value_name = "FILE")]
    pub dump_config: Option<PathBuf>,

    #[arg(long, value_delimiter = ',')]
    pub actions: Option<Vec<Action>>,
    #[arg(long)]
    pub topology: Option<Topology>,
    #[arg(long)]
    pub connectivity: Option<Connectivity>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub decoder_epochs: Option<u32>,

    #[arg(long)]
    pub relationship_batch_size: Option<usize>,
    #[arg(long)]
    pub relationship_lr: Option<f64>,
    #[arg(long)]
    pub relationship_decay_factor: Option<f64>,
    #[arg(long)]
    pub relationship_decay_after_epochs: Option<u32>,
    #[arg(long)]
    pub decoder_batch_size: Option<usize>,
    #[arg(long)]
    pub decoder_lr: Option<f64>,
    #[arg(long)]
    pub decoder_decay_factor: Option<f64>,
    #[arg(long)]
    pub decoder_decay_after_epochs: Option<u32>,
    #[arg(long)]
    pub decoder_grad_clip: Option<f64>,

    /// Zero the object class input.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub drop_class: Option<bool>,
    /// Zero the object feature input.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub drop_feature: Option<bool>,
    /// Zero the whole-image feature input.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub drop_global: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub class_weighting: Option<bool>,

    #[arg(long)]
    pub relationship_weight: Option<f64>,
    #[arg(long)]
    pub explanation_weight: Option<f64>,
    #[arg(long)]
    pub consequence_weight: Option<f64>,
    #[arg(long)]
    pub action_embed_dim: Option<usize>,
    #[arg(long)]
    pub max_sentence_len: Option<usize>,
    #[arg(long)]
    pub min_word_frequency: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    /// Defaults, then the config file, then flags; validated and dumped.
    pub fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => read_json::<RunConfig>(path).map_err(|e| Usage(format!("{e:#}")))?,
            None => RunConfig::default(),
        };
        set(&mut c.actions, self.actions);
        set(&mut c.topology, self.topology);
        set(&mut c.connectivity, self.connectivity);
        set(&mut c.steps, self.steps);
        set(&mut c.hidden, self.hidden);
        set(&mut c.task, self.task);
        set(&mut c.regime, self.regime);
        set(&mut c.seed, self.seed);
        set(&mut c.epochs, self.epochs);
        set(&mut c.decoder_epochs, self.decoder_epochs);
        let rel = &mut c.relationship_optimizer;
        set(&mut rel.batch_size, self.relationship_batch_size);
        set(&mut rel.adam.learning_rate, self.relationship_lr);
        set(&mut rel.adam.decay_factor, self.relationship_decay_factor);
        set(&mut rel.adam.decay_after_epochs, self.relationship_decay_after_epochs);
        let dec = &mut c.decoder_optimizer;
        set(&mut dec.batch_size, self.decoder_batch_size);
        set(&mut dec.adam.learning_rate, self.decoder_lr);
        set(&mut dec.adam.decay_factor, self.decoder_decay_factor);
        set(&mut dec.adam.decay_after_epochs, self.decoder_decay_after_epochs);
        set(&mut c.decoder_grad_clip, self.decoder_grad_clip);
        set(&mut c.ablation.drop_class, self.drop_class);
        set(&mut c.ablation.drop_feature, self.drop_feature);
        set(&mut c.ablation.drop_global, self.drop_global);
        set(&mut c.class_weighting, self.class_weighting);
        set(&mut c.task_weights.relationship, self.relationship_weight);
        set(&mut c.task_weights.explanation, self.explanation_weight);
        set(&mut c.task_weights.consequence, self.consequence_weight);
        set(&mut c.action_embed_dim, self.action_embed_dim);
        set(&mut c.max_sentence_len, self.max_sentence_len);
        set(&mut c.min_word_frequency, self.min_word_frequency);
        c.validate()?;
        if let Some(path) = &self.dump_config {
            dump(path, &c)?;
        }
        Ok(c)
    }
}

fn dump(path: &Path, config: &RunConfig) -> Result<()> {
    write_json(path, config).with_context(|| format!("writing config to {}", path.display()))
}
