use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggnn::InputMask;
use crate::graph::{Connectivity, Topology};
use crate::labels::Action;
use crate::numeric::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Relationship,
    Explanation,
    Consequence,
    /// All three tasks; shared or not depending on the regime.
    Multitask,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relationship" => Ok(Task::Relationship),
            "explanation" => Ok(Task::Explanation),
            "consequence" => Ok(Task::Consequence),
            "multitask" => Ok(Task::Multitask),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every (action, task) pair gets its own trunk.
    #[default]
    Independent,
    /// One trunk per action shared by its three tasks.
    SaMt,
    /// One trunk for everything, with a learned action embedding.
    MaMt,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Regime::Independent),
            "sa_mt" | "sa-mt" => Ok(Regime::SaMt),
            "ma_mt" | "ma-mt" => Ok(Regime::MaMt),
            _ => Err(Error::Config(format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Scenes are packed into a batch until it holds at least this many
    /// samples (labeled nodes, or reference sentences for decoders).
    pub batch_size: usize,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskWeights {
    pub relationship: f64,
    pub explanation: f64,
    pub consequence: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights {
            relationship: 1.0,
            explanation: 1.0,
            consequence: 1.0,
        }
    }
}

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub actions: Vec<Action>,
    pub topology: Topology,
    pub connectivity: Connectivity,
    /// Propagation steps T; ignored (treated as 0) for the unary topology.
    pub steps: usize,
    pub hidden: usize,
    pub task: Task,
    pub regime: Regime,
    pub relationship_optimizer: OptimizerConfig,
    pub decoder_optimizer: OptimizerConfig,
    pub ablation: InputMask,
    pub seed: u64,
    /// Epochs for units that include a relationship head.
    pub epochs: u32,
    /// Epochs for decoder-only units.
    pub decoder_epochs: u32,
    pub task_weights: TaskWeights,
    pub action_embed_dim: usize,
    /// Inverse-frequency weights on the relationship loss.
    pub class_weighting: bool,
    pub max_sentence_len: usize,
    pub min_word_frequency: usize,
    /// Gradient-norm clip for units that train a decoder.
    pub decoder_grad_clip: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            actions: Action::ALL.to_vec(),
            topology: Topology::Spatial,
            connectivity: Connectivity::Four,
            steps: 3,
            hidden: 128,
            task: Task::Relationship,
            regime: Regime::Independent,
            relationship_optimizer: OptimizerConfig {
                batch_size: 128,
                adam: AdamConfig::relationship(),
            },
            decoder_optimizer: OptimizerConfig {
                batch_size: 32,
                adam: AdamConfig::decoder(),
            },
            ablation: InputMask::default(),
            seed: 0,
            epochs: 30,
            decoder_epochs: 30,
            task_weights: TaskWeights::default(),
            action_embed_dim: 16,
            class_weighting: false,
            max_sentence_len: 20,
            min_word_frequency: 2,
            decoder_grad_clip: 5.0,
        }
    }
}

impl RunConfig {
    pub fn effective_steps(&self) -> usize {
        if self.topology == Topology::Unary {
            0
        } else {
            self.steps
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.actions.is_empty() {
            return bad("at least one action is required");
        }
        let mut sorted = self.actions.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.actions.len() {
            return bad("actions must be distinct");
        }
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        if self.regime != Regime::Independent && self.task != Task::Multitask {
            return bad("shared regimes train all three tasks; use task `multitask`");
        }
        if self.regime == Regime::MaMt && self.action_embed_dim == 0 {
            return bad("multi-action sharing needs a positive action embedding size");
        }
        if self.relationship_optimizer.batch_size == 0 || self.decoder_optimizer.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        self.relationship_optimizer.adam.validate()?;
        self.decoder_optimizer.adam.validate()?;
        let w = &self.task_weights;
        if [w.relationship, w.explanation, w.consequence]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return bad("task weights must be finite and non-negative");
        }
        if self.max_sentence_len == 0 {
            return bad("max sentence length must be positive");
        }
        if self.decoder_grad_clip.is_nan() || self.decoder_grad_clip <= 0.0 {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }

    /// Stable hash of the serialized config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", crate::numeric::rng::fnv1a(json.as_bytes()))
    }
}
