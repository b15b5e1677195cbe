use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, Vocabulary};
use crate::error::{Error, Result};
use crate::ggnn::{FusionOutput, GgnnDims, PropagationTrace, RelationHead, RelationshipDistribution, Trunk};
use crate::harness::config::{Regime, RunConfig, Task};
use crate::harness::prepare::PreparedScene;
use crate::labels::Action;
use crate::numeric::{rng, ParamStore, StoreSnapshot};

/// Greedy `(explanation, consequence)` tokens of one node.
pub type SentencePair = (Option<Vec<String>>, Option<Vec<String>>);

pub const CHECKPOINT_FORMAT: &str = "affordance-checkpoint/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskSet {
    pub relationship: bool,
    pub explanation: bool,
    pub consequence: bool,
}

impl TaskSet {
    const REL: TaskSet = TaskSet {
        relationship: true,
        explanation: false,
        consequence: false,
    };
    const EXPL: TaskSet = TaskSet {
        relationship: false,
        explanation: true,
        consequence: false,
    };
    const CONS: TaskSet = TaskSet {
        relationship: false,
        explanation: false,
        consequence: true,
    };
    const ALL: TaskSet = TaskSet {
        relationship: true,
        explanation: true,
        consequence: true,
    };

    pub fn has_decoder(self) -> bool {
        self.explanation || self.consequence
    }
}

/// Task heads of one action inside a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSet {
    pub action: Action,
    /// Row of the trunk's action embedding, when the trunk is shared by
    /// several actions.
    pub embed_index: Option<usize>,
    pub relation: Option<RelationHead>,
    pub explanation: Option<Decoder>,
    pub consequence: Option<Decoder>,
}

/// A trunk, the heads trained with it, and the parameters of both.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    /// Seed label for the unit's initialization and shuffling streams.
    pub key: String,
    pub tasks: TaskSet,
    pub store: ParamStore,
    pub trunk: Trunk,
    pub heads: Vec<HeadSet>,
}

impl Unit {
    pub fn head(&self, action: Action) -> Option<&HeadSet> {
        self.heads.iter().find(|h| h.action == action)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.heads.iter().map(|h| h.action).collect()
    }

    pub fn propagate(&self, scene: &PreparedScene, config: &RunConfig) -> Result<PropagationTrace> {
        self.trunk.propagate(
            &self.store,
            &scene.graph,
            &scene.nodes,
            config.ablation,
            config.effective_steps(),
        )
    }

    pub fn fuse(
        &self,
        trace: &PropagationTrace,
        scene: &PreparedScene,
        head: &HeadSet,
        config: &RunConfig,
    ) -> Result<FusionOutput> {
        self.trunk
            .fuse(&self.store, trace, &scene.global, config.ablation, head.embed_index)
    }
}

struct UnitSpec {
    name: String,
    trunk_key: String,
    tasks: TaskSet,
    actions: Vec<Action>,
}

fn unit_specs(config: &RunConfig) -> Vec<UnitSpec> {
    let single = |action: Action, tasks: TaskSet, suffix: &str| UnitSpec {
        name: format!("{action}.{suffix}"),
        // Units that predict relationships share their init stream with
        // the single-action multi-task unit of the same action.
        trunk_key: if tasks.relationship {
            format!("{action}/trunk")
        } else {
            format!("{action}/trunk-{suffix}")
        },
        tasks,
        actions: vec![action],
    };
    match (config.regime, config.task) {
        (Regime::MaMt, _) => vec![UnitSpec {
            name: "shared".into(),
            trunk_key: "shared/trunk".into(),
            tasks: TaskSet::ALL,
            actions: config.actions.clone(),
        }],
        (Regime::SaMt, _) => config
            .actions
            .iter()
            .map(|&a| single(a, TaskSet::ALL, "joint"))
            .collect(),
        (Regime::Independent, task) => {
            let mut out = Vec::new();
            for &a in &config.actions {
                if matches!(task, Task::Relationship | Task::Multitask) {
                    out.push(single(a, TaskSet::REL, "rel"));
                }
                if matches!(task, Task::Explanation | Task::Multitask) {
                    out.push(single(a, TaskSet::EXPL, "expl"));
                }
                if matches!(task, Task::Consequence | Task::Multitask) {
                    out.push(single(a, TaskSet::CONS, "cons"));
                }
            }
            out
        }
    }
}

/// Every trained component of a run: one or more units plus the per-action
/// sentence vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceModel {
    pub config: RunConfig,
    /// Dimensions of the data the model was built for; units sharing one
    /// trunk across actions add the action embedding on top.
    pub dims: GgnnDims,
    pub class_names: Vec<String>,
    pub vocabularies: BTreeMap<Action, Vocabulary>,
    pub units: Vec<Unit>,
}

impl AffordanceModel {
    /// Lays out and initializes all parameters for `config`.
    pub fn new(
        config: &RunConfig,
        dims: GgnnDims,
        class_names: Vec<String>,
        vocabularies: BTreeMap<Action, Vocabulary>,
    ) -> Result<Self> {
        config.validate()?;
        let dims = GgnnDims::new(config.hidden, dims.num_classes, dims.feature_dim, dims.global_dim);
        if class_names.len() != dims.num_classes {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                class_names.len(),
                dims.num_classes
            )));
        }
        let mut units = Vec::new();
        for spec in unit_specs(config) {
            let mut store = ParamStore::new();
            let shared = spec.actions.len() > 1 || config.regime == Regime::MaMt;
            let trunk_dims = if shared {
                GgnnDims {
                    action_embed_dim: config.action_embed_dim,
                    num_actions: config.actions.len(),
                    ..dims
                }
            } else {
                dims
            };
            let trunk = Trunk::new(
                &mut store,
                &spec.name,
                trunk_dims,
                &mut rng::derived(config.seed, &spec.trunk_key),
            )?;
            let mut heads = Vec::new();
            for &action in &spec.actions {
                let key = |task: &str| format!("{action}/{task}");
                let prefix = |task: &str| format!("{}.{action}.{task}", spec.name);
                let relation = if spec.tasks.relationship {
                    Some(RelationHead::new(
                        &mut store,
                        &prefix("rel"),
                        config.hidden,
                        &mut rng::derived(config.seed, &key("rel")),
                    )?)
                } else {
                    None
                };
                let mut decoder = |on: bool, task: &str| -> Result<Option<Decoder>> {
                    if !on {
                        return Ok(None);
                    }
                    let vocab = vocabularies
                        .get(&action)
                        .ok_or_else(|| Error::Vocabulary(format!("no vocabulary for action {action}")))?;
                    Ok(Some(Decoder::new(
                        &mut store,
                        &prefix(task),
                        config.hidden,
                        config.hidden,
                        vocab.len(),
                        &mut rng::derived(config.seed, &key(task)),
                    )?))
                };
                let explanation = decoder(spec.tasks.explanation, "expl")?;
                let consequence = decoder(spec.tasks.consequence, "cons")?;
                heads.push(HeadSet {
                    action,
                    embed_index: shared.then(|| config.actions.iter().position(|&a| a == action).expect("listed")),
                    relation,
                    explanation,
                    consequence,
                });
            }
            units.push(Unit {
                name: spec.name,
                key: spec.trunk_key,
                tasks: spec.tasks,
                store,
                trunk,
                heads,
            });
        }
        Ok(AffordanceModel {
            config: config.clone(),
            dims,
            class_names,
            vocabularies,
            units,
        })
    }

    fn find(&self, action: Action, pick: impl Fn(&HeadSet) -> bool) -> Option<(&Unit, &HeadSet)> {
        self.units
            .iter()
            .find_map(|u| u.head(action).filter(|h| pick(h)).map(|h| (u, h)))
    }

    pub fn relation_unit(&self, action: Action) -> Option<(&Unit, &HeadSet)> {
        self.find(action, |h| h.relation.is_some())
    }

    pub fn explanation_unit(&self, action: Action) -> Option<(&Unit, &HeadSet)> {
        self.find(action, |h| h.explanation.is_some())
    }

    pub fn consequence_unit(&self, action: Action) -> Option<(&Unit, &HeadSet)> {
        self.find(action, |h| h.consequence.is_some())
    }

    /// Relationship distributions for every node, or `None` when the model
    /// has no relationship head for `action`.
    pub fn relationships(
        &self,
        action: Action,
        scene: &PreparedScene,
    ) -> Result<Option<Vec<RelationshipDistribution>>> {
        let Some((unit, head)) = self.relation_unit(action) else {
            return Ok(None);
        };
        let rel = head.relation.as_ref().expect("relation head");
        let trace = unit.propagate(scene, &self.config)?;
        let fusion = unit.fuse(&trace, scene, head, &self.config)?;
        Ok(Some(
            fusion.h_o.iter().map(|h| rel.distribution(&unit.store, h)).collect(),
        ))
    }

    /// Greedy sentences for the requested nodes: `(explanation,
    /// consequence)` token strings, each `None` if the model lacks that
    /// decoder.
    pub fn sentences(&self, action: Action, scene: &PreparedScene, nodes: &[usize]) -> Result<Vec<SentencePair>> {
        let mut out = vec![(None, None); nodes.len()];
        if nodes.is_empty() {
            return Ok(out);
        }
        let vocab = self.vocabularies.get(&action);
        for explanation in [true, false] {
            let found = if explanation {
                self.explanation_unit(action)
            } else {
                self.consequence_unit(action)
            };
            let Some((unit, head)) = found else { continue };
            let vocab = vocab.ok_or_else(|| Error::Vocabulary(format!("no vocabulary for action {action}")))?;
            let dec = if explanation {
                head.explanation.as_ref()
            } else {
                head.consequence.as_ref()
            }
            .expect("decoder");
            let trace = unit.propagate(scene, &self.config)?;
            let fusion = unit.fuse(&trace, scene, head, &self.config)?;
            for (slot, &v) in out.iter_mut().zip(nodes) {
                let s = dec.decode_greedy(&unit.store, &fusion.h_o[v], self.config.max_sentence_len)?;
                let words: Vec<String> = s
                    .tokens
                    .iter()
                    .map(|&t| vocab.token(t).unwrap_or("<unk>").to_string())
                    .collect();
                if explanation {
                    slot.0 = Some(words);
                } else {
                    slot.1 = Some(words);
                }
            }
        }
        Ok(out)
    }

    pub fn trunk_scalars(&self) -> usize {
        self.units
            .iter()
            .map(|u| {
                u.trunk
                    .param_ids()
                    .iter()
                    .map(|&id| u.store.value(id).len())
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            dims: self.dims,
            class_names: self.class_names.clone(),
            vocabularies: self.vocabularies.iter().map(|(a, v)| (*a, v.to_lines())).collect(),
            units: self
                .units
                .iter()
                .map(|u| (u.name.clone(), u.store.snapshot()))
                .collect(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "{}: format `{}` is not `{CHECKPOINT_FORMAT}`",
                path.display(),
                ckpt.format
            )));
        }
        let vocabularies = ckpt
            .vocabularies
            .iter()
            .map(|(a, lines)| Ok((*a, Vocabulary::from_lines(lines)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let mut model = AffordanceModel::new(&ckpt.config, ckpt.dims, ckpt.class_names, vocabularies)?;
        if model.units.len() != ckpt.units.len() {
            return Err(Error::Validation(format!(
                "{}: {} parameter groups, config implies {}",
                path.display(),
                ckpt.units.len(),
                model.units.len()
            )));
        }
        for unit in &mut model.units {
            let snap = ckpt.units.get(&unit.name).ok_or_else(|| {
                Error::Validation(format!("{}: missing parameter group `{}`", path.display(), unit.name))
            })?;
            unit.store.load_snapshot(snap)?;
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    config: RunConfig,
    dims: GgnnDims,
    class_names: Vec<String>,
    vocabularies: BTreeMap<Action, Vec<String>>,
    units: BTreeMap<String, StoreSnapshot>,
}
