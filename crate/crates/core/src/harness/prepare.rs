use std::collections::BTreeMap;

use rand::Rng as _;

use crate::dataset::Scene;
use crate::decoder::{tokenize, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::ggnn::{NodeInput, SceneInputs};
use crate::graph::{build_spatial_graph, make_variant, SceneGraph};
use crate::harness::config::RunConfig;
use crate::labels::{Action, Relationship};
use crate::numeric::rng;

/// Reference sentences of one exception instance, as encoded ids for
/// training and as tokens for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRefs {
    pub explanation_ids: Vec<Vec<TokenId>>,
    pub consequence_ids: Vec<Vec<TokenId>>,
    pub explanation_tokens: Vec<Vec<String>>,
    pub consequence_tokens: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionTargets {
    /// Per node, in graph order.
    pub labels: Vec<Option<Relationship>>,
    pub sentences: Vec<Option<SentenceRefs>>,
}

/// A scene turned into model inputs for one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub id: String,
    pub graph: SceneGraph,
    pub nodes: Vec<NodeInput>,
    pub global: Vec<f64>,
    pub targets: BTreeMap<Action, ActionTargets>,
}

impl PreparedScene {
    pub fn inputs(&self) -> SceneInputs<'_> {
        SceneInputs {
            graph: &self.graph,
            nodes: &self.nodes,
            global: &self.global,
        }
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.graph.nodes().iter().map(|n| n.instance_id)
    }

    pub fn num_labels(&self, action: Action) -> usize {
        self.targets
            .get(&action)
            .map_or(0, |t| t.labels.iter().flatten().count())
    }

    /// Reference sentences of one kind (explanation or consequence).
    pub fn num_sentences(&self, action: Action, explanation: bool) -> usize {
        self.targets.get(&action).map_or(0, |t| {
            t.sentences
                .iter()
                .flatten()
                .map(|s| {
                    if explanation {
                        s.explanation_ids.len()
                    } else {
                        s.consequence_ids.len()
                    }
                })
                .sum()
        })
    }
}

/// Per-scene seed for the random chain order; fixed for a run.
fn chain_seed(run_seed: u64, scene_id: &str) -> u64 {
    rng::derived(run_seed, &format!("chain/{scene_id}")).random()
}

pub fn prepare_scene(
    scene: &Scene,
    config: &RunConfig,
    vocabularies: &BTreeMap<Action, Vocabulary>,
) -> Result<PreparedScene> {
    let spatial = build_spatial_graph(&scene.map, config.connectivity)?;
    let graph = make_variant(&spatial, config.topology, chain_seed(config.seed, scene.id()));
    let mut nodes = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let feature = scene.features.get(node.instance_id).ok_or_else(|| {
            Error::Validation(format!(
                "scene `{}`: no features for instance {}",
                scene.id(),
                node.instance_id
            ))
        })?;
        nodes.push(NodeInput {
            class_id: node.class_id,
            feature: feature.iter().map(|&v| f64::from(v)).collect(),
        });
    }
    let global = scene.features.global().iter().map(|&v| f64::from(v)).collect();
    let mut targets = BTreeMap::new();
    for &action in &config.actions {
        let mut t = ActionTargets::default();
        for node in graph.nodes() {
            let ann = scene.record.annotation(action, node.instance_id);
            t.labels.push(ann.map(|a| a.relationship));
            let refs = ann.filter(|a| a.relationship.is_exception()).map(|a| {
                let encode = |texts: &[String]| -> Vec<Vec<TokenId>> {
                    match vocabularies.get(&action) {
                        Some(v) => texts.iter().map(|s| v.encode(s)).collect(),
                        None => Vec::new(),
                    }
                };
                let toks = |texts: &[String]| texts.iter().map(|s| tokenize(s)).collect::<Vec<_>>();
                SentenceRefs {
                    explanation_ids: encode(&a.explanations),
                    consequence_ids: encode(&a.consequences),
                    explanation_tokens: toks(&a.explanations),
                    consequence_tokens: toks(&a.consequences),
                }
            });
            t.sentences.push(refs);
        }
        targets.insert(action, t);
    }
    Ok(PreparedScene {
        id: scene.id().to_string(),
        graph,
        nodes,
        global,
        targets,
    })
}

pub fn prepare_all(
    scenes: &[&Scene],
    config: &RunConfig,
    vocabularies: &BTreeMap<Action, Vocabulary>,
) -> Result<Vec<PreparedScene>> {
    scenes.iter().map(|s| prepare_scene(s, config, vocabularies)).collect()
}

/// Per-action vocabulary over the explanations and consequences of the
/// given scenes.
pub fn build_vocabularies(
    scenes: &[&Scene],
    actions: &[Action],
    min_frequency: usize,
) -> Result<BTreeMap<Action, Vocabulary>> {
    let mut out = BTreeMap::new();
    for &action in actions {
        let corpus: Vec<&str> = scenes
            .iter()
            .filter_map(|s| s.record.annotations.get(&action))
            .flat_map(|labels| labels.values())
            .flat_map(|a| a.explanations.iter().chain(&a.consequences))
            .map(String::as_str)
            .collect();
        if corpus.is_empty() {
            return Err(Error::Validation(format!(
                "no {action} explanations or consequences in the training scenes"
            )));
        }
        out.insert(action, Vocabulary::build(corpus, min_frequency)?);
    }
    Ok(out)
}
