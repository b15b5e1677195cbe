use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, TokenId};
use crate::error::{Error, Result};
use crate::ggnn::{relationship_loss, GgnnDims, InputMask, NodeInput, RelationHead, SceneInputs, Trunk};
use crate::graph::{BoundingBox, Node, SceneGraph};
use crate::labels::Relationship;
use crate::numeric::rng::derived;
use crate::numeric::rng::Rng;
use crate::numeric::{gradient_check, GradCheckReport, ParamStore};

/// Largest relative error accepted by [`check_gradients`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub nodes: usize,
    pub steps: usize,
    pub hidden: usize,
    pub sentence_len: usize,
    pub epsilon: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            nodes: 5,
            steps: 3,
            hidden: 6,
            sentence_len: 5,
            epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub graph_network: GradCheckReport,
    pub decoder: GradCheckReport,
}

impl GradcheckSummary {
    pub fn max_rel_err(&self) -> f64 {
        self.graph_network.max_rel_err().max(self.decoder.max_rel_err())
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= GRADCHECK_TOLERANCE
    }
}

fn randomize_biases(store: &mut ParamStore, rng: &mut Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.value(id).shape().len() == 1 {
            for v in store.value_mut(id).values_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
}

/// Finite-difference check of the graph network with relation head on a
/// random connected graph, and of the sentence decoder on a random sentence.
/// Biases are randomized so that no gradient is trivially zero.
pub fn check_gradients(config: &GradcheckConfig) -> Result<GradcheckSummary> {
    if config.nodes < 2 || config.hidden == 0 || config.sentence_len == 0 {
        return Err(Error::Config(
            "gradcheck needs at least 2 nodes, a hidden size and a sentence".into(),
        ));
    }
    let dims = GgnnDims {
        hidden: config.hidden,
        num_classes: 4,
        feature_dim: 3,
        global_dim: 2,
        action_embed_dim: 0,
        num_actions: 0,
    };
    let mut rng = derived(config.seed, "gradcheck/data");
    let n = config.nodes;
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
    for u in 0..n {
        for v in u + 2..n {
            if rng.random_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    let nodes = (0..n)
        .map(|i| Node {
            instance_id: i as u32 + 1,
            class_id: 0,
            bbox: BoundingBox {
                x_min: i,
                y_min: 0,
                x_max: i,
                y_max: 0,
            },
            pixel_count: 1,
        })
        .collect();
    let graph = SceneGraph::from_parts(nodes, edges)?;
    let inputs: Vec<NodeInput> = (0..n)
        .map(|_| NodeInput {
            class_id: rng.random_range(0..dims.num_classes),
            feature: (0..dims.feature_dim).map(|_| rng.random_range(0.0..1.5)).collect(),
        })
        .collect();
    let global: Vec<f64> = (0..dims.global_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<Option<Relationship>> = (0..n)
        .map(|_| Relationship::from_index(rng.random_range(0..7)))
        .collect();

    let mut init = derived(config.seed, "gradcheck/params");
    let mut store = ParamStore::new();
    let trunk = Trunk::new(&mut store, "ggnn", dims, &mut init)?;
    let head = RelationHead::new(&mut store, "rel", dims.hidden, &mut init)?;
    randomize_biases(&mut store, &mut init);
    let scene = SceneInputs {
        graph: &graph,
        nodes: &inputs,
        global: &global,
    };
    let weight = 1.0 / n as f64;
    let graph_network = gradient_check(&mut store, config.epsilon, |s| {
        relationship_loss(
            s,
            &trunk,
            &head,
            scene,
            InputMask::default(),
            config.steps,
            None,
            &targets,
            weight,
        )
    })?;

    let vocab_size = 12;
    let mut store = ParamStore::new();
    let decoder = Decoder::new(&mut store, "dec", dims.hidden, dims.hidden + 2, vocab_size, &mut init)?;
    randomize_biases(&mut store, &mut init);
    let h_o: Vec<f64> = (0..dims.hidden).map(|_| rng.random_range(0.0..1.0)).collect();
    // Ids below 4 are reserved tokens.
    let sentence: Vec<TokenId> = (0..config.sentence_len)
        .map(|_| rng.random_range(4..vocab_size as TokenId))
        .collect();
    let decoder = gradient_check(&mut store, config.epsilon, |s| {
        Ok(decoder.loss_and_backward(s, &h_o, &sentence, 1.0)?.0)
    })?;
    Ok(GradcheckSummary { graph_network, decoder })
}
