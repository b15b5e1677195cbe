//! Benchmark fixtures: a synthetic scene prepared for a freshly initialized
//! sit relationship model.

use std::collections::BTreeMap;

use affordance_core::dataset::synth::{generate, SynthConfig};
use affordance_core::ggnn::{relationship_loss, GgnnDims};
use affordance_core::harness::{prepare_scene, AffordanceModel, PreparedScene, RunConfig};
use affordance_core::labels::Action;
use affordance_core::numeric::ParamStore;

pub struct Fixture {
    pub model: AffordanceModel,
    pub scene: PreparedScene,
}

/// The largest of the first 20 generated scenes, so the graph is not trivial.
pub fn fixture(hidden: usize, steps: usize) -> Fixture {
    let config = RunConfig {
        actions: vec![Action::Sit],
        hidden,
        steps,
        ..RunConfig::default()
    };
    let data = generate(
        &SynthConfig {
            scenes: 20,
            ..SynthConfig::default()
        },
        0,
    )
    .expect("generate");
    let m = &data.manifest;
    let dims = GgnnDims::new(hidden, m.class_names.len(), m.feature_dim, m.global_dim);
    let model = AffordanceModel::new(&config, dims, m.class_names.clone(), BTreeMap::new()).expect("model");
    let scene = data
        .scenes
        .iter()
        .max_by_key(|s| s.map.instance_class().len())
        .expect("scenes");
    let scene = prepare_scene(scene, &config, &model.vocabularies).expect("prepare");
    Fixture { model, scene }
}

impl Fixture {
    pub fn nodes(&self) -> usize {
        self.scene.graph.len()
    }

    /// Relationship distributions for every node.
    pub fn forward(&self) -> usize {
        self.model
            .relationships(Action::Sit, &self.scene)
            .expect("forward")
            .map_or(0, |d| d.len())
    }

    /// Loss and full backpropagation through time into `store`.
    pub fn forward_backward(&self, store: &mut ParamStore) -> f64 {
        let (unit, head) = self.model.relation_unit(Action::Sit).expect("relation unit");
        let relation = head.relation.as_ref().expect("relation head");
        store.zero_grad();
        relationship_loss(
            store,
            &unit.trunk,
            relation,
            self.scene.inputs(),
            self.model.config.ablation,
            self.model.config.effective_steps(),
            head.embed_index,
            &self.scene.targets[&Action::Sit].labels,
            1.0,
        )
        .expect("loss")
    }

    pub fn store(&self) -> ParamStore {
        self.model
            .relation_unit(Action::Sit)
            .expect("relation unit")
            .0
            .store
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_runs() {
        let f = fixture(8, 2);
        assert!(f.nodes() >= 4);
        assert_eq!(f.forward(), f.nodes());
        let mut store = f.store();
        assert!(f.forward_backward(&mut store).is_finite());
    }
}
