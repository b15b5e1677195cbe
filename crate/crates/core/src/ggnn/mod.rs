//! The gated graph neural network: node initialization, gated message
//! passing, output fusion and the relationship head.

mod head;
mod trunk;

pub use head::{HeadPass, RelationHead, RelationshipDistribution};
pub use trunk::{FusionOutput, GgnnDims, GruStep, InputMask, NodeInput, PropagationTrace, Trunk};


use crate::error::Result;
use crate::graph::SceneGraph;
use crate::labels::Relationship;
use crate::numeric::ops::cross_entropy_slice;
use crate::numeric::ParamStore;

/// Borrowed model inputs for one scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneInputs<'a> {
    pub graph: &'a SceneGraph,
    pub nodes: &'a [NodeInput],
    pub global: &'a [f64],
}

/// Per-node relationship distributions for a scene.
pub fn predict_relationships(
    store: &ParamStore,
    trunk: &Trunk,
    head: &RelationHead,
    scene: SceneInputs<'_>,
    mask: InputMask,
    steps: usize,
    action: Option<usize>,
) -> Result<Vec<RelationshipDistribution>> {
    let trace = trunk.propagate(store, scene.graph, scene.nodes, mask, steps)?;
    let fusion = trunk.fuse(store, &trace, scene.global, mask, action)?;
    Ok(fusion.h_o.iter().map(|h| head.distribution(store, h)).collect())
}

/// Cross-entropy summed over the labeled nodes of one scene, multiplied by
/// `weight`; gradients of that weighted loss are accumulated into `store`.
#[allow(clippy::too_many_arguments)]
pub fn relationship_loss(
    store: &mut ParamStore,
    trunk: &Trunk,
    head: &RelationHead,
    scene: SceneInputs<'_>,
    mask: InputMask,
    steps: usize,
    action: Option<usize>,
    targets: &[Option<Relationship>],
    weight: f64,
) -> Result<f64> {
    let trace = trunk.propagate(store, scene.graph, scene.nodes, mask, steps)?;
    let fusion = trunk.fuse(store, &trace, scene.global, mask, action)?;
    let hidden = trunk.dims().hidden;
    let mut loss = 0.0;
    let mut d_h_o = vec![vec![0.0; hidden]; fusion.h_o.len()];
    for (v, target) in targets.iter().enumerate() {
        let Some(target) = target else { continue };
        let pass = head.forward(store, &fusion.h_o[v]);
        let mut grad = vec![0.0; pass.logits.len()];
        loss += weight * cross_entropy_slice(&pass.logits, target.index(), &mut grad);
        grad.iter_mut().for_each(|g| *g *= weight);
        d_h_o[v] = head.backward(store, &fusion.h_o[v], &pass, &grad);
    }
    trunk.backward(store, scene.graph, scene.nodes, mask, &trace, &fusion, action, &d_h_o);
    Ok(loss)
}
