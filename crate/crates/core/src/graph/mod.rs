//! Instance maps and the scene graphs built from them.

mod instance_map;
mod scene_graph;

pub use instance_map::InstanceMap;
pub(crate) use instance_map::{read_json, write_json};
pub use scene_graph::{
    build_spatial_graph, expand_bbox, make_variant, BoundingBox, Connectivity, Node, SceneGraph, Topology,
};
