//! Annotated scenes on disk, stratified splits and the synthetic generator.

mod features;
mod record;
mod split;
mod store;
pub mod synth;

pub use features::{header_path, FeatureTable, FEATURE_FORMAT};
pub use record::{Annotation, SceneRecord, SCENE_FORMAT};
pub use split::{balance_deviation, split_sizes, stratified_split, SceneProfile, SplitSpec, BALANCE_TOLERANCE};
pub use store::{load_scene, save_scene, Dataset, Manifest, Scene, DATASET_FORMAT};
