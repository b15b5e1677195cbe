use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::features::FeatureTable;
use crate::dataset::record::SceneRecord;
use crate::dataset::split::{split_sizes, stratified_split, SceneProfile, SplitSpec};
use crate::decoder::Vocabulary;
use crate::error::{Error, Result};
use crate::graph::{read_json, write_json, InstanceMap};
use crate::kb::AffordanceKb;

pub const DATASET_FORMAT: &str = "affordance-dataset/v1";

/// `dataset.json`: class table, feature sizes and the scene list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub global_dim: usize,
    pub scenes: Vec<String>,
}

/// A fully validated scene: annotations, instance map and features.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub record: SceneRecord,
    pub map: InstanceMap,
    pub features: FeatureTable,
}

impl Scene {
    /// Cross-checks the three parts against each other and the manifest.
    pub fn new(record: SceneRecord, map: InstanceMap, features: FeatureTable, manifest: &Manifest) -> Result<Self> {
        record.validate(manifest.class_names.len())?;
        let fail = |msg: String| Err(Error::Validation(format!("scene `{}`: {msg}", record.id)));
        if map.instance_class() != &record.instances {
            return fail("instance map classes differ from the record".into());
        }
        if features.dim() != manifest.feature_dim {
            return fail(format!(
                "feature dimension {} differs from the dataset's {}",
                features.dim(),
                manifest.feature_dim
            ));
        }
        if features.global_dim() != manifest.global_dim {
            return fail(format!(
                "global feature dimension {} differs from the dataset's {}",
                features.global_dim(),
                manifest.global_dim
            ));
        }
        let with_features: BTreeSet<u32> = features.ids().collect();
        let instances: BTreeSet<u32> = record.instances.keys().copied().collect();
        if with_features != instances {
            let missing: Vec<_> = instances.difference(&with_features).collect();
            let extra: Vec<_> = with_features.difference(&instances).collect();
            return fail(format!(
                "features missing for {missing:?}, features for unknown {extra:?}"
            ));
        }
        Ok(Scene { record, map, features })
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }
}

/// Loads `scenes/<id>.json` and the files it references under `root`.
pub fn load_scene(root: &Path, id: &str, manifest: &Manifest) -> Result<Scene> {
    let record: SceneRecord = read_json(&root.join("scenes").join(format!("{id}.json")))?;
    if record.id != id {
        return Err(Error::Validation(format!(
            "scene file `{id}` declares id `{}`",
            record.id
        )));
    }
    record.validate(manifest.class_names.len())?;
    let map = InstanceMap::load_with_classes(&root.join(&record.map), record.instances.clone())?;
    let features = FeatureTable::read(&root.join(&record.features))?;
    Scene::new(record, map, features, manifest)
}

/// Writes a scene's three files under `root`.
pub fn save_scene(root: &Path, scene: &Scene) -> Result<()> {
    let r = &scene.record;
    for rel in [format!("scenes/{}.json", r.id), r.map.clone(), r.features.clone()] {
        if let Some(parent) = root.join(rel).parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    write_json(&root.join("scenes").join(format!("{}.json", r.id)), r)?;
    scene.map.write_pgm(&root.join(&r.map))?;
    scene.features.write(&root.join(&r.features))
}

/// An in-memory dataset: manifest, scenes, KB, and optionally splits and
/// the sentence vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub scenes: Vec<Scene>,
    pub kb: AffordanceKb,
    pub splits: Option<SplitSpec>,
    pub vocabulary: Option<Vocabulary>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.id() == id)
    }

    /// Scenes with the given ids, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Scene>> {
        let index: BTreeMap<&str, &Scene> = self.scenes.iter().map(|s| (s.id(), s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("split names unknown scene `{id}`")))
            })
            .collect()
    }

    pub fn split(&self) -> Result<&SplitSpec> {
        self.splits
            .as_ref()
            .ok_or_else(|| Error::Validation("dataset has no splits.json".into()))
    }

    /// Replaces the splits with a stratified split of the given fractions.
    pub fn assign_split(&mut self, fractions: [f64; 3], seed: u64) -> Result<&SplitSpec> {
        let sizes = split_sizes(self.scenes.len(), fractions)?;
        let profiles: Vec<SceneProfile> = self.scenes.iter().map(SceneProfile::of).collect();
        Ok(self.splits.insert(stratified_split(&profiles, sizes, seed)?))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&root.join("dataset.json"))?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Validation(format!(
                "{}: format `{}` is not `{DATASET_FORMAT}`",
                root.join("dataset.json").display(),
                manifest.format
            )));
        }
        let scenes = manifest
            .scenes
            .iter()
            .map(|id| load_scene(root, id, &manifest))
            .collect::<Result<Vec<_>>>()?;
        let kb = AffordanceKb::load(&root.join("kb.json"), &manifest.class_names)?;
        let split_path = root.join("splits.json");
        let splits = if split_path.exists() {
            let s: SplitSpec = read_json(&split_path)?;
            let known: BTreeSet<&str> = manifest.scenes.iter().map(String::as_str).collect();
            s.validate(&known)?;
            Some(s)
        } else {
            None
        };
        let vocab_path = root.join("vocab.txt");
        let vocabulary = if vocab_path.exists() {
            Some(Vocabulary::load(&vocab_path)?)
        } else {
            None
        };
        Ok(Dataset {
            manifest,
            scenes,
            kb,
            splits,
            vocabulary,
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut manifest = self.manifest.clone();
        manifest.scenes = self.scenes.iter().map(|s| s.id().to_string()).collect();
        write_json(&root.join("dataset.json"), &manifest)?;
        for scene in &self.scenes {
            save_scene(root, scene)?;
        }
        self.kb.save(&root.join("kb.json"), &manifest.class_names)?;
        if let Some(s) = &self.splits {
            write_json(&root.join("splits.json"), s)?;
        }
        if let Some(v) = &self.vocabulary {
            v.save(&root.join("vocab.txt"))?;
        }
        Ok(())
    }
}
