use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::tokenize;
use crate::error::{Error, Result};
use crate::labels::{Action, Relationship};

pub const SCENE_FORMAT: &str = "affordance-scene/v1";

/// Relationship of one (action, instance) pair. Explanations and
/// consequences hold one sentence per annotator and are non-empty exactly
/// when the relationship is an exception.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub relationship: Relationship,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub consequences: Vec<String>,
}

impl Annotation {
    pub fn plain(relationship: Relationship) -> Self {
        Annotation {
            relationship,
            explanations: Vec::new(),
            consequences: Vec::new(),
        }
    }
}

/// One annotated scene. `map` and `features` are paths relative to the
/// dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub format: String,
    pub id: String,
    pub map: String,
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_type: Option<String>,
    /// Instance id → class id.
    pub instances: BTreeMap<u32, usize>,
    pub annotations: BTreeMap<Action, BTreeMap<u32, Annotation>>,
}

impl SceneRecord {
    pub fn new(id: impl Into<String>, instances: BTreeMap<u32, usize>) -> Self {
        let id = id.into();
        SceneRecord {
            format: SCENE_FORMAT.to_string(),
            map: format!("maps/{id}.pgm"),
            features: format!("feats/{id}.bin"),
            scene_type: None,
            instances,
            annotations: BTreeMap::new(),
            id,
        }
    }

    pub fn annotation(&self, action: Action, instance: u32) -> Option<&Annotation> {
        self.annotations.get(&action)?.get(&instance)
    }

    /// Checks the record on its own: format tag, class ids, that every
    /// annotation refers to a known instance, and the sentence/exception
    /// pairing.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("scene `{}`: {msg}", self.id)));
        if self.format != SCENE_FORMAT {
            return fail(format!("format `{}` is not `{SCENE_FORMAT}`", self.format));
        }
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return fail("scene id must be a non-empty file stem".into());
        }
        if self.instances.is_empty() {
            return fail("no instances".into());
        }
        for (&inst, &class) in &self.instances {
            if class >= num_classes {
                return fail(format!(
                    "instance {inst} has class {class}, but only {num_classes} classes exist"
                ));
            }
        }
        for (action, labels) in &self.annotations {
            for (inst, ann) in labels {
                if !self.instances.contains_key(inst) {
                    return fail(format!(
                        "{action} label on instance {inst}, which is not in the instance map"
                    ));
                }
                let exception = ann.relationship.is_exception();
                for (kind, sentences) in [("explanation", &ann.explanations), ("consequence", &ann.consequences)] {
                    if exception && sentences.is_empty() {
                        return fail(format!(
                            "{action} instance {inst} is {} but has no {kind}",
                            ann.relationship
                        ));
                    }
                    if !exception && !sentences.is_empty() {
                        return fail(format!(
                            "{action} instance {inst} has a {kind} but its label {} is not an exception",
                            ann.relationship
                        ));
                    }
                    if let Some(blank) = sentences.iter().find(|s| tokenize(s).is_empty()) {
                        return fail(format!("{action} instance {inst} has an empty {kind} `{blank}`"));
                    }
                }
            }
        }
        Ok(())
    }
}
