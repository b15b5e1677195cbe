//! Action knowledge base: the classes each action typically applies to.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{read_json, write_json};
use crate::labels::{Action, Relationship};

/// Per-action sets of class ids, immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AffordanceKb {
    sets: [BTreeSet<usize>; 3],
}

impl AffordanceKb {
    pub fn new(entries: impl IntoIterator<Item = (Action, usize)>, num_classes: usize) -> Result<Self> {
        let mut kb = AffordanceKb::default();
        for (action, class) in entries {
            if class >= num_classes {
                return Err(Error::UnknownClass { class, num_classes });
            }
            kb.sets[action.index()].insert(class);
        }
        Ok(kb)
    }

    /// Resolves `{action: [class names]}` against the class-name table.
    /// Actions missing from the map get an empty list.
    pub fn from_names(map: &BTreeMap<String, Vec<String>>, class_names: &[String]) -> Result<Self> {
        let lookup: BTreeMap<&str, usize> = class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut kb = AffordanceKb::default();
        let mut unknown = BTreeSet::new();
        for (action, names) in map {
            let action: Action = action.parse()?;
            for name in names {
                match lookup.get(name.as_str()) {
                    Some(&c) => {
                        kb.sets[action.index()].insert(c);
                    }
                    None => {
                        unknown.insert(name.as_str());
                    }
                }
            }
        }
        if !unknown.is_empty() {
            let list: Vec<&str> = unknown.into_iter().collect();
            return Err(Error::Validation(format!(
                "knowledge base names unknown classes: {}",
                list.join(", ")
            )));
        }
        Ok(kb)
    }

    pub fn to_names(&self, class_names: &[String]) -> BTreeMap<String, Vec<String>> {
        Action::ALL
            .iter()
            .map(|&a| {
                let names = self.sets[a.index()].iter().map(|&c| class_names[c].clone()).collect();
                (a.name().to_string(), names)
            })
            .collect()
    }

    pub fn load(path: &Path, class_names: &[String]) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> = read_json(path)?;
        Self::from_names(&map, class_names).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path, class_names: &[String]) -> Result<()> {
        write_json(path, &self.to_names(class_names))
    }

    pub fn classes(&self, action: Action) -> &BTreeSet<usize> {
        &self.sets[action.index()]
    }

    pub fn contains(&self, action: Action, class: usize) -> bool {
        self.sets[action.index()].contains(&class)
    }

    /// The lookup baseline: Positive for listed classes, FirmlyNegative
    /// otherwise. Never predicts an exception.
    pub fn predict(&self, action: Action, class: usize) -> Relationship {
        if self.contains(action, class) {
            Relationship::Positive
        } else {
            Relationship::FirmlyNegative
        }
    }
}
