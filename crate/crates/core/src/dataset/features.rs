use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_json, write_json};

pub const FEATURE_FORMAT: &str = "affordance-features/v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    format: String,
    dim: usize,
    global_dim: usize,
    ids: Vec<u32>,
}

/// Per-instance feature vectors plus the whole-image vector, stored as
/// 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: BTreeMap<u32, Vec<f32>>,
    global: Vec<f32>,
}

/// Header path paired with a binary feature file: `x.bin` → `x.json`.
pub fn header_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

impl FeatureTable {
    pub fn new(dim: usize, rows: BTreeMap<u32, Vec<f32>>, global: Vec<f32>) -> Result<Self> {
        if let Some((id, row)) = rows.iter().find(|(_, r)| r.len() != dim) {
            return Err(Error::Validation(format!(
                "feature row for instance {id} has length {}, expected {dim}",
                row.len()
            )));
        }
        if rows.values().flatten().chain(&global).any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature table contains non-finite values".into()));
        }
        Ok(FeatureTable { dim, rows, global })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn global_dim(&self) -> usize {
        self.global.len()
    }

    pub fn get(&self, instance: u32) -> Option<&[f32]> {
        self.rows.get(&instance).map(Vec::as_slice)
    }

    pub fn global(&self) -> &[f32] {
        &self.global
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.rows.keys().copied()
    }

    /// Little-endian f32 rows in header id order, then the global vector.
    pub fn write(&self, bin: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(4 * (self.rows.len() * self.dim + self.global.len()));
        for v in self.rows.values().flatten().chain(&self.global) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
        let header = FeatureHeader {
            format: FEATURE_FORMAT.into(),
            dim: self.dim,
            global_dim: self.global.len(),
            ids: self.rows.keys().copied().collect(),
        };
        write_json(&header_path(bin), &header)
    }

    pub fn read(bin: &Path) -> Result<Self> {
        let hpath = header_path(bin);
        let header: FeatureHeader = read_json(&hpath)?;
        let fail = |msg: String| Error::Validation(format!("{}: {msg}", bin.display()));
        if header.format != FEATURE_FORMAT {
            return Err(fail(format!("format `{}` is not `{FEATURE_FORMAT}`", header.format)));
        }
        let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let expected = 4 * (header.ids.len() * header.dim + header.global_dim);
        if bytes.len() != expected {
            return Err(fail(format!("{} bytes, header implies {expected}", bytes.len())));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut rows = BTreeMap::new();
        for (k, &id) in header.ids.iter().enumerate() {
            let row = values[k * header.dim..(k + 1) * header.dim].to_vec();
            if rows.insert(id, row).is_some() {
                return Err(fail(format!("instance {id} listed twice")));
            }
        }
        let global = values[header.ids.len() * header.dim..].to_vec();
        Self::new(header.dim, rows, global).map_err(|e| fail(e.to_string()))
    }
}
