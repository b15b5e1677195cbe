use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instance-segmentation map: a `height × width` grid of instance ids
/// (0 = unlabeled) and the object class of every instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    pixels: Vec<u32>,
    instance_class: BTreeMap<u32, usize>,
}

impl InstanceMap {
    pub fn new(width: usize, height: usize, pixels: Vec<u32>, instance_class: BTreeMap<u32, usize>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "instance map must be non-empty, got {width}×{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Validation(format!(
                "instance map is {width}×{height} but has {} pixels",
                pixels.len()
            )));
        }
        if instance_class.contains_key(&0) {
            return Err(Error::Validation(
                "instance id 0 is reserved for unlabeled pixels".into(),
            ));
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &p in pixels.iter().filter(|&&p| p != 0) {
            *counts.entry(p).or_default() += 1;
        }
        let missing: Vec<u32> = counts
            .keys()
            .filter(|id| !instance_class.contains_key(id))
            .copied()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "instance ids {missing:?} appear in pixels but have no class"
            )));
        }
        let empty: Vec<u32> = instance_class
            .keys()
            .filter(|id| !counts.contains_key(id))
            .copied()
            .collect();
        if !empty.is_empty() {
            return Err(Error::Validation(format!("instances {empty:?} occupy no pixels")));
        }
        Ok(InstanceMap {
            width,
            height,
            pixels,
            instance_class,
        })
    }

    /// Builds a map from rows of ids, for tests and small fixtures.
    pub fn from_rows(rows: &[&[u32]], instance_class: BTreeMap<u32, usize>) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Validation("ragged instance map rows".into()));
        }
        Self::new(width, height, rows.concat(), instance_class)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn at(&self, x: usize, y: usize) -> u32 {
        self.pixels[y * self.width + x]
    }

    pub fn instance_class(&self) -> &BTreeMap<u32, usize> {
        &self.instance_class
    }

    pub fn class_of(&self, instance: u32) -> Option<usize> {
        self.instance_class.get(&instance).copied()
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.instance_class.keys().copied()
    }

    /// Writes a binary PGM (`P5`). Ids above 255 force 16-bit big-endian
    /// samples; maxval is always 65535 so readers see a uniform format.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if let Some(&big) = self.pixels.iter().find(|&&p| p > u32::from(u16::MAX)) {
            return Err(Error::Validation(format!(
                "instance id {big} does not fit a 16-bit PGM"
            )));
        }
        let mut buf = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for &p in &self.pixels {
            buf.extend_from_slice(&(p as u16).to_be_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Writes the `{instance_id: class_id}` sidecar.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<String, usize> = self.instance_class.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        write_json(path, &map)
    }

    /// Loads a map from a PGM (`.pgm`) or JSON grid (`.json`) plus its sidecar.
    pub fn load(map_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let classes: BTreeMap<String, usize> = read_json(sidecar_path)?;
        let mut instance_class = BTreeMap::new();
        for (k, v) in classes {
            let id: u32 = k
                .parse()
                .map_err(|_| Error::Validation(format!("{}: bad instance id `{k}`", sidecar_path.display())))?;
            instance_class.insert(id, v);
        }
        Self::load_with_classes(map_path, instance_class)
    }

    /// Loads the pixel grid from `map_path` and pairs it with known classes.
    pub fn load_with_classes(map_path: &Path, instance_class: BTreeMap<u32, usize>) -> Result<Self> {
        let (width, height, pixels) = match map_path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => parse_pgm(&fs::read(map_path).map_err(|e| Error::io(map_path, e))?)
                .map_err(|m| Error::Validation(format!("{}: {m}", map_path.display())))?,
            Some("json") => {
                let grid: JsonGrid = read_json(map_path)?;
                let height = grid.pixels.len();
                let width = grid.pixels.first().map_or(0, Vec::len);
                if grid.width != width || grid.height != height || grid.pixels.iter().any(|r| r.len() != width) {
                    return Err(Error::Validation(format!(
                        "{}: grid does not match declared {}×{}",
                        map_path.display(),
                        grid.width,
                        grid.height
                    )));
                }
                (width, height, grid.pixels.concat())
            }
            _ => {
                return Err(Error::Validation(format!(
                    "{}: instance maps must be .pgm or .json",
                    map_path.display()
                )))
            }
        };
        Self::new(width, height, pixels, instance_class).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", map_path.display())),
            other => other,
        })
    }

    pub fn write_json_grid(&self, path: &Path) -> Result<()> {
        let grid = JsonGrid {
            width: self.width,
            height: self.height,
            pixels: self.pixels.chunks(self.width).map(<[u32]>::to_vec).collect(),
        };
        write_json(path, &grid)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonGrid {
    width: usize,
    height: usize,
    pixels: Vec<Vec<u32>>,
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u32>), String> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // optional `#` comments, then exactly one whitespace byte.
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated PGM header".into());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..i])
                .map_err(|_| "non-ASCII PGM header")?
                .to_string(),
        );
    }
    i += 1;
    if fields[0] != "P5" {
        return Err(format!("unsupported PGM magic `{}`", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM header field `{s}`"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("PGM maxval {maxval} out of range"));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let data = bytes.get(i..).unwrap_or_default();
    if data.len() != width * height * bpp {
        return Err(format!(
            "PGM body has {} bytes, expected {}",
            data.len(),
            width * height * bpp
        ));
    }
    let pixels = if bpp == 1 {
        data.iter().map(|&b| u32::from(b)).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    Ok((width, height, pixels))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(pairs: &[(u32, usize)]) -> BTreeMap<u32, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn rejects_pixels_without_class() {
        let err = InstanceMap::from_rows(&[&[1, 2]], classes(&[(1, 0)])).unwrap_err();
        assert!(err.to_string().contains("[2]"), "{err}");
    }

    #[test]
    fn rejects_instances_without_pixels() {
        assert!(InstanceMap::from_rows(&[&[1, 0]], classes(&[(1, 0), (5, 1)])).is_err());
    }

    #[test]
    fn pgm_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = InstanceMap::from_rows(&[&[1, 1, 0], &[300, 2, 2]], classes(&[(1, 3), (2, 0), (300, 7)])).unwrap();
        let side = dir.path().join("m.classes.json");
        map.write_sidecar(&side).unwrap();
        let pgm = dir.path().join("m.pgm");
        map.write_pgm(&pgm).unwrap();
        assert_eq!(InstanceMap::load(&pgm, &side).unwrap(), map);
        let grid = dir.path().join("m.json");
        map.write_json_grid(&grid).unwrap();
        assert_eq!(InstanceMap::load(&grid, &side).unwrap(), map);
    }

    #[test]
    fn reads_8bit_pgm_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("a.pgm");
        let mut bytes = b"P5\n# tiny\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[4, 0]);
        fs::write(&pgm, bytes).unwrap();
        let side = dir.path().join("a.json");
        fs::write(&side, r#"{"4": 1}"#).unwrap();
        let map = InstanceMap::load(&pgm, &side).unwrap();
        assert_eq!(map.pixels(), &[4, 0]);
    }

    #[test]
    fn loader_rejects_ids_missing_from_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let map = InstanceMap::from_rows(&[&[1, 2]], classes(&[(1, 0), (2, 0)])).unwrap();
        let pgm = dir.path().join("m.pgm");
        map.write_pgm(&pgm).unwrap();
        let side = dir.path().join("s.json");
        fs::write(&side, r#"{"1": 0}"#).unwrap();
        assert!(matches!(InstanceMap::load(&pgm, &side), Err(Error::Validation(_))));
    }
}
