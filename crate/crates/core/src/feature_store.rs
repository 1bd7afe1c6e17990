//! Feature sets exchanged between feature producers and the retrieval engine.
//!
//! A set is persisted as an SNPF binary file plus a JSON sidecar at
//! `<path>.meta.json`. Layout (little-endian):
//!
//! ```text
//! "SNPF" | u32 version=1 | u32 kind | u32 M | u32 C | u32 K
//!        | u8 has_positions | u8 has_parts | 6 bytes zero padding   (32 bytes)
//! M*C f32 features (row-major)
//! M   i32 labels
//! M*3 f32 positions        (if has_positions)
//! M   i32 part labels      (if has_parts)
//! ```
//!
//! Record ids are implicit: record `i` has id `i`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, ByteReader, Header, HEADER_LEN};
use crate::error::{Error, Result};

pub const SNPF_MAGIC: [u8; 4] = *b"SNPF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Sample,
    Point,
    Object,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Sample => 0,
            FeatureKind::Point => 1,
            FeatureKind::Object => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(FeatureKind::Sample),
            1 => Ok(FeatureKind::Point),
            2 => Ok(FeatureKind::Object),
            other => Err(Error::InvalidSet(format!("unknown kind code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: u32,
    pub feature: Vec<f32>,
    pub label: u32,
    pub position: Option<[f32; 3]>,
    pub part_label: Option<u32>,
}

impl FeatureRecord {
    pub fn new(id: u32, feature: Vec<f32>, label: u32) -> Self {
        Self {
            id,
            feature,
            label,
            position: None,
            part_label: None,
        }
    }
}

/// An in-memory feature set.
///
/// For `Point` sets every record is one point; `groups` lists how many
/// consecutive records belong to each source sample. `valid_parts[c]` holds
/// the part labels that may appear on objects of class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub kind: FeatureKind,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub part_names: Vec<String>,
    pub valid_parts: Vec<Vec<u32>>,
    pub groups: Vec<usize>,
    pub records: Vec<FeatureRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Sidecar {
    class_names: Vec<String>,
    #[serde(default)]
    part_names: Vec<String>,
    #[serde(default)]
    valid_parts: Vec<Vec<u32>>,
    #[serde(default)]
    groups: Vec<usize>,
}

impl FeatureSet {
    pub fn new(kind: FeatureKind, dim: usize, class_names: Vec<String>) -> Self {
        Self {
            kind,
            dim,
            class_names,
            part_names: Vec::new(),
            valid_parts: Vec::new(),
            groups: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_parts(&self) -> usize {
        self.part_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_positions(&self) -> bool {
        self.records.first().is_some_and(|r| r.position.is_some())
    }

    pub fn has_parts(&self) -> bool {
        self.records.first().is_some_and(|r| r.part_label.is_some())
    }

    /// Appends a record, assigning it the next dense id.
    pub fn push(&mut self, mut record: FeatureRecord) {
        record.id = self.records.len() as u32;
        self.records.push(record);
    }

    /// Record index ranges of each sample of a grouped set.
    pub fn group_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.groups
            .iter()
            .map(|&n| {
                let range = start..start + n;
                start += n;
                range
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let num_classes = self.num_classes();
        let has_positions = self.has_positions();
        let has_parts = self.has_parts();
        for (index, record) in self.records.iter().enumerate() {
            if record.id as usize != index {
                return Err(Error::InvalidSet(format!(
                    "record at index {index} has id {}; ids must be dense",
                    record.id
                )));
            }
            if record.feature.len() != self.dim {
                return Err(Error::DimensionMismatch(format!(
                    "record {} has {} components, set dim is {}",
                    record.id,
                    record.feature.len(),
                    self.dim
                )));
            }
            if let Some(component) = record.feature.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    id: record.id,
                    component,
                });
            }
            if record.label as usize >= num_classes {
                return Err(Error::InvalidLabel {
                    id: record.id,
                    label: record.label as i64,
                    num_classes,
                });
            }
            match (record.position, has_positions) {
                (Some(p), true) => {
                    if let Some(axis) = p.iter().position(|v| !v.is_finite()) {
                        return Err(Error::NonFinite {
                            id: record.id,
                            component: self.dim + axis,
                        });
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::InvalidSet(format!(
                        "record {} disagrees with the set on having a position",
                        record.id
                    )))
                }
            }
            match (record.part_label, has_parts) {
                (Some(part), true) => {
                    if part as usize >= self.num_parts() {
                        return Err(Error::InvalidPart {
                            id: record.id,
                            part: part as i64,
                            num_parts: self.num_parts(),
                        });
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::InvalidSet(format!(
                        "record {} disagrees with the set on having a part label",
                        record.id
                    )))
                }
            }
        }
        if !self.valid_parts.is_empty() && self.valid_parts.len() != num_classes {
            return Err(Error::DimensionMismatch(format!(
                "valid-part map covers {} classes, set has {num_classes}",
                self.valid_parts.len()
            )));
        }
        if !self.groups.is_empty() && self.groups.iter().sum::<usize>() != self.records.len() {
            return Err(Error::DimensionMismatch(format!(
                "groups cover {} records, set has {}",
                self.groups.iter().sum::<usize>(),
                self.records.len()
            )));
        }
        Ok(())
    }

    /// Serializes the binary part of the file.
    pub fn to_snpf_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let rows = self.records.len();
        let header = Header {
            magic: SNPF_MAGIC,
            kind: self.kind.code(),
            rows: codec::to_u32(rows, "record count")?,
            dim: codec::to_u32(self.dim, "dimension")?,
            classes: codec::to_u32(self.num_classes(), "class count")?,
            has_positions: self.has_positions(),
            has_parts: self.has_parts(),
        };
        let mut out = Vec::with_capacity(HEADER_LEN + rows * (self.dim + 5) * 4);
        header.write(&mut out);
        for record in &self.records {
            codec::put_f32s(&mut out, &record.feature);
        }
        for record in &self.records {
            codec::put_i32(&mut out, record.label as i32);
        }
        if header.has_positions {
            for record in &self.records {
                codec::put_f32s(&mut out, &record.position.unwrap_or_default());
            }
        }
        if header.has_parts {
            for record in &self.records {
                codec::put_i32(&mut out, record.part_label.unwrap_or_default() as i32);
            }
        }
        Ok(out)
    }

    /// Parses the binary part of the file; names and maps come from `meta`.
    fn from_snpf_bytes(bytes: &[u8], meta: Sidecar) -> Result<Self> {
        let mut reader = ByteReader::new(bytes);
        let header = Header::read(&mut reader, SNPF_MAGIC)?;
        let kind = FeatureKind::from_code(header.kind)?;
        let rows = header.rows as usize;
        let dim = header.dim as usize;

        let mut payload = rows * dim * 4 + rows * 4;
        if header.has_positions {
            payload += rows * 12;
        }
        if header.has_parts {
            payload += rows * 4;
        }
        reader.require(payload)?;
        if reader.remaining() > payload {
            return Err(Error::DimensionMismatch(format!(
                "header implies {payload} payload bytes, file carries {}",
                reader.remaining()
            )));
        }
        if meta.class_names.len() != header.classes as usize {
            return Err(Error::DimensionMismatch(format!(
                "header declares {} classes, sidecar names {}",
                header.classes,
                meta.class_names.len()
            )));
        }

        let features = reader.f32s(rows * dim)?;
        let labels = reader.i32s(rows)?;
        let positions = if header.has_positions {
            Some(reader.f32s(rows * 3)?)
        } else {
            None
        };
        let parts = if header.has_parts {
            Some(reader.i32s(rows)?)
        } else {
            None
        };

        let mut records = Vec::with_capacity(rows);
        for i in 0..rows {
            let id = i as u32;
            let label = labels[i];
            if label < 0 || label as usize >= meta.class_names.len() {
                return Err(Error::InvalidLabel {
                    id,
                    label: label as i64,
                    num_classes: meta.class_names.len(),
                });
            }
            let part_label = match &parts {
                Some(parts) => {
                    let part = parts[i];
                    if part < 0 {
                        return Err(Error::InvalidPart {
                            id,
                            part: part as i64,
                            num_parts: meta.part_names.len(),
                        });
                    }
                    Some(part as u32)
                }
                None => None,
            };
            records.push(FeatureRecord {
                id,
                feature: features[i * dim..(i + 1) * dim].to_vec(),
                label: label as u32,
                position: positions
                    .as_ref()
                    .map(|p| [p[i * 3], p[i * 3 + 1], p[i * 3 + 2]]),
                part_label,
            });
        }

        let set = FeatureSet {
            kind,
            dim,
            class_names: meta.class_names,
            part_names: meta.part_names,
            valid_parts: meta.valid_parts,
            groups: meta.groups,
            records,
        };
        set.validate()?;
        Ok(set)
    }

    fn sidecar(&self) -> Sidecar {
        Sidecar {
            class_names: self.class_names.clone(),
            part_names: self.part_names.clone(),
            valid_parts: self.valid_parts.clone(),
            groups: self.groups.clone(),
        }
    }
}

/// Path of the JSON sidecar belonging to a binary file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn save_feature_set(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = set.to_snpf_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar_path(path);
    let meta = serde_json::to_vec_pretty(&set.sidecar())?;
    fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))?;
    Ok(())
}

pub fn load_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar_path(path);
    let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: Sidecar = serde_json::from_slice(&meta_bytes)?;
    FeatureSet::from_snpf_bytes(&bytes, meta)
}
