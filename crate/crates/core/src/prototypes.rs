//! Prototype stores: the retrieval memory built from training features.
//!
//! Three kinds exist. Sample stores keep one row per training sample,
//! optionally shifted by the sample's pooled positional encoding. Part stores
//! keep one mean feature per (sample, part) pair and tag each row with the
//! sample's object class. Object stores keep one row per training object,
//! shifted by the encoding of its position.
//!
//! Stores persist as SNPS files: the SNPF header layout with magic `SNPS`,
//! followed by `R*C` f32 vectors, `R` i32 labels, `R` i32 part labels (part
//! stores only), `R` i32 origin ids, a JSON trailer and the trailer length as
//! a final little-endian u64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ByteReader, Header};
use crate::encoding::{add_encoding, EncodingSpec, Pooling, PositionalEncoder};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureKind, FeatureSet};

pub const SNPS_MAGIC: [u8; 4] = *b"SNPS";

/// Upper bound on distinct parts contributed by a single sample.
pub const MAX_PARTS_PER_SAMPLE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Sample,
    Part,
    Object,
}

impl StoreKind {
    fn code(self) -> u32 {
        match self {
            StoreKind::Sample => 0,
            StoreKind::Part => 1,
            StoreKind::Object => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(StoreKind::Sample),
            1 => Ok(StoreKind::Part),
            2 => Ok(StoreKind::Object),
            other => Err(Error::InvalidSet(format!("unknown store kind code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    kind: StoreKind,
    dim: usize,
    vectors: Vec<f32>,
    labels: Vec<u32>,
    origin_ids: Vec<u32>,
    part_labels: Option<Vec<u32>>,
    class_names: Vec<String>,
    part_names: Vec<String>,
    valid_parts: Vec<Vec<u32>>,
    encoder: Option<PositionalEncoder>,
    pooling: Option<Pooling>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Trailer {
    kind: StoreKind,
    encoding: Option<EncodingSpec>,
    #[serde(default)]
    fourier_basis: Vec<[f64; 3]>,
    pooling: Option<Pooling>,
    class_names: Vec<String>,
    #[serde(default)]
    part_names: Vec<String>,
    #[serde(default)]
    valid_parts: Vec<Vec<u32>>,
}

impl PrototypeStore {
    /// Builds a sample- or object-kind store directly from labelled rows.
    pub fn from_rows(kind: StoreKind, dim: usize, rows: Vec<(Vec<f32>, u32)>, class_names: Vec<String>) -> Result<Self> {
        if kind == StoreKind::Part {
            return Err(Error::InvalidConfig("part stores are built with build_part_prototypes".into()));
        }
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (v, label)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!("row {i} has {} components, expected {dim}", v.len())));
            }
            if label as usize >= class_names.len() {
                return Err(Error::InvalidLabel {
                    id: i as u32,
                    label: label as i64,
                    num_classes: class_names.len(),
                });
            }
            vectors.extend(v);
            labels.push(label);
        }
        let origin_ids = (0..labels.len() as u32).collect();
        Ok(Self {
            kind,
            dim,
            vectors,
            labels,
            origin_ids,
            part_labels: None,
            class_names,
            part_names: Vec::new(),
            valid_parts: Vec::new(),
            encoder: None,
            pooling: None,
        })
    }

    /// Attaches the encoder whose encodings were added to the rows.
    pub fn with_encoder(mut self, encoder: PositionalEncoder) -> Self {
        self.encoder = Some(encoder);
        self
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim.max(1)).take(self.len())
    }

    /// Class label of a row; for part stores this is the owning object's class.
    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn origin_id(&self, index: usize) -> u32 {
        self.origin_ids[index]
    }

    pub fn part_labels(&self) -> Option<&[u32]> {
        self.part_labels.as_deref()
    }

    /// Label used for voting: the part label for part stores, else the class.
    pub fn retrieval_label(&self, index: usize) -> u32 {
        match &self.part_labels {
            Some(parts) => parts[index],
            None => self.labels[index],
        }
    }

    /// Size of the label space that `retrieval_label` draws from.
    pub fn num_retrieval_labels(&self) -> usize {
        match self.kind {
            StoreKind::Part => self.part_names.len(),
            _ => self.class_names.len(),
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn valid_parts(&self) -> &[Vec<u32>] {
        &self.valid_parts
    }

    pub fn encoder(&self) -> Option<&PositionalEncoder> {
        self.encoder.as_ref()
    }

    pub fn encoding(&self) -> Option<&EncodingSpec> {
        self.encoder.as_ref().map(|e| e.spec())
    }

    pub fn pooling(&self) -> Option<Pooling> {
        self.pooling
    }

    pub fn to_snps_bytes(&self) -> Result<Vec<u8>> {
        let rows = self.len();
        let header = Header {
            magic: SNPS_MAGIC,
            kind: self.kind.code(),
            rows: codec::to_u32(rows, "row count")?,
            dim: codec::to_u32(self.dim, "dimension")?,
            classes: codec::to_u32(self.class_names.len(), "class count")?,
            has_positions: false,
            has_parts: self.part_labels.is_some(),
        };
        let mut out = Vec::new();
        header.write(&mut out);
        codec::put_f32s(&mut out, &self.vectors);
        self.labels.iter().for_each(|&l| codec::put_i32(&mut out, l as i32));
        if let Some(parts) = &self.part_labels {
            parts.iter().for_each(|&p| codec::put_i32(&mut out, p as i32));
        }
        self.origin_ids.iter().for_each(|&o| codec::put_i32(&mut out, o as i32));
        let trailer = Trailer {
            kind: self.kind,
            encoding: self.encoding().cloned(),
            fourier_basis: self.encoder.as_ref().map(|e| e.basis().to_vec()).unwrap_or_default(),
            pooling: self.pooling,
            class_names: self.class_names.clone(),
            part_names: self.part_names.clone(),
            valid_parts: self.valid_parts.clone(),
        };
        let json = serde_json::to_vec(&trailer)?;
        out.extend_from_slice(&json);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        Ok(out)
    }

    pub fn from_snps_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader::new(bytes);
        let header = Header::read(&mut reader, SNPS_MAGIC)?;
        let kind = StoreKind::from_code(header.kind)?;
        let rows = header.rows as usize;
        let dim = header.dim as usize;
        let columns = if header.has_parts { 3 } else { 2 };
        let body = rows * dim * 4 + rows * 4 * columns;
        reader.require(body + 8)?;
        let trailer_len = {
            let tail: [u8; 8] = bytes[bytes.len() - 8..].try_into().expect("8-byte slice");
            u64::from_le_bytes(tail) as usize
        };
        let expected_total = codec::HEADER_LEN + body + trailer_len + 8;
        if expected_total > bytes.len() {
            return Err(Error::TruncatedPayload {
                expected: expected_total,
                found: bytes.len(),
            });
        }
        if expected_total < bytes.len() {
            return Err(Error::DimensionMismatch(format!(
                "header and trailer imply {expected_total} bytes, file has {}",
                bytes.len()
            )));
        }

        let vectors = reader.f32s(rows * dim)?;
        let labels = to_labels(reader.i32s(rows)?, "label")?;
        let part_labels = if header.has_parts {
            Some(to_labels(reader.i32s(rows)?, "part label")?)
        } else {
            None
        };
        let origin_ids = to_labels(reader.i32s(rows)?, "origin id")?;
        let trailer: Trailer = serde_json::from_slice(reader.take(trailer_len)?)?;

        if trailer.kind != kind {
            return Err(Error::InvalidSet("trailer kind disagrees with header".into()));
        }
        if trailer.class_names.len() != header.classes as usize {
            return Err(Error::DimensionMismatch(format!(
                "header declares {} classes, trailer names {}",
                header.classes,
                trailer.class_names.len()
            )));
        }
        if (kind == StoreKind::Part) != part_labels.is_some() {
            return Err(Error::InvalidSet("part stores, and only part stores, carry part labels".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= trailer.class_names.len()) {
            return Err(Error::InvalidSet(format!("label {l} out of range")));
        }
        let encoder = match trailer.encoding {
            Some(spec) => Some(PositionalEncoder::with_basis(spec, trailer.fourier_basis)?),
            None => None,
        };
        if let Some(v) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                id: (v / dim.max(1)) as u32,
                component: v % dim.max(1),
            });
        }
        Ok(Self {
            kind,
            dim,
            vectors,
            labels,
            origin_ids,
            part_labels,
            class_names: trailer.class_names,
            part_names: trailer.part_names,
            valid_parts: trailer.valid_parts,
            encoder,
            pooling: trailer.pooling,
        })
    }
}

fn to_labels(raw: Vec<i32>, what: &str) -> Result<Vec<u32>> {
    raw.into_iter()
        .map(|v| u32::try_from(v).map_err(|_| Error::InvalidSet(format!("negative {what} {v}"))))
        .collect()
}

pub fn save_store(store: &PrototypeStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_snps_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_store(path: impl AsRef<Path>) -> Result<PrototypeStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PrototypeStore::from_snps_bytes(&bytes)
}

fn expect_kind(set: &FeatureSet, kind: FeatureKind) -> Result<()> {
    if set.kind != kind {
        return Err(Error::InvalidSet(format!(
            "expected a {kind:?} feature set, got {:?}",
            set.kind
        )));
    }
    set.validate()
}

fn check_encoding_dim(spec: &EncodingSpec, dim: usize) -> Result<()> {
    if spec.dim != dim {
        return Err(Error::DimensionMismatch(format!(
            "encoding dimension {} differs from feature dimension {dim}",
            spec.dim
        )));
    }
    Ok(())
}

/// One prototype per training sample.
///
/// With an encoding spec, each prototype is the sample's feature plus the
/// pooled positional encoding of its raw point cloud.
pub fn build_sample_prototypes(
    train: &FeatureSet,
    clouds: Option<&[Vec<[f32; 3]>]>,
    spec: Option<&EncodingSpec>,
    pooling: Pooling,
) -> Result<PrototypeStore> {
    expect_kind(train, FeatureKind::Sample)?;
    let rows: Vec<(Vec<f32>, u32)> = match spec {
        None => train.records.iter().map(|r| (r.feature.clone(), r.label)).collect(),
        Some(spec) => {
            check_encoding_dim(spec, train.dim)?;
            let clouds = clouds.ok_or(Error::MissingField("point clouds"))?;
            if clouds.len() != train.len() {
                return Err(Error::LengthMismatch {
                    expected: train.len(),
                    found: clouds.len(),
                });
            }
            let encoder = PositionalEncoder::new(spec.clone())?;
            train
                .records
                .par_iter()
                .zip(clouds.par_iter())
                .map(|(record, cloud)| {
                    let pe = encoder.global_vector(cloud, pooling)?;
                    Ok((add_encoding(&record.feature, &pe), record.label))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut store = PrototypeStore::from_rows(StoreKind::Sample, train.dim, rows, train.class_names.clone())?;
    store.origin_ids = train.records.iter().map(|r| r.id).collect();
    if let Some(spec) = spec {
        store.encoder = Some(PositionalEncoder::new(spec.clone())?);
        store.pooling = Some(pooling);
    }
    Ok(store)
}

/// Mean feature of the points sharing each part label, sorted by label.
pub fn part_pooling(features: &[&[f32]], parts: &[u32]) -> Result<Vec<(u32, Vec<f32>)>> {
    if features.is_empty() {
        return Err(Error::Empty("point features"));
    }
    if features.len() != parts.len() {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            found: parts.len(),
        });
    }
    let dim = features[0].len();
    let mut sums: BTreeMap<u32, (usize, Vec<f64>)> = BTreeMap::new();
    for (feature, &part) in features.iter().zip(parts) {
        if feature.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "point feature has {} components, expected {dim}",
                feature.len()
            )));
        }
        let (count, acc) = sums.entry(part).or_insert_with(|| (0, vec![0.0; dim]));
        *count += 1;
        acc.iter_mut().zip(feature.iter()).for_each(|(a, &v)| *a += v as f64);
    }
    Ok(sums
        .into_iter()
        .map(|(part, (count, acc))| {
            let n = count as f64;
            (part, acc.into_iter().map(|v| (v / n) as f32).collect())
        })
        .collect())
}

/// Part prototypes for every sample of a grouped point-kind set.
pub fn build_part_prototypes(train: &FeatureSet) -> Result<PrototypeStore> {
    expect_kind(train, FeatureKind::Point)?;
    if !train.is_empty() && !train.has_parts() {
        return Err(Error::MissingField("part labels"));
    }
    if train.groups.is_empty() && !train.is_empty() {
        return Err(Error::MissingField("sample groups"));
    }
    if train.valid_parts.is_empty() {
        return Err(Error::MissingField("valid part map"));
    }

    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut part_labels = Vec::new();
    let mut origin_ids = Vec::new();
    for (sample, range) in train.group_ranges().into_iter().enumerate() {
        let records = &train.records[range];
        let Some(first) = records.first() else { continue };
        let class = first.label;
        if records.iter().any(|r| r.label != class) {
            return Err(Error::InvalidSet(format!("sample {sample} mixes object classes")));
        }
        let valid = &train.valid_parts[class as usize];
        let features: Vec<&[f32]> = records.iter().map(|r| r.feature.as_slice()).collect();
        let parts: Vec<u32> = records.iter().map(|r| r.part_label.unwrap_or_default()).collect();
        if let Some(&part) = parts.iter().find(|p| !valid.contains(p)) {
            return Err(Error::PartNotValidForClass { sample, part, class });
        }
        let pooled = part_pooling(&features, &parts)?;
        if pooled.len() > MAX_PARTS_PER_SAMPLE {
            return Err(Error::TooManyParts {
                sample,
                found: pooled.len(),
                max: MAX_PARTS_PER_SAMPLE,
            });
        }
        for (part, mean) in pooled {
            vectors.extend(mean);
            labels.push(class);
            part_labels.push(part);
            origin_ids.push(sample as u32);
        }
    }
    Ok(PrototypeStore {
        kind: StoreKind::Part,
        dim: train.dim,
        vectors,
        labels,
        origin_ids,
        part_labels: Some(part_labels),
        class_names: train.class_names.clone(),
        part_names: train.part_names.clone(),
        valid_parts: train.valid_parts.clone(),
        encoder: None,
        pooling: None,
    })
}

/// One prototype per object: feature plus the encoding of its position.
pub fn build_object_prototypes(objects: &FeatureSet, spec: &EncodingSpec) -> Result<PrototypeStore> {
    expect_kind(objects, FeatureKind::Object)?;
    if !objects.has_positions() {
        return Err(Error::MissingField("positions"));
    }
    check_encoding_dim(spec, objects.dim)?;
    let encoder = PositionalEncoder::new(spec.clone())?;
    let rows = objects
        .records
        .par_iter()
        .map(|r| {
            let position = r.position.expect("validated: every record has a position");
            (add_encoding(&r.feature, &encoder.encode(position)), r.label)
        })
        .collect();
    let mut store = PrototypeStore::from_rows(StoreKind::Object, objects.dim, rows, objects.class_names.clone())?;
    store.origin_ids = objects.records.iter().map(|r| r.id).collect();
    store.encoder = Some(encoder);
    Ok(store)
}
