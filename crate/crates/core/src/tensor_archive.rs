//! Reader and writer for the safetensors-compatible checkpoint archive.
//!
//! Layout: an 8-byte little-endian header length `N`, then `N` bytes of UTF-8
//! JSON mapping tensor names to `{"dtype", "shape", "data_offsets"}`, then the
//! raw little-endian payload. Offsets are relative to the start of the payload.
//! The reserved `__metadata__` key holds a string-to-string map.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header length: {0}")]
    HeaderLength(String),
    #[error("header is not valid JSON: {0}")]
    InvalidHeader(String),
    #[error("unknown dtype `{dtype}` for tensor `{name}`")]
    UnknownDtype { name: String, dtype: String },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}` byte range {begin}..{end} lies outside the {payload}-byte payload")]
    OutOfBounds {
        name: String,
        begin: usize,
        end: usize,
        payload: usize,
    },
    #[error("tensor byte ranges overlap or leave gaps near `{0}`")]
    Overlap(String),
    #[error("tensor `{name}`: shape {shape:?} needs {expected} bytes but range holds {actual}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor `{name}` has a non-finite value at element {index}")]
    NonFiniteWeight { name: String, index: usize },
    #[error("tensor `{0}` is empty")]
    EmptyLayer(String),
}

pub type Result<T> = std::result::Result<T, ArchiveError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    F64,
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F64 => "F64",
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F64" => Some(Dtype::F64),
            "F32" => Some(Dtype::F32),
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::BF16),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A validated archive. Entries are kept in payload order.
///
/// Equality is layout-independent: two archives are equal when they hold the
/// same metadata and the same set of named tensors with identical dtype, shape
/// and bytes, regardless of where each tensor sits in the payload.
#[derive(Clone, Debug, Default)]
pub struct TensorArchive {
    entries: Vec<TensorEntry>,
    metadata: Option<BTreeMap<String, String>>,
    payload: Vec<u8>,
}

impl PartialEq for TensorArchive {
    fn eq(&self, other: &Self) -> bool {
        if self.metadata != other.metadata || self.entries.len() != other.entries.len() {
            return false;
        }
        let mut mine: Vec<&TensorEntry> = self.entries.iter().collect();
        let mut theirs: Vec<&TensorEntry> = other.entries.iter().collect();
        mine.sort_by(|a, b| a.name.cmp(&b.name));
        theirs.sort_by(|a, b| a.name.cmp(&b.name));
        mine.iter().zip(&theirs).all(|(a, b)| {
            a.name == b.name
                && a.dtype == b.dtype
                && a.shape == b.shape
                && self.payload[a.range.clone()] == other.payload[b.range.clone()]
        })
    }
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn metadata(&self) -> Option<&BTreeMap<String, String>> {
        self.metadata.as_ref()
    }

    pub fn set_metadata(&mut self, metadata: BTreeMap<String, String>) {
        self.metadata = Some(metadata);
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor_bytes(&self, entry: &TensorEntry) -> &[u8] {
        &self.payload[entry.range.clone()]
    }

    /// Appends a tensor given its raw little-endian bytes.
    pub fn push_raw(
        &mut self,
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        bytes: &[u8],
    ) -> Result<()> {
        let name = name.into();
        if name == METADATA_KEY {
            return Err(ArchiveError::InvalidHeader(format!(
                "`{METADATA_KEY}` is reserved"
            )));
        }
        if self.get(&name).is_some() {
            return Err(ArchiveError::DuplicateName(name));
        }
        let expected = checked_byte_len(&name, &shape, dtype)?;
        if expected != bytes.len() {
            return Err(ArchiveError::ShapeMismatch {
                name,
                shape,
                expected,
                actual: bytes.len(),
            });
        }
        let begin = self.payload.len();
        self.payload.extend_from_slice(bytes);
        self.entries.push(TensorEntry {
            name,
            dtype,
            shape,
            range: begin..self.payload.len(),
        });
        Ok(())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Result<()> {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push_raw(name, Dtype::F64, shape, &bytes)
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f32]) -> Result<()> {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push_raw(name, Dtype::F32, shape, &bytes)
    }

    /// Stores every layer of a genotype as a one-dimensional F64 tensor.
    pub fn from_genotype(genotype: &ModelGenotype) -> Result<Self> {
        let mut archive = Self::new();
        for (name, values) in &genotype.layers {
            archive.push_f64(name.clone(), vec![values.len()], values)?;
        }
        Ok(archive)
    }

    /// Decodes one tensor to `f64`, widening narrower float types exactly.
    pub fn decode(&self, entry: &TensorEntry) -> Vec<f64> {
        let bytes = self.tensor_bytes(entry);
        match entry.dtype {
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F16 => bytes
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            Dtype::BF16 => bytes
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
        }
    }

    /// Parses an archive from an in-memory buffer.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(ArchiveError::HeaderLength(format!(
                "file has {} bytes, need at least 8",
                buf.len()
            )));
        }
        let header_len = u64::from_le_bytes(buf[..8].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(8))
            .filter(|&end| end <= buf.len())
            .ok_or_else(|| {
                ArchiveError::HeaderLength(format!(
                    "declared header length {header_len} exceeds file size {}",
                    buf.len()
                ))
            })?;
        let header = std::str::from_utf8(&buf[8..header_end])
            .map_err(|e| ArchiveError::InvalidHeader(e.to_string()))?;
        let raw: RawHeader =
            serde_json::from_str(header).map_err(|e| ArchiveError::InvalidHeader(e.to_string()))?;
        let payload = buf[header_end..].to_vec();

        let mut metadata = None;
        let mut entries = Vec::with_capacity(raw.0.len());
        let mut seen = HashSet::new();
        for (name, value) in raw.0 {
            if !seen.insert(name.clone()) {
                return Err(ArchiveError::DuplicateName(name));
            }
            if name == METADATA_KEY {
                let map: BTreeMap<String, String> = serde_json::from_value(value)
                    .map_err(|e| ArchiveError::InvalidHeader(format!("{METADATA_KEY}: {e}")))?;
                metadata = Some(map);
                continue;
            }
            let info: RawTensorInfo = serde_json::from_value(value)
                .map_err(|e| ArchiveError::InvalidHeader(format!("tensor `{name}`: {e}")))?;
            let dtype = Dtype::parse(&info.dtype).ok_or_else(|| ArchiveError::UnknownDtype {
                name: name.clone(),
                dtype: info.dtype.clone(),
            })?;
            let [begin, end] = info.data_offsets;
            if begin > end || end > payload.len() {
                return Err(ArchiveError::OutOfBounds {
                    name,
                    begin,
                    end,
                    payload: payload.len(),
                });
            }
            let expected = checked_byte_len(&name, &info.shape, dtype)?;
            if expected != end - begin {
                return Err(ArchiveError::ShapeMismatch {
                    name,
                    shape: info.shape,
                    expected,
                    actual: end - begin,
                });
            }
            entries.push(TensorEntry {
                name,
                dtype,
                shape: info.shape,
                range: begin..end,
            });
        }

        // Ranges must tile the payload exactly.
        entries.sort_by(|a, b| {
            (a.range.start, a.range.end, &a.name).cmp(&(b.range.start, b.range.end, &b.name))
        });
        let mut cursor = 0;
        for e in &entries {
            if e.range.start != cursor {
                return Err(ArchiveError::Overlap(e.name.clone()));
            }
            cursor = e.range.end;
        }
        if cursor != payload.len() {
            let name = entries.last().map(|e| e.name.clone()).unwrap_or_default();
            return Err(ArchiveError::Overlap(name));
        }

        Ok(Self {
            entries,
            metadata,
            payload,
        })
    }

    /// Canonical serialization: entries sorted by name, payload laid out in
    /// that order, minimal JSON header without padding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sorted: Vec<&TensorEntry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));

        let mut header = serde_json::Map::new();
        if let Some(meta) = &self.metadata {
            let obj = meta
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            header.insert(METADATA_KEY.to_string(), serde_json::Value::Object(obj));
        }
        let mut payload = Vec::with_capacity(self.payload.len());
        for e in &sorted {
            let begin = payload.len();
            payload.extend_from_slice(self.tensor_bytes(e));
            header.insert(
                e.name.clone(),
                serde_json::json!({
                    "dtype": e.dtype.as_str(),
                    "shape": e.shape,
                    "data_offsets": [begin, payload.len()],
                }),
            );
        }
        // serde_json::Map is ordered by key, so the header is canonical.
        let header = serde_json::to_vec(&serde_json::Value::Object(header))
            .expect("header serialization cannot fail");
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// Flattens every tensor (row-major) into a float-64 layer vector.
    pub fn to_genotype(&self, model_id: impl Into<String>) -> Result<ModelGenotype> {
        let mut layers = IndexMap::with_capacity(self.entries.len());
        for e in &self.entries {
            let values = self.decode(e);
            if values.is_empty() {
                return Err(ArchiveError::EmptyLayer(e.name.clone()));
            }
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(ArchiveError::NonFiniteWeight {
                    name: e.name.clone(),
                    index,
                });
            }
            layers.insert(e.name.clone(), values);
        }
        Ok(ModelGenotype {
            model_id: model_id.into(),
            layers,
        })
    }
}

fn checked_byte_len(name: &str, shape: &[usize], dtype: Dtype) -> Result<usize> {
    shape
        .iter()
        .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| ArchiveError::InvalidHeader(format!("tensor `{name}`: shape overflows")))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorArchive> {
    let buf = std::fs::read(path)?;
    TensorArchive::from_bytes(&buf)
}

pub fn write_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&archive.to_bytes())?;
    file.flush()?;
    Ok(())
}

/// One model's weights as an ordered collection of flattened layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGenotype {
    pub model_id: String,
    pub layers: IndexMap<String, Vec<f64>>,
}

impl ModelGenotype {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            layers: IndexMap::new(),
        }
    }

    pub fn with_layer(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.layers.insert(name.into(), values);
        self
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layers.get(name).map(Vec::as_slice)
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }
}

#[derive(Deserialize)]
struct RawTensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Header entries in file order, duplicates retained so they can be rejected.
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object of tensor descriptors")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawHeader, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(RawHeader(out))
            }
        }

        deserializer
            .deserialize_map(HeaderVisitor)
            .map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with_header(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut buf = (header.len() as u64).to_le_bytes().to_vec();
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(payload);
        buf
    }

    fn one_tensor() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.push_f32("w", vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        a
    }

    #[test]
    fn reads_minimal_file() {
        let payload: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let buf = file_with_header(
            r#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}}"#,
            &payload,
        );
        let a = TensorArchive::from_bytes(&buf).unwrap();
        assert_eq!(a.len(), 1);
        let e = a.get("w").unwrap();
        assert_eq!(e.dtype, Dtype::F32);
        assert_eq!(e.shape, vec![2, 2]);
        assert_eq!(a, one_tensor());
    }

    #[test]
    fn empty_header_gives_empty_archive() {
        let a = TensorArchive::from_bytes(&file_with_header("{}", &[])).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn rejects_out_of_bounds_range() {
        let buf = file_with_header(
            r#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}}"#,
            &[0u8; 8],
        );
        assert!(matches!(
            TensorArchive::from_bytes(&buf),
            Err(ArchiveError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn rejects_malformed_headers() {
        assert!(matches!(
            TensorArchive::from_bytes(&[1, 2, 3]),
            Err(ArchiveError::HeaderLength(_))
        ));
        let mut buf = 1000u64.to_le_bytes().to_vec();
        buf.extend_from_slice(b"{}");
        assert!(matches!(
            TensorArchive::from_bytes(&buf),
            Err(ArchiveError::HeaderLength(_))
        ));
        assert!(matches!(
            TensorArchive::from_bytes(&file_with_header("{not json", &[])),
            Err(ArchiveError::InvalidHeader(_))
        ));
    }

    #[test]
    fn rejects_unknown_dtype_and_duplicates() {
        let buf = file_with_header(
            r#"{"w":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}}"#,
            &[0],
        );
        assert!(matches!(
            TensorArchive::from_bytes(&buf),
            Err(ArchiveError::UnknownDtype { .. })
        ));
        let buf = file_with_header(
            r#"{"w":{"dtype":"F16","shape":[1],"data_offsets":[0,2]},"w":{"dtype":"F16","shape":[1],"data_offsets":[2,4]}}"#,
            &[0; 4],
        );
        assert!(matches!(
            TensorArchive::from_bytes(&buf),
            Err(ArchiveError::DuplicateName(_))
        ));
    }

    #[test]
    fn rejects_overlap_and_shape_mismatch() {
        let buf = file_with_header(
            r#"{"a":{"dtype":"F16","shape":[2],"data_offsets":[0,4]},"b":{"dtype":"F16","shape":[2],"data_offsets":[2,6]}}"#,
            &[0; 6],
        );
        assert!(matches!(
            TensorArchive::from_bytes(&buf),
            Err(ArchiveError::Overlap(_))
        ));
        let buf = file_with_header(
            r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#,
            &[0; 8],
        );
        assert!(matches!(
            TensorArchive::from_bytes(&buf),
            Err(ArchiveError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn write_is_canonical() {
        let mut a = TensorArchive::new();
        a.push_f64("z", vec![1], &[1.0]).unwrap();
        a.push_f64("a", vec![2], &[2.0, 3.0]).unwrap();
        let mut b = TensorArchive::new();
        b.push_f64("a", vec![2], &[2.0, 3.0]).unwrap();
        b.push_f64("z", vec![1], &[1.0]).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), a.to_bytes());
    }

    #[test]
    fn f64_round_trips_with_dtype() {
        let mut a = TensorArchive::new();
        let data = [std::f64::consts::PI, -1e-300, 7.0];
        a.push_f64("p", vec![3], &data).unwrap();
        let bytes = a.to_bytes();
        let back = TensorArchive::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("p").unwrap().dtype, Dtype::F64);
        let expected: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(back.tensor_bytes(back.get("p").unwrap()), &expected[..]);
    }

    #[test]
    fn metadata_is_preserved() {
        let mut a = one_tensor();
        a.set_metadata(BTreeMap::from([("format".to_string(), "pt".to_string())]));
        let back = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back.metadata().unwrap()["format"], "pt");
    }

    #[test]
    fn genotype_is_row_major() {
        let g = one_tensor().to_genotype("m").unwrap();
        assert_eq!(g.layer("w").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn half_precision_widens_exactly() {
        let mut a = TensorArchive::new();
        a.push_raw("h", Dtype::F16, vec![1], &half::f16::from_f64(1.5).to_le_bytes())
            .unwrap();
        a.push_raw("b", Dtype::BF16, vec![1], &half::bf16::from_f64(-2.5).to_le_bytes())
            .unwrap();
        let g = a.to_genotype("m").unwrap();
        assert_eq!(g.layer("h").unwrap(), &[1.5]);
        assert_eq!(g.layer("b").unwrap(), &[-2.5]);
    }

    #[test]
    fn non_finite_weight_rejected() {
        let mut a = TensorArchive::new();
        a.push_f32("w", vec![2], &[1.0, f32::NAN]).unwrap();
        assert!(matches!(
            a.to_genotype("m"),
            Err(ArchiveError::NonFiniteWeight { index: 1, .. })
        ));
        let mut a = TensorArchive::new();
        a.push_f64("w", vec![1], &[f64::INFINITY]).unwrap();
        assert!(a.to_genotype("m").is_err());
    }

    #[test]
    fn layer_order_follows_payload_order() {
        let header = r#"{"b":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#;
        let payload: Vec<u8> = [1.0f32, 2.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let a = TensorArchive::from_bytes(&file_with_header(header, &payload)).unwrap();
        let g = a.to_genotype("m").unwrap();
        assert_eq!(g.layer_names().collect::<Vec<_>>(), vec!["b", "a"]);
    }
}
