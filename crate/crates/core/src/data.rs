//! Speaker-labeled feature vectors and their on-disk formats.
//!
//! Two interchangeable encodings are supported:
//!
//! * CSV with header `speaker_id,f0,f1,...,f{m-1}`, one vector per record.
//! * A little-endian binary container: magic `BIOV`, `u32` version (1),
//!   `u32` dimension, `u64` record count, then per record a `u16` id length,
//!   the UTF-8 id and `m` `f64` values.
//!
//! Records are always written speaker by speaker in lexicographic id order,
//! so `save(load(x))` reproduces `save(x)` byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const BINARY_MAGIC: &[u8; 4] = b"BIOV";
pub const BINARY_VERSION: u32 = 1;

/// One embedding: `m` finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "element {j} is not finite ({})",
                values[j]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        FeatureVector::new(values)
    }
}

/// Optional sidecar metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

/// Feature vectors grouped by speaker, iterated in lexicographic id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerDataset {
    dim: usize,
    speakers: BTreeMap<String, Vec<FeatureVector>>,
    pub manifest: Option<Manifest>,
}

impl SpeakerDataset {
    pub fn new(dim: usize, speakers: BTreeMap<String, Vec<FeatureVector>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        for (id, vectors) in &speakers {
            if id.is_empty() {
                return Err(Error::Validation("empty speaker id".into()));
            }
            if vectors.is_empty() {
                return Err(Error::Validation(format!("speaker {id:?} has no vectors")));
            }
            for v in vectors {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                        context: format!(" (speaker {id:?})"),
                    });
                }
            }
        }
        Ok(SpeakerDataset {
            dim,
            speakers,
            manifest: None,
        })
    }

    /// Builds a dataset from `(speaker, values)` records, keeping record order
    /// within each speaker.
    pub fn from_records<I, S>(dim: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut speakers: BTreeMap<String, Vec<FeatureVector>> = BTreeMap::new();
        for (id, values) in records {
            speakers
                .entry(id.into())
                .or_default()
                .push(FeatureVector::new(values)?);
        }
        SpeakerDataset::new(dim, speakers)
    }

    pub fn with_manifest(mut self, manifest: Option<Manifest>) -> Self {
        self.manifest = manifest;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn n_vectors(&self) -> usize {
        self.speakers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn speakers(&self) -> impl ExactSizeIterator<Item = (&str, &[FeatureVector])> {
        self.speakers.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn speaker_ids(&self) -> impl ExactSizeIterator<Item = &str> {
        self.speakers.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&[FeatureVector]> {
        self.speakers.get(id).map(Vec::as_slice)
    }

    /// All vectors in speaker order.
    pub fn vectors(&self) -> impl Iterator<Item = &FeatureVector> {
        self.speakers.values().flatten()
    }

    /// Applies `f` to every vector; `f` may change the dimension.
    pub fn try_map<F>(&self, mut f: F) -> Result<SpeakerDataset>
    where
        F: FnMut(&FeatureVector) -> Result<FeatureVector>,
    {
        let mut speakers = BTreeMap::new();
        let mut dim = None;
        for (id, vectors) in &self.speakers {
            let mapped = vectors.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
            dim.get_or_insert(mapped[0].len());
            speakers.insert(id.clone(), mapped);
        }
        Ok(SpeakerDataset::new(dim.unwrap_or(self.dim), speakers)?.with_manifest(self.manifest.clone()))
    }

    /// Keeps only the listed speakers.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> SpeakerDataset {
        let speakers = ids
            .into_iter()
            .filter_map(|id| self.speakers.get_key_value(id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        SpeakerDataset {
            dim: self.dim,
            speakers,
            manifest: self.manifest.clone(),
        }
    }

    /// Drops speakers with fewer than `min` vectors.
    pub fn retain_min_vectors(&self, min: usize) -> SpeakerDataset {
        let ids: Vec<&str> = self
            .speakers
            .iter()
            .filter(|(_, v)| v.len() >= min)
            .map(|(k, _)| k.as_str())
            .collect();
        self.select(ids)
    }
}

/// Seeded partition into disjoint development and measurement speaker sets.
///
/// The development side receives `round(dev_fraction * n)` speakers, clamped
/// so neither side is empty.
pub fn split_by_speaker(
    ds: &SpeakerDataset,
    dev_fraction: f64,
    seed: u64,
) -> Result<(SpeakerDataset, SpeakerDataset)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Config(format!(
            "dev_fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let n = ds.n_speakers();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "splitting needs at least 2 speakers, dataset has {n}"
        )));
    }
    let n_dev = ((dev_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<&str> = ds.speaker_ids().collect();
    ids.shuffle(&mut rng::stream(seed, 0));
    let (dev, measure) = ids.split_at(n_dev);
    Ok((ds.select(dev.iter().copied()), ds.select(measure.iter().copied())))
}

/// Seeded selection of exactly `n_speakers` speakers with exactly
/// `k_samples` vectors each.
///
/// Speakers are drawn from those owning at least `k_samples` vectors; each
/// chosen speaker keeps the first `k_samples` vectors of a shuffle keyed by
/// its id, so the result does not depend on which other speakers exist.
pub fn subsample(
    ds: &SpeakerDataset,
    n_speakers: usize,
    k_samples: usize,
    seed: u64,
) -> Result<SpeakerDataset> {
    if n_speakers == 0 || k_samples == 0 {
        return Err(Error::Config(
            "subsample needs n_speakers >= 1 and k_samples >= 1".into(),
        ));
    }
    let mut qualifying: Vec<&str> = ds
        .speakers()
        .filter(|(_, v)| v.len() >= k_samples)
        .map(|(id, _)| id)
        .collect();
    if qualifying.len() < n_speakers {
        return Err(Error::InsufficientData(format!(
            "requested {n_speakers} speakers with >= {k_samples} vectors, only {} qualify",
            qualifying.len()
        )));
    }
    qualifying.shuffle(&mut rng::stream(seed, 0));
    let mut speakers = BTreeMap::new();
    for id in &qualifying[..n_speakers] {
        let mut vectors = ds.speakers[*id].clone();
        let mut r = rng::stream(rng::derive(seed, rng::fnv1a(id.as_bytes())), 1);
        vectors.shuffle(&mut r);
        vectors.truncate(k_samples);
        speakers.insert((*id).to_owned(), vectors);
    }
    Ok(SpeakerDataset {
        dim: ds.dim,
        speakers,
        manifest: ds.manifest.clone(),
    })
}

/// A quantized embedding: one cell index per element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedVector {
    pub codes: Vec<u8>,
    pub bits: u8,
}

impl QuantizedVector {
    pub fn new(codes: Vec<u8>, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let alphabet = 1u32 << bits;
        if let Some(c) = codes.iter().find(|&&c| u32::from(c) >= alphabet) {
            return Err(Error::OutOfRange(format!(
                "code {c} does not fit in {bits} bits"
            )));
        }
        Ok(QuantizedVector { codes, bits })
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("bits must be in 1..=8, got {bits}")))
    }
}

/// Quantized vectors grouped by speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDataset {
    dim: usize,
    bits: u8,
    speakers: BTreeMap<String, Vec<Vec<u8>>>,
}

impl QuantizedDataset {
    pub fn new(dim: usize, bits: u8, speakers: BTreeMap<String, Vec<Vec<u8>>>) -> Result<Self> {
        check_bits(bits)?;
        let alphabet = 1u32 << bits;
        for (id, vectors) in &speakers {
            if vectors.is_empty() {
                return Err(Error::Validation(format!("speaker {id:?} has no vectors")));
            }
            for v in vectors {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                        context: format!(" (speaker {id:?})"),
                    });
                }
                if let Some(c) = v.iter().find(|&&c| u32::from(c) >= alphabet) {
                    return Err(Error::OutOfRange(format!(
                        "code {c} does not fit in {bits} bits (speaker {id:?})"
                    )));
                }
            }
        }
        Ok(QuantizedDataset {
            dim,
            bits,
            speakers,
        })
    }

    /// Unlabeled vectors, each treated as its own speaker.
    pub fn from_unlabeled(dim: usize, bits: u8, vectors: Vec<Vec<u8>>) -> Result<Self> {
        let width = vectors.len().to_string().len();
        let speakers = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("v{i:0width$}"), vec![v]))
            .collect();
        QuantizedDataset::new(dim, bits, speakers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn alphabet_size(&self) -> usize {
        1 << self.bits
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn n_vectors(&self) -> usize {
        self.speakers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn speakers(&self) -> impl ExactSizeIterator<Item = (&str, &[Vec<u8>])> {
        self.speakers.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[u8]> {
        self.speakers.values().flatten().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// Guesses from the extension: `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "binary" | "bin" | "biov" => Ok(Format::Binary),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Binary => "binary",
        })
    }
}

/// Path of the optional manifest sidecar for a dataset file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn load(path: &Path, format: Format) -> Result<SpeakerDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ds = match format {
        Format::Csv => from_csv(&bytes)?,
        Format::Binary => from_binary(&bytes)?,
    };
    let sidecar = manifest_path(path);
    let manifest = if sidecar.exists() {
        let text = fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        Some(serde_json::from_slice(&text)?)
    } else {
        None
    };
    Ok(ds.with_manifest(manifest))
}

pub fn save(ds: &SpeakerDataset, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Csv => to_csv(ds),
        Format::Binary => to_binary(ds),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    if let Some(manifest) = &ds.manifest {
        let sidecar = manifest_path(path);
        let text = serde_json::to_vec_pretty(manifest)?;
        fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

pub fn to_csv(ds: &SpeakerDataset) -> Vec<u8> {
    let mut out = String::from("speaker_id");
    for j in 0..ds.dim {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (id, vectors) in ds.speakers() {
        for v in vectors {
            out.push_str(&csv_field(id));
            for x in v.iter() {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
    }
    out.into_bytes()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn from_csv(bytes: &[u8]) -> Result<SpeakerDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Parse {
        location: "line 1".into(),
        message: e.to_string(),
    })?;
    if header.get(0) != Some("speaker_id") {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: "header must start with speaker_id".into(),
        });
    }
    let dim = header.len() - 1;
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::Parse {
                location: "line 1".into(),
                message: format!("expected column f{j}, found {name:?}"),
            });
        }
    }
    if dim == 0 {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: "no feature columns".into(),
        });
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            location: e
                .position()
                .map(|p| format!("line {}", p.line()))
                .unwrap_or_else(|| "unknown line".into()),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len().saturating_sub(1),
                context: format!(" (line {line})"),
            });
        }
        let id = row[0].to_owned();
        if id.is_empty() {
            return Err(Error::Parse {
                location: format!("line {line}"),
                message: "empty speaker id".into(),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for (j, field) in row.iter().skip(1).enumerate() {
            let x: f64 = field.parse().map_err(|_| Error::Parse {
                location: format!("line {line}, column f{j}"),
                message: format!("not a number: {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Validation(format!(
                    "line {line}, column f{j}: non-finite value {field:?}"
                )));
            }
            values.push(x);
        }
        records.push((id, values));
    }
    SpeakerDataset::from_records(dim, records)
}

pub fn to_binary(ds: &SpeakerDataset) -> Vec<u8> {
    let n = ds.n_vectors();
    let mut out = Vec::with_capacity(20 + n * (ds.dim * 8 + 8));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for (id, vectors) in ds.speakers() {
        for v in vectors {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                location: format!("offset {}", self.pos),
                message: format!("truncated input reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_binary(bytes: &[u8]) -> Result<SpeakerDataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != BINARY_MAGIC {
        return Err(Error::Parse {
            location: "offset 0".into(),
            message: "bad magic, expected BIOV".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != BINARY_VERSION {
        return Err(Error::Parse {
            location: "offset 4".into(),
            message: format!("unsupported version {version}"),
        });
    }
    let dim = cur.u32("dimension")? as usize;
    let count = cur.u64("record count")?;
    let mut records = Vec::new();
    for r in 0..count {
        let start = cur.pos;
        let len = cur.u16("speaker id length")? as usize;
        let id = std::str::from_utf8(cur.take(len, "speaker id")?).map_err(|e| Error::Parse {
            location: format!("offset {start} (record {r})"),
            message: format!("speaker id is not UTF-8: {e}"),
        })?;
        let mut values = Vec::with_capacity(dim);
        for j in 0..dim {
            let x = cur.f64("feature value")?;
            if !x.is_finite() {
                return Err(Error::Validation(format!(
                    "record {r} (offset {start}), element {j}: non-finite value {x}"
                )));
            }
            values.push(x);
        }
        records.push((id.to_owned(), values));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            location: format!("offset {}", cur.pos),
            message: "trailing bytes after last record".into(),
        });
    }
    SpeakerDataset::from_records(dim, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n_speakers: usize, per: usize, dim: usize) -> SpeakerDataset {
        let mut records = Vec::new();
        for s in 0..n_speakers {
            for k in 0..per {
                let v = (0..dim).map(|j| (s * 100 + k * 10 + j) as f64 * 0.5).collect();
                records.push((format!("spk{s:03}"), v));
            }
        }
        SpeakerDataset::from_records(dim, records).unwrap()
    }

    #[test]
    fn csv_two_speakers() {
        let text = "speaker_id,f0,f1,f2,f3\n\
                    b,1,2,3,4\na,0,0,0,0\nb,5,6,7,8\na,1,1,1,1\nb,0.5,0,0,0\na,2,2,2,2\n";
        let ds = from_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.n_speakers(), 2);
        assert_eq!(ds.n_vectors(), 6);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.speaker_ids().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(ds.get("b").unwrap()[1].as_slice(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn csv_infinite_value_names_the_row() {
        let text = "speaker_id,f0,f1\na,1,2\na,inf,3\n";
        match from_csv(text.as_bytes()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_row_is_dimension_mismatch() {
        let text = "speaker_id,f0,f1\na,1,2\na,3\n";
        assert!(matches!(
            from_csv(text.as_bytes()),
            Err(Error::DimensionMismatch { .. }) | Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_bad_number_is_parse_error() {
        let text = "speaker_id,f0\na,x1\n";
        match from_csv(text.as_bytes()) {
            Err(Error::Parse { location, .. }) => assert!(location.contains("line 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_header_layout() {
        let ds = toy(1, 1, 2);
        let bytes = to_binary(&ds);
        assert_eq!(&bytes[0..4], b"BIOV");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..22], &6u16.to_le_bytes());
        assert_eq!(&bytes[22..28], b"spk000");
        assert_eq!(bytes.len(), 28 + 16);
    }

    #[test]
    fn binary_truncated_reports_offset() {
        let bytes = to_binary(&toy(2, 2, 3));
        match from_binary(&bytes[..bytes.len() - 3]) {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("offset")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_nan_rejected() {
        let mut bytes = to_binary(&toy(1, 1, 1));
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(from_binary(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn file_round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(3, 2, 4).with_manifest(Some(Manifest {
            source: Some("unit".into()),
            duration_s: Some(5.0),
        }));
        for format in [Format::Csv, Format::Binary] {
            let path = dir.path().join(format!("ds.{format}"));
            save(&ds, &path, format).unwrap();
            let back = load(&path, format).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn split_ten_speakers() {
        let ds = toy(10, 1, 1);
        let (dev, measure) = split_by_speaker(&ds, 0.5, 7).unwrap();
        assert_eq!(dev.n_speakers(), 5);
        assert_eq!(measure.n_speakers(), 5);
        assert!(dev.speaker_ids().all(|id| measure.get(id).is_none()));
        let (dev2, measure2) = split_by_speaker(&ds, 0.5, 7).unwrap();
        assert_eq!(dev, dev2);
        assert_eq!(measure, measure2);
    }

    #[test]
    fn split_rounds_dev_count() {
        let ds = toy(5000, 1, 1);
        let (dev, measure) = split_by_speaker(&ds, 0.24, 1).unwrap();
        assert_eq!(dev.n_speakers(), 1200);
        assert_eq!(measure.n_speakers(), 3800);
    }

    #[test]
    fn split_needs_two_speakers() {
        assert!(matches!(
            split_by_speaker(&toy(1, 3, 2), 0.5, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn subsample_small() {
        let ds = toy(3, 2, 2);
        let sub = subsample(&ds, 2, 1, 3).unwrap();
        assert_eq!(sub.n_speakers(), 2);
        assert!(sub.speakers().all(|(_, v)| v.len() == 1));
        assert_eq!(sub, subsample(&ds, 2, 1, 3).unwrap());
    }

    #[test]
    fn subsample_too_many_samples() {
        let ds = toy(3, 2, 2);
        match subsample(&ds, 1, 3, 0) {
            Err(Error::InsufficientData(msg)) => assert!(msg.contains("only 0 qualify")),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(n in 2usize..40, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let ds = toy(n, 1, 1);
            let (dev, measure) = split_by_speaker(&ds, frac, seed).unwrap();
            let mut all: Vec<&str> = dev.speaker_ids().chain(measure.speaker_ids()).collect();
            all.sort_unstable();
            let orig: Vec<&str> = ds.speaker_ids().collect();
            prop_assert_eq!(all, orig);
        }

        #[test]
        fn binary_and_csv_round_trip(
            rows in proptest::collection::vec(
                ("[a-z]{1,4}", proptest::collection::vec(-1e6f64..1e6, 3)), 1..20)
        ) {
            let ds = SpeakerDataset::from_records(3, rows).unwrap();
            prop_assert_eq!(&from_binary(&to_binary(&ds)).unwrap(), &ds);
            prop_assert_eq!(&from_csv(&to_csv(&ds)).unwrap(), &ds);
        }

        #[test]
        fn subsample_respects_invariants(n in 1usize..6, k in 1usize..4, seed in any::<u64>()) {
            let ds = toy(6, 4, 2);
            let sub = subsample(&ds, n, k, seed).unwrap();
            prop_assert_eq!(sub.n_speakers(), n);
            for (id, vectors) in sub.speakers() {
                prop_assert_eq!(vectors.len(), k);
                let source = ds.get(id).unwrap();
                for v in vectors {
                    prop_assert!(source.contains(v));
                }
            }
        }
    }
}
