//! Labeled reference index of unit-normalized embeddings and its single-file
//! binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "RSSI" | version u16 | dim u32 | count u64
//! label block: label_count u32, then per label (len u32, UTF-8 bytes),
//!              then count × label ordinal u32
//! vectors:     count × dim f32
//! sources:     count × (len u32, UTF-8 bytes); len 0xFFFF_FFFF = absent
//! crc32 u32 of all preceding bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RSSI";
pub const VERSION: u16 = 1;
/// Norms below this are rejected as zero vectors.
pub const MIN_NORM: f64 = 1e-12;
const NO_SOURCE: u32 = u32::MAX;

/// Borrowed view of one stored record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRef<'a> {
    pub id: usize,
    pub label: &'a str,
    pub vector: &'a [f32],
    pub source: Option<&'a str>,
}

/// Per-label counts and dimension.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct IndexStats {
    pub dim: usize,
    pub count: usize,
    pub per_label: BTreeMap<String, usize>,
}

/// Append-only collection of labeled unit vectors; ids are insertion ordinals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceIndex {
    /// 0 until the first add fixes it (unless constructed with a dim).
    dim: usize,
    vectors: Vec<f32>,
    labels: Vec<String>,
    label_counts: Vec<usize>,
    record_labels: Vec<u32>,
    sources: Vec<Option<String>>,
}

/// Euclidean norm accumulated in f64.
pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Returns `v / ‖v‖` rounded to f32, validating finiteness and non-zero norm.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = norm(v);
    if !(n >= MIN_NORM) || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

impl ReferenceIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    /// Embedding size, or 0 for an index that has not been given one yet.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.record_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_labels.is_empty()
    }

    /// Normalizes and appends `embedding`, returning its id.
    pub fn add(&mut self, embedding: &[f32], label: &str, source: Option<&str>) -> Result<usize> {
        if label.is_empty() {
            return Err(Error::EmptyLabel);
        }
        if self.dim != 0 && embedding.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, actual: embedding.len() });
        }
        if embedding.is_empty() {
            return Err(Error::ZeroVector);
        }
        let unit = normalize(embedding)?;
        self.dim = embedding.len();
        let ordinal = match self.labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                self.labels.push(label.to_owned());
                self.label_counts.push(0);
                self.labels.len() - 1
            }
        };
        self.label_counts[ordinal] += 1;
        self.record_labels.push(ordinal as u32);
        self.vectors.extend_from_slice(&unit);
        self.sources.push(source.map(str::to_owned));
        Ok(self.len() - 1)
    }

    pub fn record(&self, id: usize) -> RecordRef<'_> {
        RecordRef {
            id,
            label: &self.labels[self.record_labels[id] as usize],
            vector: self.vector(id),
            source: self.sources[id].as_deref(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = RecordRef<'_>> + '_ {
        (0..self.len()).map(|id| self.record(id))
    }

    #[inline]
    pub fn vector(&self, id: usize) -> &[f32] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    #[inline]
    pub fn label_of(&self, id: usize) -> &str {
        &self.labels[self.record_labels[id] as usize]
    }

    /// Row-major `len × dim` matrix of all stored vectors.
    pub fn matrix(&self) -> &[f32] {
        &self.vectors
    }

    /// Distinct labels in order of first insertion, with counts.
    pub fn label_table(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.labels.iter().map(String::as_str).zip(self.label_counts.iter().copied())
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            dim: self.dim,
            count: self.len(),
            per_label: self.label_table().map(|(l, c)| (l.to_owned(), c)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.vectors.len() * 4 + self.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        for label in &self.labels {
            out.extend_from_slice(&(label.len() as u32).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
        }
        for ordinal in &self.record_labels {
            out.extend_from_slice(&ordinal.to_le_bytes());
        }
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for source in &self.sources {
            match source {
                Some(s) => {
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                None => out.extend_from_slice(&NO_SOURCE.to_le_bytes()),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = r.u32()? as usize;
        let count = usize::try_from(r.u64()?).map_err(|_| Error::Truncated)?;
        let label_count = r.u32()? as usize;
        let mut labels = Vec::new();
        for _ in 0..label_count {
            labels.push(r.string()?);
        }
        r.ensure(count.checked_mul(4).ok_or(Error::Truncated)?)?;
        let record_labels: Vec<u32> = (0..count).map(|_| r.u32()).collect::<Result<_>>()?;
        let floats = count.checked_mul(dim).ok_or(Error::Truncated)?;
        let raw = r.take(floats.checked_mul(4).ok_or(Error::Truncated)?)?;
        let vectors: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut sources = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let len = r.u32()?;
            sources.push(if len == NO_SOURCE { None } else { Some(r.utf8(len as usize)?) });
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let mut label_counts = vec![0usize; labels.len()];
        for &ordinal in &record_labels {
            let slot = label_counts
                .get_mut(ordinal as usize)
                .ok_or_else(|| Error::Corrupt(format!("label ordinal {ordinal} out of range")))?;
            *slot += 1;
        }
        if labels.iter().any(String::is_empty) {
            return Err(Error::Corrupt("empty label".into()));
        }
        if count > 0 && dim == 0 {
            return Err(Error::Corrupt("records with zero dimension".into()));
        }
        Ok(Self { dim, vectors, labels, label_counts, record_labels, sources })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn ensure(&self, n: usize) -> Result<()> {
        if self.bytes.len() - self.pos < n {
            Err(Error::Truncated)
        } else {
            Ok(())
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.ensure(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, len: usize) -> Result<String> {
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8 string".into()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        self.utf8(len)
    }
}
