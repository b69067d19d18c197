//! Binary container for per-day sentence-embedding stacks.
//!
//! Layout (little-endian): `"PBEM"`, `u32` version, `u32` dim, `u32` max_slices,
//! `u32` n_days, then per day a `u16`-length-prefixed ISO date, a `u32` slice
//! count and `n_slices × dim` `f32` values in row-major order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::DATE_FORMAT;

pub const MAGIC: &[u8; 4] = b"PBEM";
pub const FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_DIM: usize = 768;
pub const DEFAULT_MAX_SLICES: usize = 362;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("format error: {0}")]
    Format(String),
    #[error("embedding dimension {got} does not match expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("corrupt embedding file at byte {offset}: {message}")]
    Corruption { offset: usize, message: String },
    #[error("{date}: {n_slices} slices exceed the maximum of {max_slices}")]
    Overflow {
        date: NaiveDate,
        n_slices: usize,
        max_slices: usize,
    },
    #[error("invalid stack: {0}")]
    Validation(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingFileHeader {
    pub version: u32,
    pub dim: usize,
    pub max_slices: usize,
}

impl Default for EmbeddingFileHeader {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            dim: EMBEDDING_DIM,
            max_slices: DEFAULT_MAX_SLICES,
        }
    }
}

/// Embeddings of one day's text slices, `n_slices × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStack {
    pub date: NaiveDate,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl EmbeddingStack {
    pub fn new(date: NaiveDate, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(EmbeddingError::Validation(format!(
                "{date}: {} values do not form whole rows of width {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Validation(format!(
                "{date}: non-finite embedding value"
            )));
        }
        Ok(Self { date, dim, values })
    }

    pub fn n_slices(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub header: EmbeddingFileHeader,
    /// Sorted by date, one per day.
    pub stacks: Vec<EmbeddingStack>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(EmbeddingError::Corruption {
                offset: self.pos,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a whole embedding file held in memory. `expected_dim` defaults to 768.
pub fn parse_embeddings(bytes: &[u8], expected_dim: Option<usize>) -> Result<EmbeddingFile> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(EmbeddingError::Format("bad magic".into()));
        }
        return Err(EmbeddingError::Corruption {
            offset: bytes.len(),
            message: "truncated header".into(),
        });
    }
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let dim = cur.u32("dim")? as usize;
    let expected = expected_dim.unwrap_or(EMBEDDING_DIM);
    if dim != expected {
        return Err(EmbeddingError::Dimension { expected, got: dim });
    }
    let max_slices = cur.u32("max_slices")? as usize;
    let n_days = cur.u32("n_days")? as usize;

    let mut by_date = BTreeMap::new();
    for _ in 0..n_days {
        let record_start = cur.pos;
        let len = cur.u16("date length")? as usize;
        let raw = cur.take(len, "date")?;
        let text = std::str::from_utf8(raw).map_err(|_| EmbeddingError::Corruption {
            offset: record_start + 2,
            message: "date is not UTF-8".into(),
        })?;
        let date = NaiveDate::parse_from_str(text, DATE_FORMAT).map_err(|e| EmbeddingError::Corruption {
            offset: record_start + 2,
            message: format!("bad date `{text}`: {e}"),
        })?;
        let n_slices = cur.u32("slice count")? as usize;
        if n_slices == 0 {
            return Err(EmbeddingError::Format(format!("{date}: zero slices")));
        }
        if n_slices > max_slices {
            return Err(EmbeddingError::Overflow {
                date,
                n_slices,
                max_slices,
            });
        }
        let body_start = cur.pos;
        let raw = cur.take(n_slices * dim * 4, "embedding values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::Corruption {
                offset: body_start + 4 * i,
                message: format!("{date}: non-finite value"),
            });
        }
        if by_date.insert(date, EmbeddingStack { date, dim, values }).is_some() {
            return Err(EmbeddingError::Format(format!("duplicate date {date}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(EmbeddingError::Corruption {
            offset: cur.pos,
            message: format!("{} trailing bytes after {n_days} declared days", bytes.len() - cur.pos),
        });
    }
    Ok(EmbeddingFile {
        header: EmbeddingFileHeader {
            version,
            dim,
            max_slices,
        },
        stacks: by_date.into_values().collect(),
    })
}

pub fn read_embedding_file(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingFile> {
    let bytes = std::fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_embeddings(&bytes, expected_dim)
}

pub fn encode_embeddings(header: &EmbeddingFileHeader, stacks: &[EmbeddingStack]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + stacks.iter().map(|s| 16 + 4 * s.values.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    for v in [header.dim, header.max_slices, stacks.len()] {
        let v = u32::try_from(v).map_err(|_| EmbeddingError::Format(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in stacks {
        if s.dim != header.dim {
            return Err(EmbeddingError::Dimension {
                expected: header.dim,
                got: s.dim,
            });
        }
        if s.n_slices() > header.max_slices {
            return Err(EmbeddingError::Overflow {
                date: s.date,
                n_slices: s.n_slices(),
                max_slices: header.max_slices,
            });
        }
        let date = s.date.format(DATE_FORMAT).to_string();
        out.extend_from_slice(&(date.len() as u16).to_le_bytes());
        out.extend_from_slice(date.as_bytes());
        out.extend_from_slice(&(s.n_slices() as u32).to_le_bytes());
        for v in &s.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_embedding_file(path: &Path, header: &EmbeddingFileHeader, stacks: &[EmbeddingStack]) -> Result<()> {
    let bytes = encode_embeddings(header, stacks)?;
    let io_err = |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)
}

/// `max_slices × dim` matrix: the stack's rows followed by zero rows.
pub fn pad_stack(stack: &EmbeddingStack, max_slices: usize) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; max_slices * stack.dim];
    pad_stack_into(stack, max_slices, &mut out)?;
    Ok(out)
}

/// As [`pad_stack`], writing into a caller-provided buffer of `max_slices × dim`.
pub fn pad_stack_into(stack: &EmbeddingStack, max_slices: usize, out: &mut [f32]) -> Result<()> {
    if stack.n_slices() > max_slices {
        return Err(EmbeddingError::Overflow {
            date: stack.date,
            n_slices: stack.n_slices(),
            max_slices,
        });
    }
    if out.len() != max_slices * stack.dim {
        return Err(EmbeddingError::Validation(format!(
            "output buffer holds {} values, expected {}",
            out.len(),
            max_slices * stack.dim
        )));
    }
    out[..stack.values.len()].copy_from_slice(&stack.values);
    out[stack.values.len()..].fill(0.0);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub date: NaiveDate,
    /// Index into the stack slice passed to [`align_with_labels`].
    pub stack_index: usize,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JoinReport {
    pub joined: usize,
    pub stacks_without_label: Vec<NaiveDate>,
    pub labels_without_stack: Vec<NaiveDate>,
}

impl JoinReport {
    pub fn dropped(&self) -> usize {
        self.stacks_without_label.len() + self.labels_without_stack.len()
    }
}

/// Inner join of stacks and `(date, label)` pairs on date, sorted by date.
pub fn align_with_labels(
    stacks: &[EmbeddingStack],
    labels: &[(NaiveDate, bool)],
) -> Result<(Vec<AlignedSample>, JoinReport)> {
    let label_map: BTreeMap<NaiveDate, bool> = labels.iter().copied().collect();
    let stack_map: BTreeMap<NaiveDate, usize> = stacks.iter().enumerate().map(|(i, s)| (s.date, i)).collect();
    let mut samples = Vec::new();
    let mut report = JoinReport::default();
    for (&date, &stack_index) in &stack_map {
        match label_map.get(&date) {
            Some(&label) => samples.push(AlignedSample {
                date,
                stack_index,
                label,
            }),
            None => report.stacks_without_label.push(date),
        }
    }
    report.labels_without_stack = label_map
        .keys()
        .filter(|d| !stack_map.contains_key(d))
        .copied()
        .collect();
    report.joined = samples.len();
    if samples.is_empty() {
        return Err(EmbeddingError::Alignment(
            "no date has both an embedding stack and a label".into(),
        ));
    }
    Ok((samples, report))
}
