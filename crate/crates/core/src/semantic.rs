//! Per-edge semantic vectors.
//!
//! Two providers sit behind [`SemProvider`]: [`EmbeddingFileProvider`] reads
//! precomputed transformer embeddings from a `CGEMBED1` file, and
//! [`HashEncoder`] builds a bag-of-tokens vector from the caller and callee
//! source text directly.
//!
//! `CGEMBED1` layout, all integers little-endian:
//!
//! ```text
//! magic  [u8; 8] = b"CGEMBED1"
//! dim    u32
//! count  u64
//! data   [f32; count * dim]   row-major by edge ordinal
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::error::{Error, Result};
use crate::graph::{CallGraph, SourceMap};

pub const EMBED_MAGIC: &[u8; 8] = b"CGEMBED1";
const HEADER_LEN: usize = 8 + 4 + 8;

/// Dimension of transformer embeddings produced by the exporter.
pub const TRANSFORMER_DIM: usize = 768;
pub const DEFAULT_HASH_DIM: usize = 256;
/// Seed of the token hash. Changing it changes every hash-encoded corpus.
pub const HASH_SEED: u64 = 0x6367_7072_756e_6531;

pub type SemVector = Vec<f64>;

/// Which side of an edge's source pair feeds the semantic vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceMode {
    #[default]
    Both,
    CallerOnly,
    CalleeOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Format(format!("invalid embedding dimension {dim}")));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} values do not divide into rows of {dim}",
                data.len()
            )));
        }
        Ok(EmbeddingStore { dim, data })
    }

    /// Narrows 64-bit rows to the 32-bit file representation.
    pub fn from_rows(dim: usize, rows: &[SemVector]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::at_edge(
                    i,
                    Error::Shape {
                        expected: dim,
                        got: row.len(),
                        context: "embedding row",
                    },
                ));
            }
            data.extend(row.iter().map(|&x| x as f32));
        }
        Self::new(dim, data)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, ordinal: usize) -> Option<&[f32]> {
        let start = ordinal.checked_mul(self.dim)?;
        self.data.get(start..start + self.dim)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(EMBED_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.count() as u64).to_le_bytes())?;
        for x in &self.data {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_from(mut input: impl Read, expected_count: usize) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match input.read(&mut header[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::Format(e.to_string())),
            }
        }
        if got < EMBED_MAGIC.len() || &header[..8] != EMBED_MAGIC {
            return Err(Error::Format("missing CGEMBED1 magic".into()));
        }
        if got < HEADER_LEN {
            return Err(Error::Format("truncated CGEMBED1 header".into()));
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("embedding dimension is 0".into()));
        }
        if count != expected_count as u64 {
            return Err(Error::Alignment(format!(
                "embedding file has {count} rows, graph has {expected_count} edges"
            )));
        }
        let expected = count * dim as u64 * 4;
        let mut payload = Vec::new();
        input
            .read_to_end(&mut payload)
            .map_err(|e| Error::Format(e.to_string()))?;
        if payload.len() as u64 != expected {
            return Err(Error::Length {
                expected,
                found: payload.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(dim, data)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_count: usize) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::read_from(BufReader::new(file), expected_count)
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    store
        .write_to(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

pub trait SemProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Must be deterministic in its arguments.
    fn vector_for(
        &self,
        ordinal: usize,
        caller_src: Option<&str>,
        callee_src: Option<&str>,
    ) -> Result<SemVector>;
}

/// Serves rows of a loaded embedding file by edge ordinal. Source text is
/// ignored; caller/callee ablations are applied when the file is exported.
pub struct EmbeddingFileProvider {
    store: EmbeddingStore,
}

impl EmbeddingFileProvider {
    pub fn new(store: EmbeddingStore) -> Self {
        EmbeddingFileProvider { store }
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }
}

impl SemProvider for EmbeddingFileProvider {
    fn dimension(&self) -> usize {
        self.store.dimension()
    }

    fn vector_for(&self, ordinal: usize, _: Option<&str>, _: Option<&str>) -> Result<SemVector> {
        let row = self.store.row(ordinal).ok_or(Error::Index {
            index: ordinal,
            len: self.store.count(),
        })?;
        Ok(row.iter().map(|&x| f64::from(x)).collect())
    }
}

/// Splits on non-alphanumeric characters and camelCase transitions, then
/// lowercases. `parseHTTPHeader2x` -> `parse`, `http`, `header2x`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let lower_to_upper = cur.is_uppercase() && (prev.is_lowercase() || prev.is_numeric());
            let acronym_end = cur.is_uppercase()
                && prev.is_uppercase()
                && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if lower_to_upper || acronym_end {
                tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            tokens.push(chars[start..].iter().collect::<String>().to_lowercase());
        }
    }
    tokens
}

/// Token-count histogram in `buckets` bins, L2-normalized. Empty or absent
/// text yields all zeros.
fn hashed_histogram(text: Option<&str>, buckets: usize) -> Vec<f64> {
    let mut hist = vec![0.0; buckets];
    let Some(text) = text else {
        return hist;
    };
    for tok in tokenize(text) {
        let h = XxHash64::oneshot(HASH_SEED, tok.as_bytes());
        hist[(h % buckets as u64) as usize] += 1.0;
    }
    let norm = hist.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        hist.iter_mut().for_each(|x| *x /= norm);
    }
    hist
}

/// Caller tokens fill the first half of the vector, callee tokens the second.
pub fn hash_encode(caller_src: Option<&str>, callee_src: Option<&str>, dim: usize) -> Result<SemVector> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "hash dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut v = hashed_histogram(caller_src, half);
    v.extend(hashed_histogram(callee_src, half));
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    mode: SourceMode,
}

impl HashEncoder {
    pub fn new(dim: usize, mode: SourceMode) -> Result<Self> {
        hash_encode(None, None, dim)?;
        Ok(HashEncoder { dim, mode })
    }

    pub fn mode(&self) -> SourceMode {
        self.mode
    }
}

impl SemProvider for HashEncoder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn vector_for(&self, _: usize, caller_src: Option<&str>, callee_src: Option<&str>) -> Result<SemVector> {
        let (caller, callee) = match self.mode {
            SourceMode::Both => (caller_src, callee_src),
            SourceMode::CallerOnly => (caller_src, None),
            SourceMode::CalleeOnly => (None, callee_src),
        };
        hash_encode(caller, callee, self.dim)
    }
}

/// One semantic vector per edge, in edge order.
pub fn semantic_matrix(
    g: &CallGraph,
    provider: &dyn SemProvider,
    sources: &SourceMap,
) -> Result<Vec<SemVector>> {
    let dim = provider.dimension();
    g.edges()
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let caller = sources.get(g.sig(e.caller).as_str());
            let callee = sources.get(g.sig(e.callee).as_str());
            let v = provider
                .vector_for(i, caller, callee)
                .map_err(|err| Error::at_edge(i, err))?;
            if v.len() != dim {
                return Err(Error::at_edge(
                    i,
                    Error::Shape {
                        expected: dim,
                        got: v.len(),
                        context: "semantic vector",
                    },
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::at_edge(i, Error::Numeric("non-finite semantic value".into())));
            }
            Ok(v)
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
