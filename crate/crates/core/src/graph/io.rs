//! Line-delimited JSON formats for edges (`*.cg.jsonl`) and sources
//! (`*.src.jsonl`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CallGraph, EntryPattern, Label, SourceMap};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct EdgeLine<'a> {
    #[serde(borrow)]
    caller: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    callee: std::borrow::Cow<'a, str>,
    offset: u64,
    #[serde(default)]
    label: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct SourceLine<'a> {
    #[serde(borrow)]
    sig: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    code: std::borrow::Cow<'a, str>,
}

/// `foo.cg.jsonl` -> `foo`; other names fall back to the file stem.
pub fn program_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in [".cg.jsonl", ".src.jsonl", ".feat.jsonl", ".emb"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_owned();
        }
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(name)
}

pub fn load_callgraph(path: impl AsRef<Path>) -> Result<CallGraph> {
    load_callgraph_with(path, &EntryPattern::default())
}

pub fn load_callgraph_with(path: impl AsRef<Path>, entry: &EntryPattern) -> Result<CallGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_callgraph(program_id_from_path(path), file, entry)
}

pub fn parse_callgraph(
    program_id: impl Into<String>,
    reader: impl Read,
    entry: &EntryPattern,
) -> Result<CallGraph> {
    let mut builder = CallGraph::builder(program_id).entry_pattern(entry.clone());
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EdgeLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = Label::from_code(rec.label).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("label must be 0, 1 or null, got {:?}", rec.label),
        })?;
        let inserted = builder
            .add_edge(&rec.caller, &rec.callee, rec.offset, label)
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if !inserted {
            return Err(Error::DuplicateEdge {
                line: line_no,
                caller: rec.caller.into_owned(),
                callee: rec.callee.into_owned(),
                offset: rec.offset,
            });
        }
    }
    Ok(builder.build())
}

pub fn write_callgraph(g: &CallGraph, mut out: impl Write) -> std::io::Result<()> {
    for e in g.edges() {
        let rec = EdgeLine {
            caller: g.sig(e.caller).as_str().into(),
            callee: g.sig(e.callee).as_str().into(),
            offset: e.offset,
            label: e.label.code(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes the edge list. Nodes without edges are not representable in the
/// format and are dropped.
pub fn save_callgraph(g: &CallGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_callgraph(g, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_sources(path: impl AsRef<Path>) -> Result<SourceMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sources(file)
}

pub fn parse_sources(reader: impl Read) -> Result<SourceMap> {
    let mut map = SourceMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SourceLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        map.insert(rec.sig.into_owned(), rec.code.into_owned());
    }
    Ok(map)
}

pub fn write_sources(sources: &SourceMap, mut out: impl Write) -> std::io::Result<()> {
    for (sig, code) in sources.iter() {
        serde_json::to_writer(
            &mut out,
            &SourceLine {
                sig: sig.into(),
                code: code.into(),
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_sources(sources: &SourceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_sources(sources, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
