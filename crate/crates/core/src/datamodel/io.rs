//! `manifest.jsonl` and the `vectors.bin` sidecar.
//!
//! Every manifest line is a JSON object discriminated by `kind`:
//!
//! ```text
//! {"kind":"header","schema_version":1,"embedding_dim":256,"vectors":"vectors.bin"}
//! {"kind":"tracklet","tracklet_id":"t0","video_id":"v0",...}
//! {"kind":"record","record_id":0,"tracklet_id":"t0","frame_index":12}
//! ```
//!
//! When the header names a sidecar, row `i` of the sidecar belongs to the
//! `i`-th record line; otherwise each record carries an inline `vector`.
//! The sidecar is little-endian: magic `TLV1`, `u32` dimension, `u64` row
//! count, then `count * dim` f32 values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_manifest, EmbeddingRecord, Manifest, TrackletMeta, ViolationKind, SCHEMA_VERSION};
use crate::vecmath::ingest_unit;
use crate::{Error, Result};

pub const VECTORS_MAGIC: &[u8; 4] = b"TLV1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VectorStorage {
    Inline,
    /// Sidecar file name, resolved relative to the manifest's directory.
    Sidecar(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(HeaderLine),
    Tracklet(TrackletMeta),
    Record(RecordLine),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema_version: u32,
    embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vectors: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    record_id: u64,
    tracklet_id: String,
    frame_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crop_size: Option<(u32, u32)>,
}

/// Loads, normalises and validates a manifest.
///
/// Records come back sorted by `(tracklet_id, frame_index)` with unit-length
/// vectors.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let m = read_manifest_unvalidated(path)?;
    check_structure(m)
}

/// Parses and normalises a manifest without the cross-record invariant checks,
/// so that [`validate_manifest`] can list every violation.
pub fn read_manifest_unvalidated(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut header: Option<HeaderLine> = None;
    let mut tracklets = Vec::new();
    let mut lines: Vec<(usize, RecordLine)> = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line_no = no + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Header(h) => {
                if header.is_some() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: "second header line".into(),
                    });
                }
                header = Some(h);
            }
            Line::Tracklet(t) => tracklets.push(t),
            Line::Record(r) => lines.push((line_no, r)),
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "missing header line".into(),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidManifest(format!(
            "unsupported schema_version {}",
            header.schema_version
        )));
    }
    let dim = header.embedding_dim;
    if dim == 0 {
        return Err(Error::InvalidManifest("embedding_dim must be positive".into()));
    }

    let sidecar = match &header.vectors {
        Some(name) => {
            let p = sidecar_path(path, name);
            let (d, rows) = read_vectors(&p)?;
            if d != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d,
                });
            }
            if rows.len() != lines.len() {
                return Err(Error::InvalidManifest(format!(
                    "sidecar has {} rows for {} records",
                    rows.len(),
                    lines.len()
                )));
            }
            Some(rows)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(lines.len());
    let mut rows = sidecar.map(|r| r.into_iter());
    for (line_no, r) in lines {
        let raw: Vec<f32> = match (&mut rows, r.vector) {
            (Some(it), None) => it.next().expect("row count checked"),
            (None, Some(v)) => v,
            (Some(_), Some(_)) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "inline vector while a sidecar is declared".into(),
                })
            }
            (None, None) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "record has no vector".into(),
                })
            }
        };
        if raw.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: raw.len(),
            });
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: format!("record {}", r.record_id),
            });
        }
        let mut vector: Vec<f64> = raw.into_iter().map(f64::from).collect();
        ingest_unit(&mut vector)?;
        records.push(EmbeddingRecord {
            record_id: r.record_id,
            tracklet_id: r.tracklet_id,
            frame_index: r.frame_index,
            vector,
            confidence: r.confidence,
            crop_size: r.crop_size,
        });
    }

    let mut m = Manifest {
        schema_version: header.schema_version,
        embedding_dim: dim,
        records,
        tracklets,
    };
    m.sort_records();
    Ok(m)
}

/// Surfaces the first structural violation as a typed error.
fn check_structure(m: Manifest) -> Result<Manifest> {
    let report = validate_manifest(&m, None);
    if let Some(v) = report.violations.first() {
        return Err(match v.kind {
            ViolationKind::MissingTracklet => {
                let r = m
                    .records
                    .iter()
                    .find(|r| m.tracklet(&r.tracklet_id).is_none())
                    .expect("violation implies a dangling record");
                Error::MissingTracklet {
                    record_id: r.record_id,
                    tracklet_id: r.tracklet_id.clone(),
                }
            }
            ViolationKind::DuplicateKey | ViolationKind::DuplicateRecordId | ViolationKind::DuplicateTracklet => {
                Error::DuplicateKey(v.detail.clone())
            }
            _ => Error::InvalidManifest(v.detail.clone()),
        });
    }
    Ok(m)
}

/// Writes `m` as JSONL, with vectors inline or in a sidecar next to `path`.
pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>, storage: &VectorStorage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let sidecar_name = match storage {
        VectorStorage::Inline => None,
        VectorStorage::Sidecar(name) => Some(name.clone()),
    };
    let mut emit = |line: &Line| -> Result<()> {
        let s = serde_json::to_string(line).expect("manifest lines always serialise");
        writeln!(&mut w, "{s}").map_err(|e| Error::io(path, e))
    };
    emit(&Line::Header(HeaderLine {
        schema_version: m.schema_version,
        embedding_dim: m.embedding_dim,
        vectors: sidecar_name.clone(),
    }))?;
    for t in &m.tracklets {
        emit(&Line::Tracklet(t.clone()))?;
    }
    for r in &m.records {
        emit(&Line::Record(RecordLine {
            record_id: r.record_id,
            tracklet_id: r.tracklet_id.clone(),
            frame_index: r.frame_index,
            vector: sidecar_name
                .is_none()
                .then(|| r.vector.iter().map(|&x| x as f32).collect()),
            confidence: r.confidence,
            crop_size: r.crop_size,
        }))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    if let Some(name) = sidecar_name {
        let rows: Vec<&[f64]> = m.records.iter().map(|r| r.vector.as_slice()).collect();
        write_vectors(sidecar_path(path, &name), m.embedding_dim, &rows)?;
    }
    Ok(())
}

fn sidecar_path(manifest: &Path, name: &str) -> PathBuf {
    manifest
        .parent()
        .map(|d| d.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}

/// Writes a `TLV1` vector file; values are narrowed to f32.
pub fn write_vectors(path: impl AsRef<Path>, dim: usize, rows: &[&[f64]]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(VECTORS_MAGIC).map_err(io)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(rows.len() as u64).to_le_bytes()).map_err(io)?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        for &x in row.iter() {
            w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a `TLV1` vector file into `(dim, rows)`.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<(usize, Vec<Vec<f32>>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != VECTORS_MAGIC {
        return Err(bad("not a TLV1 vector file"));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if dim == 0 || body.len() != dim * count * 4 {
        return Err(bad("body length does not match header"));
    }
    let rows = body
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((dim, rows))
}
