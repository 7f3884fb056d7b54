//! Tag file formats.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! "VQTT" | version: u16 | record count: u48 | count × (channel: u16, timestamp_ps: i64)
//! ```
//!
//! Duration and provenance live in a sibling `<basename>.meta.json`. A CSV form with
//! header `channel,timestamp_ps` is accepted by [`read_stream`] as well.

use super::{StreamMetadata, TagError, TagRecord, TagStream};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"VQTT";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;
pub const RECORD_LEN: usize = 10;
const CSV_HEADER: &str = "channel,timestamp_ps";
const MAX_RECORDS: u64 = (1 << 48) - 1;

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    duration_ps: i64,
    seed: Option<u64>,
    config_hash: String,
}

/// `data/ch26.vqtt` -> `data/ch26.meta.json`
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write_stream(stream: &TagStream, path: &Path) -> Result<(), TagError> {
    let count = stream.len() as u64;
    assert!(count <= MAX_RECORDS, "record count exceeds 48-bit header field");
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes()[..6])?;
    for r in stream.records() {
        w.write_all(&r.channel.to_le_bytes())?;
        w.write_all(&r.timestamp_ps.to_le_bytes())?;
    }
    w.flush()?;
    write_meta(stream, path)
}

fn write_meta(stream: &TagStream, path: &Path) -> Result<(), TagError> {
    let meta = MetaFile {
        duration_ps: stream.duration_ps(),
        seed: stream.metadata.seed,
        config_hash: stream.metadata.config_hash.clone(),
    };
    let mpath = meta_path(path);
    let json = serde_json::to_vec_pretty(&meta).map_err(|source| TagError::Metadata {
        path: mpath.clone(),
        source,
    })?;
    std::fs::write(&mpath, json)?;
    Ok(())
}

pub fn write_csv(stream: &TagStream, path: &Path) -> Result<(), TagError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for r in stream.records() {
        writeln!(w, "{},{}", r.channel, r.timestamp_ps)?;
    }
    w.flush()?;
    write_meta(stream, path)
}

/// Reads a binary tag file, or CSV when the extension is `.csv`.
pub fn read_stream(path: &Path) -> Result<TagStream, TagError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return read_csv(path);
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let records = decode_binary(&bytes)?;
    finish(records, path)
}

pub fn read_csv(path: &Path) -> Result<TagStream, TagError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != CSV_HEADER {
                return Err(TagError::MalformedCsv {
                    line: 1,
                    reason: format!("expected header {CSV_HEADER:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| TagError::MalformedCsv {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (c, t) = line.split_once(',').ok_or_else(|| bad("expected two fields"))?;
        let channel = c.trim().parse().map_err(|_| bad("bad channel"))?;
        let timestamp_ps = t.trim().parse().map_err(|_| bad("bad timestamp"))?;
        records.push(TagRecord::new(channel, timestamp_ps));
    }
    if records.is_empty() && std::fs::metadata(path)?.len() == 0 {
        return Err(TagError::MalformedCsv {
            line: 1,
            reason: "empty file".into(),
        });
    }
    finish(records, path)
}

fn decode_binary(bytes: &[u8]) -> Result<Vec<TagRecord>, TagError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(TagError::BadMagic);
        }
        return Err(TagError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(TagError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(TagError::UnsupportedVersion(version));
    }
    let mut count_bytes = [0u8; 8];
    count_bytes[..6].copy_from_slice(&bytes[6..12]);
    let count = u64::from_le_bytes(count_bytes);
    let expected = HEADER_LEN as u64 + count * RECORD_LEN as u64;
    if bytes.len() as u64 != expected {
        return Err(TagError::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes[HEADER_LEN..]
        .chunks_exact(RECORD_LEN)
        .map(|chunk| {
            let channel = u16::from_le_bytes([chunk[0], chunk[1]]);
            let mut ts = [0u8; 8];
            ts.copy_from_slice(&chunk[2..]);
            TagRecord::new(channel, i64::from_le_bytes(ts))
        })
        .collect())
}

fn finish(records: Vec<TagRecord>, path: &Path) -> Result<TagStream, TagError> {
    if let Some(index) = records.windows(2).position(|w| w[0] > w[1]) {
        return Err(TagError::UnsortedRecords { index: index + 1 });
    }
    let mpath = meta_path(path);
    let (duration_ps, metadata) = if mpath.exists() {
        let meta: MetaFile = serde_json::from_slice(&std::fs::read(&mpath)?)
            .map_err(|source| TagError::Metadata { path: mpath, source })?;
        (
            meta.duration_ps,
            StreamMetadata {
                seed: meta.seed,
                config_hash: meta.config_hash,
            },
        )
    } else {
        let last = records.last().map_or(0, |r| r.timestamp_ps);
        (last, StreamMetadata::default())
    };
    Ok(TagStream::new(records, duration_ps)?.with_metadata(metadata))
}
