//! Photon detection records, the 100 GHz ITU channel plan and tag-stream files.
//!
//! A [`TagStream`] is the unit every measurement consumes: a time-ordered list of
//! `(channel, timestamp_ps)` detections plus the acquisition duration.

mod io;
mod itu;

pub use io::{read_csv, read_stream, write_csv, write_stream, MAGIC, FORMAT_VERSION, HEADER_LEN, RECORD_LEN};
pub use itu::{
    energy_conservation_check, itu_frequency_thz, itu_wavelength_nm, partner_channel, EnergyCheck,
    ItuChannel, DEFAULT_ENERGY_TOLERANCE_THZ, IDLER_CHANNELS, SIGNAL_CHANNELS, SPEED_OF_LIGHT_NM_THZ,
};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// ITU channel number.
pub type ChannelIndex = u16;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("invalid ITU channel {0} (supported range 1..=100)")]
    InvalidChannel(i64),
    #[error("channel {0} is not part of the signal/idler plan")]
    UnsupportedChannel(ChannelIndex),
    #[error("pump wavelength must be positive, got {0}")]
    InvalidPump(f64),
    #[error("bad magic bytes, expected \"VQTT\"")]
    BadMagic,
    #[error("unsupported tag file version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated tag file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("records out of order at index {index}")]
    UnsortedRecords { index: usize },
    #[error("timestamp {timestamp_ps} ps at index {index} outside [0, {duration_ps}]")]
    TimestampOutOfRange {
        index: usize,
        timestamp_ps: i64,
        duration_ps: i64,
    },
    #[error("negative stream duration {0} ps")]
    NegativeDuration(i64),
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("cannot merge streams with different durations ({0} ps vs {1} ps)")]
    DurationMismatch(i64, i64),
    #[error("cannot merge an empty list of streams")]
    NothingToMerge,
    #[error("metadata {path}: {source}")]
    Metadata {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One photon detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagRecord {
    pub channel: ChannelIndex,
    pub timestamp_ps: i64,
}

impl TagRecord {
    pub fn new(channel: ChannelIndex, timestamp_ps: i64) -> Self {
        Self {
            channel,
            timestamp_ps,
        }
    }

    #[inline]
    fn sort_key(&self) -> (i64, ChannelIndex) {
        (self.timestamp_ps, self.channel)
    }
}

impl PartialOrd for TagRecord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TagRecord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

/// Provenance stored next to a tag file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMetadata {
    pub seed: Option<u64>,
    pub config_hash: String,
}

/// Time-ordered detections over `[0, duration_ps]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    records: Vec<TagRecord>,
    duration_ps: i64,
    pub metadata: StreamMetadata,
}

impl TagStream {
    /// Validates ordering (timestamp, then channel) and the time range.
    pub fn new(records: Vec<TagRecord>, duration_ps: i64) -> Result<Self, TagError> {
        if duration_ps < 0 {
            return Err(TagError::NegativeDuration(duration_ps));
        }
        for (index, r) in records.iter().enumerate() {
            if r.timestamp_ps < 0 || r.timestamp_ps > duration_ps {
                return Err(TagError::TimestampOutOfRange {
                    index,
                    timestamp_ps: r.timestamp_ps,
                    duration_ps,
                });
            }
            if index > 0 && records[index - 1] > *r {
                return Err(TagError::UnsortedRecords { index });
            }
        }
        Ok(Self {
            records,
            duration_ps,
            metadata: StreamMetadata::default(),
        })
    }

    /// Sorts `records` first, then validates the range.
    pub fn from_unsorted(mut records: Vec<TagRecord>, duration_ps: i64) -> Result<Self, TagError> {
        records.sort_unstable();
        Self::new(records, duration_ps)
    }

    pub fn empty(duration_ps: i64) -> Self {
        Self {
            records: Vec::new(),
            duration_ps: duration_ps.max(0),
            metadata: StreamMetadata::default(),
        }
    }

    pub fn with_metadata(mut self, metadata: StreamMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn records(&self) -> &[TagRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TagRecord> {
        self.records
    }

    pub fn duration_ps(&self) -> i64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 * 1e-12
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.records.iter().map(|r| r.timestamp_ps)
    }

    /// Adds `offset_ps` to every timestamp and to the duration.
    pub fn shifted(&self, offset_ps: i64) -> Result<Self, TagError> {
        let records = self
            .records
            .iter()
            .map(|r| TagRecord::new(r.channel, r.timestamp_ps + offset_ps))
            .collect();
        let mut out = Self::new(records, self.duration_ps + offset_ps.max(0))?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }
}

/// Merges streams of equal duration into one sorted stream (all detectors feeding one tagger).
pub fn merge_streams(streams: &[TagStream]) -> Result<TagStream, TagError> {
    let first = streams.first().ok_or(TagError::NothingToMerge)?;
    let duration_ps = first.duration_ps;
    if let Some(other) = streams.iter().find(|s| s.duration_ps != duration_ps) {
        return Err(TagError::DurationMismatch(duration_ps, other.duration_ps));
    }
    let total = streams.iter().map(TagStream::len).sum();
    let mut records = Vec::with_capacity(total);
    for s in streams {
        records.extend_from_slice(&s.records);
    }
    records.sort_unstable();
    Ok(TagStream {
        records,
        duration_ps,
        metadata: first.metadata.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(ts: &[(u16, i64)], duration: i64) -> TagStream {
        TagStream::from_unsorted(ts.iter().map(|&(c, t)| TagRecord::new(c, t)).collect(), duration).unwrap()
    }

    #[test]
    fn rejects_out_of_order_and_out_of_range() {
        let recs = vec![TagRecord::new(1, 10), TagRecord::new(1, 5)];
        assert!(matches!(TagStream::new(recs, 20), Err(TagError::UnsortedRecords { index: 1 })));
        let recs = vec![TagRecord::new(1, 30)];
        assert!(matches!(TagStream::new(recs, 20), Err(TagError::TimestampOutOfRange { .. })));
        let recs = vec![TagRecord::new(1, -1)];
        assert!(matches!(TagStream::new(recs, 20), Err(TagError::TimestampOutOfRange { .. })));
    }

    #[test]
    fn ties_break_by_channel() {
        let recs = vec![TagRecord::new(2, 5), TagRecord::new(1, 5)];
        assert!(TagStream::new(recs.clone(), 10).is_err());
        let s = TagStream::from_unsorted(recs, 10).unwrap();
        assert_eq!(s.records()[0].channel, 1);
    }

    #[test]
    fn merge_identity_and_order() {
        let s = stream(&[(23, 4), (23, 9)], 10);
        let empty = TagStream::empty(10);
        assert_eq!(merge_streams(&[s.clone(), empty]).unwrap(), s);

        let a = stream(&[(23, 7)], 10);
        let b = stream(&[(19, 3)], 10);
        let m = merge_streams(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.records(), &[TagRecord::new(19, 3), TagRecord::new(23, 7)]);
        assert_eq!(m, merge_streams(&[b, a]).unwrap());
    }

    #[test]
    fn merge_rejects_mismatched_durations() {
        let a = TagStream::empty(10);
        let b = TagStream::empty(11);
        assert!(matches!(merge_streams(&[a, b]), Err(TagError::DurationMismatch(10, 11))));
        assert!(matches!(merge_streams(&[]), Err(TagError::NothingToMerge)));
    }

    fn arb_stream(duration: i64) -> impl Strategy<Value = TagStream> {
        prop::collection::vec((16u16..27, 0..=duration), 0..60)
            .prop_map(move |v| stream(&v, duration))
    }

    proptest! {
        #[test]
        fn merge_is_sorted_permutation(a in arb_stream(1000), b in arb_stream(1000), c in arb_stream(1000)) {
            let m = merge_streams(&[a.clone(), b.clone(), c.clone()]).unwrap();
            prop_assert_eq!(m.len(), a.len() + b.len() + c.len());
            prop_assert!(m.records().windows(2).all(|w| w[0] <= w[1]));
            let mut expected: Vec<_> = a.records().iter().chain(b.records()).chain(c.records()).copied().collect();
            expected.sort();
            prop_assert_eq!(m.records(), &expected[..]);
            prop_assert_eq!(m, merge_streams(&[c, b, a]).unwrap());
        }
    }
}
