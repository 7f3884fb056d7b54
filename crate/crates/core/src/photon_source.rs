//! Stochastic stand-in for the pair source, DWDM filters and detectors.
//!
//! Each configured pair emits detectable pairs as a homogeneous Poisson process. An
//! emission produces one tag on the signal channel and one on the idler channel, each
//! with independent Gaussian timing jitter. Uncorrelated singles (dark counts, broken
//! pairs, stray light) are added per channel as independent Poisson processes.

use crate::tagcore::{partner_channel, ChannelIndex, StreamMetadata, TagError, TagRecord, TagStream};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Six detectors, so three pairs at a time.
pub const MAX_ACTIVE_PAIRS: usize = 3;
pub const DEFAULT_JITTER_PS: f64 = 30.0;
/// Singles rate per channel targeted by [`testbed_preset`].
pub const TESTBED_SINGLES_HZ: f64 = 265_000.0;

const PS_PER_S: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("duration must be positive and finite, got {0} s")]
    InvalidDuration(f64),
    #[error("{0} pairs configured, at most {MAX_ACTIVE_PAIRS} can be detected concurrently")]
    TooManyPairs(usize),
    #[error("channels {signal} and {idler} are not a signal/idler pair")]
    NotAPair { signal: ChannelIndex, idler: ChannelIndex },
    #[error("{field} must be finite and non-negative, got {value}")]
    InvalidRate { field: &'static str, value: f64 },
    #[error("channel {0} used by more than one pair")]
    ChannelReuse(ChannelIndex),
    #[error("pair index {0} out of range")]
    NoSuchPair(usize),
    #[error(transparent)]
    Tag(#[from] TagError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub signal: ChannelIndex,
    pub idler: ChannelIndex,
    /// Pairs per second for which both photons are detected.
    pub detected_pair_rate_hz: f64,
    pub background_signal_hz: f64,
    pub background_idler_hz: f64,
    #[serde(default = "default_jitter")]
    pub jitter_sigma_ps: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER_PS
}

impl PairConfig {
    pub fn singles_signal_hz(&self) -> f64 {
        self.detected_pair_rate_hz + self.background_signal_hz
    }

    pub fn singles_idler_hz(&self) -> f64 {
        self.detected_pair_rate_hz + self.background_idler_hz
    }

    fn validate(&self) -> Result<(), SourceError> {
        if partner_channel(self.signal).ok() != Some(self.idler) {
            return Err(SourceError::NotAPair {
                signal: self.signal,
                idler: self.idler,
            });
        }
        for (field, value) in [
            ("detected_pair_rate_hz", self.detected_pair_rate_hz),
            ("background_signal_hz", self.background_signal_hz),
            ("background_idler_hz", self.background_idler_hz),
            ("jitter_sigma_ps", self.jitter_sigma_ps),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SourceError::InvalidRate { field, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub duration_s: f64,
    pub pairs: Vec<PairConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), SourceError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SourceError::InvalidDuration(self.duration_s));
        }
        if self.pairs.len() > MAX_ACTIVE_PAIRS {
            return Err(SourceError::TooManyPairs(self.pairs.len()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.pairs {
            p.validate()?;
            for ch in [p.signal, p.idler] {
                if !seen.insert(ch) {
                    return Err(SourceError::ChannelReuse(ch));
                }
            }
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> i64 {
        (self.duration_s * PS_PER_S).round() as i64
    }

    /// FNV-1a over the canonical JSON form; stored in tag-file metadata.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn pair_for_channel(&self, channel: ChannelIndex) -> Option<(usize, &PairConfig)> {
        self.pairs
            .iter()
            .enumerate()
            .find(|(_, p)| p.signal == channel || p.idler == channel)
    }
}

/// The three pairs of the characterised testbed, 60 s acquisition.
///
/// Pair rates are the measured coincidence rates; backgrounds bring every channel to
/// about 265 k singles/s.
pub fn testbed_preset() -> SourceConfig {
    let pair = |signal: ChannelIndex, rate: f64| PairConfig {
        signal,
        idler: 42 - signal,
        detected_pair_rate_hz: rate,
        background_signal_hz: TESTBED_SINGLES_HZ - rate,
        background_idler_hz: TESTBED_SINGLES_HZ - rate,
        jitter_sigma_ps: DEFAULT_JITTER_PS,
    };
    SourceConfig {
        duration_s: 60.0,
        pairs: vec![pair(26, 53_106.45), pair(25, 45_601.10), pair(24, 45_738.53)],
        seed: 0,
    }
}

/// Rate of chance coincidences between two uncorrelated Poisson channels.
pub fn expected_accidental_rate(rate_a_hz: f64, rate_b_hz: f64, window_s: f64) -> f64 {
    rate_a_hz * rate_b_hz * window_s
}

/// Generates every configured channel. Deterministic in `(config, seed)`.
pub fn generate(config: &SourceConfig) -> Result<BTreeMap<ChannelIndex, TagStream>, SourceError> {
    config.validate()?;
    let mut out = BTreeMap::new();
    for (i, p) in config.pairs.iter().enumerate() {
        let (s, idl) = generate_pair_unchecked(config, i)?;
        out.insert(p.signal, s);
        out.insert(p.idler, idl);
    }
    Ok(out)
}

/// Generates one pair's `(signal, idler)` streams.
///
/// Every pair draws from its own random stream, so the result is identical to the
/// corresponding entries of [`generate`].
pub fn generate_pair(config: &SourceConfig, index: usize) -> Result<(TagStream, TagStream), SourceError> {
    config.validate()?;
    if index >= config.pairs.len() {
        return Err(SourceError::NoSuchPair(index));
    }
    generate_pair_unchecked(config, index)
}

fn generate_pair_unchecked(config: &SourceConfig, index: usize) -> Result<(TagStream, TagStream), SourceError> {
    let pair = &config.pairs[index];
    let duration_ps = config.duration_ps();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let expected_pairs = (pair.detected_pair_rate_hz * config.duration_s) as usize;
    let mut signal = Vec::with_capacity(expected_pairs + (pair.background_signal_hz * config.duration_s) as usize + 64);
    let mut idler = Vec::with_capacity(expected_pairs + (pair.background_idler_hz * config.duration_s) as usize + 64);

    let jitter = Normal::new(0.0, pair.jitter_sigma_ps).expect("validated jitter");
    let place = |t: f64, rng: &mut ChaCha8Rng| -> Option<i64> {
        let ts = (t + jitter.sample(rng)).round() as i64;
        (0..=duration_ps).contains(&ts).then_some(ts)
    };
    for t in poisson_times(&mut rng, pair.detected_pair_rate_hz, duration_ps) {
        if let Some(ts) = place(t, &mut rng) {
            signal.push(TagRecord::new(pair.signal, ts));
        }
        if let Some(ts) = place(t, &mut rng) {
            idler.push(TagRecord::new(pair.idler, ts));
        }
    }
    for t in poisson_times(&mut rng, pair.background_signal_hz, duration_ps) {
        signal.push(TagRecord::new(pair.signal, t.round() as i64));
    }
    for t in poisson_times(&mut rng, pair.background_idler_hz, duration_ps) {
        idler.push(TagRecord::new(pair.idler, t.round() as i64));
    }

    let metadata = StreamMetadata {
        seed: Some(config.seed),
        config_hash: config.config_hash(),
    };
    Ok((
        TagStream::from_unsorted(signal, duration_ps)?.with_metadata(metadata.clone()),
        TagStream::from_unsorted(idler, duration_ps)?.with_metadata(metadata),
    ))
}

/// Event times in ps of a Poisson process on `[0, duration_ps]`.
fn poisson_times(rng: &mut ChaCha8Rng, rate_hz: f64, duration_ps: i64) -> Vec<f64> {
    if rate_hz <= 0.0 {
        return Vec::new();
    }
    let gaps = Exp::new(rate_hz / PS_PER_S).expect("positive rate");
    let end = duration_ps as f64;
    let mut out = Vec::with_capacity((rate_hz * end / PS_PER_S * 1.01) as usize + 16);
    let mut t = gaps.sample(rng);
    while t <= end {
        out.push(t);
        t += gaps.sample(rng);
    }
    out
}
