use vqn_core::photon_source::{generate_pair, SourceConfig};
use vqn_core::tagcore::{ChannelIndex, TagStream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("no hardware attached to this backend")]
    Unavailable,
    #[error("channels {0}/{1} are not configured on the source")]
    UnknownChannels(ChannelIndex, ChannelIndex),
    #[error("acquisition failed: {0}")]
    Acquisition(String),
}

/// Produces time-tag streams for the two channels of a pair.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;

    fn acquire(
        &self,
        signal: ChannelIndex,
        idler: ChannelIndex,
        duration_s: f64,
        seed: u64,
    ) -> Result<(TagStream, TagStream), BackendError>;
}

/// Synthesizes streams with the photon-pair source model. The same seed and duration
/// give the streams `generate` would write for that pair.
pub struct VirtualBackend {
    source: SourceConfig,
}

impl VirtualBackend {
    pub fn new(source: SourceConfig) -> Self {
        Self { source }
    }
}

impl Backend for VirtualBackend {
    fn name(&self) -> &'static str {
        "virtual"
    }

    fn acquire(
        &self,
        signal: ChannelIndex,
        idler: ChannelIndex,
        duration_s: f64,
        seed: u64,
    ) -> Result<(TagStream, TagStream), BackendError> {
        let (index, pair) = self
            .source
            .pair_for_channel(signal)
            .ok_or(BackendError::UnknownChannels(signal, idler))?;
        if pair.idler != idler {
            return Err(BackendError::UnknownChannels(signal, idler));
        }
        let cfg = self.source.clone().with_duration(duration_s).with_seed(seed);
        generate_pair(&cfg, index).map_err(|e| BackendError::Acquisition(e.to_string()))
    }
}

/// Where a driver for a physical time tagger would attach.
pub struct StubBackend;

impl Backend for StubBackend {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn acquire(&self, _: ChannelIndex, _: ChannelIndex, _: f64, _: u64) -> Result<(TagStream, TagStream), BackendError> {
        Err(BackendError::Unavailable)
    }
}
