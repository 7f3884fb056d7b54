use super::{ChannelIndex, TagError};
use serde::{Deserialize, Serialize};

/// Speed of light in nm·THz.
pub const SPEED_OF_LIGHT_NM_THZ: f64 = 299_792.458;

/// Default tolerance on `f_signal + f_idler - f_pump`. SPDC output is broadband.
pub const DEFAULT_ENERGY_TOLERANCE_THZ: f64 = 0.2;

pub const SIGNAL_CHANNELS: [ChannelIndex; 4] = [23, 24, 25, 26];
pub const IDLER_CHANNELS: [ChannelIndex; 4] = [16, 17, 18, 19];

/// Signal and idler channel numbers of every supported pair add up to this.
const PAIR_INDEX_SUM: ChannelIndex = 42;

const GRID_ORIGIN_THZ: f64 = 190.0;
const GRID_SPACING_THZ: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItuChannel {
    pub index: ChannelIndex,
    pub frequency_thz: f64,
    pub wavelength_nm: f64,
}

impl ItuChannel {
    pub fn new(index: i64) -> Result<Self, TagError> {
        let frequency_thz = itu_frequency_thz(index)?;
        Ok(Self {
            index: index as ChannelIndex,
            frequency_thz,
            wavelength_nm: SPEED_OF_LIGHT_NM_THZ / frequency_thz,
        })
    }
}

/// Centre frequency on the 100 GHz grid.
pub fn itu_frequency_thz(index: i64) -> Result<f64, TagError> {
    if !(1..=100).contains(&index) {
        return Err(TagError::InvalidChannel(index));
    }
    Ok(GRID_ORIGIN_THZ + GRID_SPACING_THZ * index as f64)
}

pub fn itu_wavelength_nm(index: i64) -> Result<f64, TagError> {
    Ok(SPEED_OF_LIGHT_NM_THZ / itu_frequency_thz(index)?)
}

/// Maps a signal channel (23..=26) to its idler (16..=19) and back.
pub fn partner_channel(channel: ChannelIndex) -> Result<ChannelIndex, TagError> {
    if SIGNAL_CHANNELS.contains(&channel) || IDLER_CHANNELS.contains(&channel) {
        Ok(PAIR_INDEX_SUM - channel)
    } else {
        Err(TagError::UnsupportedChannel(channel))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub conserved: bool,
    pub residual_thz: f64,
}

/// Compares the pair's frequency sum with the pump frequency.
pub fn energy_conservation_check(
    channel: ChannelIndex,
    pump_wavelength_nm: f64,
    tolerance_thz: f64,
) -> Result<EnergyCheck, TagError> {
    if !(pump_wavelength_nm > 0.0) || !pump_wavelength_nm.is_finite() {
        return Err(TagError::InvalidPump(pump_wavelength_nm));
    }
    let partner = partner_channel(channel)?;
    let sum = itu_frequency_thz(channel.into())? + itu_frequency_thz(partner.into())?;
    let pump = SPEED_OF_LIGHT_NM_THZ / pump_wavelength_nm;
    let residual_thz = (sum - pump).abs();
    Ok(EnergyCheck {
        conserved: residual_thz <= tolerance_thz,
        residual_thz,
    })
}
