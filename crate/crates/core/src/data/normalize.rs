use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Channel, Day};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

/// Per-channel min/max learned from training days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub t_air: ChannelRange,
    pub t_water: ChannelRange,
    pub t_soil: ChannelRange,
    pub t_wall: ChannelRange,
    pub alpha_vent: ChannelRange,
}

impl NormalizationSpec {
    /// Fits ranges on `days`. Channels with no spread are reported as errors.
    pub fn fit(days: &[Day]) -> Result<Self> {
        let mut ranges = [ChannelRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }; 5];
        for day in days {
            for row in &day.rows {
                for (r, v) in ranges.iter_mut().zip(row) {
                    r.min = r.min.min(*v);
                    r.max = r.max.max(*v);
                }
            }
        }
        for (c, r) in Channel::ALL.iter().zip(&ranges) {
            if !(r.max > r.min) {
                return Err(Error::DegenerateChannel(c.name().into()));
            }
        }
        Ok(NormalizationSpec {
            t_air: ranges[0],
            t_water: ranges[1],
            t_soil: ranges[2],
            t_wall: ranges[3],
            alpha_vent: ranges[4],
        })
    }

    pub fn range(&self, channel: Channel) -> ChannelRange {
        match channel {
            Channel::TAir => self.t_air,
            Channel::TWater => self.t_water,
            Channel::TSoil => self.t_soil,
            Channel::TWall => self.t_wall,
            Channel::AlphaVent => self.alpha_vent,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }
}

pub fn minmax_normalize(value: f64, channel: Channel, spec: &NormalizationSpec) -> Result<f64> {
    let r = spec.range(channel);
    let span = r.max - r.min;
    if !(span > 0.0) {
        return Err(Error::DegenerateChannel(channel.name().into()));
    }
    Ok((value - r.min) / span)
}

pub fn denormalize(value: f64, channel: Channel, spec: &NormalizationSpec) -> Result<f64> {
    let r = spec.range(channel);
    let span = r.max - r.min;
    if !(span > 0.0) {
        return Err(Error::DegenerateChannel(channel.name().into()));
    }
    Ok(value * span + r.min)
}
