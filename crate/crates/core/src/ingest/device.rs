use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// EEG headset family. Ordering (MW < EP < MU) fixes every iteration order
/// that touches more than one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeviceKind {
    /// MindWave: 1 channel, 512 Hz.
    MW,
    /// Emotiv EPOC: 14 channels, 128 Hz.
    EP,
    /// Interaxon Muse: 4 channels, 220 Hz.
    MU,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 3] = [DeviceKind::MW, DeviceKind::EP, DeviceKind::MU];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::MW => "MW",
            DeviceKind::EP => "EP",
            DeviceKind::MU => "MU",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MW" => Ok(DeviceKind::MW),
            "EP" => Ok(DeviceKind::EP),
            "MU" => Ok(DeviceKind::MU),
            other => Err(Error::Config(format!("unknown device {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub kind: DeviceKind,
    pub channel_names: Vec<String>,
    pub sampling_rate_hz: u32,
    /// Length of the feature vector fed to this device's projector.
    pub input_dim: usize,
}

const EP_CHANNELS: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];
const MU_CHANNELS: [&str; 4] = ["TP9", "FP1", "FP2", "TP10"];

impl DeviceConfig {
    pub fn default_for(kind: DeviceKind) -> Self {
        let (names, rate, dim): (&[&str], u32, usize) = match kind {
            DeviceKind::MW => (&["FP1"], 512, 1024),
            DeviceKind::EP => (&EP_CHANNELS, 128, 440),
            DeviceKind::MU => (&MU_CHANNELS, 220, 512),
        };
        DeviceConfig {
            kind,
            channel_names: names.iter().map(|s| s.to_string()).collect(),
            sampling_rate_hz: rate,
            input_dim: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config(format!("{}: input_dim must be positive", self.kind)));
        }
        if self.channel_names.is_empty() {
            return Err(Error::Config(format!("{}: no channels configured", self.kind)));
        }
        Ok(())
    }
}
