use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::{hex_u128, ProtocolConfig};
use crate::puf::PufConfig;
use crate::store::MasterSecret;

/// The frozen defaults, shipped as a config file.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../config/default.toml");

/// Seeds for every random source in a simulated run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSeeds {
    /// Helper-data messages during enrollment.
    pub enroll: u64,
    /// Database seal nonces.
    pub seal: u64,
    /// Device nonces and PUF noise.
    pub device: u64,
    /// Server nonces.
    pub server: u64,
}

impl Default for SimSeeds {
    fn default() -> Self {
        Self { enroll: 1, seal: 2, device: 3, server: 4 }
    }
}

/// Everything a simulated deployment needs: one device, the server secret,
/// protocol parameters, PUF model and RNG seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub device_id: u64,
    #[serde(with = "hex_u128")]
    pub master_secret: u128,
    pub protocol: ProtocolConfig,
    pub puf: PufConfig,
    pub seeds: SimSeeds,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            device_id: 0x1D00_0000_0000_0001,
            master_secret: 0x3a57_e250_0000_0000_0000_0000_0000_0001,
            protocol: ProtocolConfig::default(),
            puf: PufConfig::default(),
            seeds: SimSeeds::default(),
        }
    }
}

impl SystemConfig {
    pub fn master(&self) -> MasterSecret {
        MasterSecret(self.master_secret)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> anyhow::Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Same deployment with a smaller RN stream; handy for tests and demos.
    pub fn with_m(mut self, m: u64) -> Self {
        self.protocol.m = m;
        self
    }
}
