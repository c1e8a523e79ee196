use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::federation::Hyperparameters;
use crate::ingest::DeviceKind;
use crate::mmd::{device_pairs, DevicePair, KernelConfig, MmdConfig};
use crate::models::ArchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Hhhfl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Hhhfl => "hhhfl",
        })
    }
}

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Benchmark-shaped synthetic devices (input dims 1024/440/512).
    Synthetic {
        #[serde(default = "default_examples_per_class")]
        examples_per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Raw MindBigData text files.
    Mindbigdata {
        paths: Vec<PathBuf>,
        #[serde(default)]
        balance_classes: bool,
    },
    /// A dataset cache written by `ingest`.
    Cache { path: PathBuf },
}

fn default_examples_per_class() -> usize {
    300
}

fn default_separation() -> f64 {
    4.0
}

fn default_noise() -> f64 {
    1.0
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            examples_per_class: default_examples_per_class(),
            separation: default_separation(),
            noise: default_noise(),
        }
    }
}

impl DataSource {
    pub fn synthetic_spec(&self, devices: &[DeviceKind]) -> Option<SyntheticSpec> {
        match *self {
            DataSource::Synthetic {
                examples_per_class,
                separation,
                noise,
            } => {
                let mut spec = SyntheticSpec::benchmark(devices, examples_per_class, separation);
                for d in spec.devices.values_mut() {
                    d.noise = noise;
                }
                Some(spec)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub clients_per_device: usize,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            clients_per_device: 3,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdSection {
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Weight for every device pair not listed in `pairs`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Per-pair overrides keyed "A-B", e.g. `"MW-EP" = 0.5`.
    #[serde(default)]
    pub pairs: BTreeMap<String, f64>,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for MmdSection {
    fn default() -> Self {
        MmdSection {
            kernel: KernelConfig::default(),
            lambda: default_lambda(),
            pairs: BTreeMap::new(),
        }
    }
}

fn parse_pair(key: &str) -> Result<DevicePair> {
    let (a, b) = key
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("mmd.pairs.{key}: expected \"A-B\"")))?;
    let (a, b): (DeviceKind, DeviceKind) = (a.trim().parse()?, b.trim().parse()?);
    if a == b {
        return Err(Error::Config(format!("mmd.pairs.{key}: a device cannot pair with itself")));
    }
    Ok(DevicePair::new(a, b))
}

impl MmdSection {
    pub fn to_mmd_config(&self, devices: &[DeviceKind]) -> Result<MmdConfig> {
        let mut weights: BTreeMap<DevicePair, f64> =
            device_pairs(devices).into_iter().map(|p| (p, self.lambda)).collect();
        for (key, &w) in &self.pairs {
            let pair = parse_pair(key)?;
            if !devices.contains(&pair.first()) || !devices.contains(&pair.second()) {
                return Err(Error::Config(format!("mmd.pairs.{key}: device not in `devices`")));
            }
            weights.insert(pair, w);
        }
        MmdConfig::new(self.kernel, weights)
    }
}

/// One experiment, loaded from a TOML file. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub devices: Vec<DeviceKind>,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Fill the `duration_ms` column. Off by default so outputs are
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub hyper: Hyperparameters,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub mmd: MmdSection,
    #[serde(default)]
    pub split: SplitConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.devices.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.devices.len() {
            return Err(Error::Config("devices: duplicate entry".into()));
        }
        match (self.method, self.devices.len()) {
            (Method::Baseline, 1) => {}
            (Method::Baseline, n) => {
                return Err(Error::Config(format!("method baseline needs exactly one device, got {n}")))
            }
            (Method::Hhhfl, n) if n < 2 => {
                return Err(Error::Config(format!("method hhhfl needs at least two devices, got {n}")))
            }
            _ => {}
        }
        self.hyper.validate()?;
        self.arch.validate()?;
        self.mmd.kernel.validate()?;
        self.mmd_config()?;
        if self.split.clients_per_device == 0 {
            return Err(Error::Config("split.clients_per_device must be positive".into()));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.test_fraction must lie in (0, 1), got {}",
                self.split.test_fraction
            )));
        }
        match &self.data {
            DataSource::Synthetic { .. } => {
                self.data.synthetic_spec(&self.devices).expect("synthetic").validate()?;
            }
            DataSource::Mindbigdata { paths, .. } if paths.is_empty() => {
                return Err(Error::Config("data.paths is empty".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Devices in canonical order.
    pub fn sorted_devices(&self) -> Vec<DeviceKind> {
        let mut d = self.devices.clone();
        d.sort();
        d
    }

    pub fn mmd_config(&self) -> Result<MmdConfig> {
        let devices = self.sorted_devices();
        let config = self.mmd.to_mmd_config(&devices)?;
        Ok(match self.method {
            Method::Baseline => config.zeroed(),
            Method::Hhhfl => config,
        })
    }

    /// Canonical TOML rendering, the input of the provenance hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }
}

/// Parses and validates a config. Unknown keys are reported with their path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Config(format!("{path}: {}", inner.message().trim()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
        _ => Error::io(path, e),
    })?;
    parse_config(&text)
}
