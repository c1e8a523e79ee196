//! The federated protocol: broadcast, local training on the combined
//! CE + MMD² loss, two-level averaging and the embedding exchange that lets
//! clients compare their embedding distribution with other device groups
//! without sharing raw data.

mod client;
mod server;
mod transport;

pub use client::{client_local_update, epoch_order, ClientState, ClientUpdate, LocalObjective, StepOutput};
pub use server::{
    aggregate, broadcast, evaluate, exchange_embeddings, pair_key, pool_mmd2, run_round, weighted_mean,
    BroadcastPayload, Evaluation, Federation, ForeignPool, RoundMetrics, RoundReport, ServerState,
};
pub use transport::{Endpoint, LogEntry, Message, MessageKind, Transport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClientId, DatasetSplit, DeviceKind};
use crate::mmd::{DevicePair, KernelConfig, MmdConfig};
use crate::models::{init_params, ArchConfig, Checkpoint};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    pub rounds: u32,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Embeddings each client uploads per round.
    pub exchange_size: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            rounds: 100,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.01,
            exchange_size: 64,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 || self.exchange_size == 0 {
            return Err(Error::Config("rounds, local_epochs, batch_size and exchange_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Feature length of each device's examples in a split.
pub fn input_dims(split: &DatasetSplit) -> Result<BTreeMap<DeviceKind, usize>> {
    let mut dims = BTreeMap::new();
    for ex in split.shards.iter().flat_map(|s| &s.train).chain(split.test_sets.values().flatten()) {
        match dims.insert(ex.device, ex.features.len()) {
            Some(prev) if prev != ex.features.len() => {
                return Err(Error::Data(format!(
                    "{} examples have lengths {prev} and {}",
                    ex.device,
                    ex.features.len()
                )))
            }
            _ => {}
        }
    }
    Ok(dims)
}

/// Full HHHFL training over every device in `split`.
pub fn run_hhhfl(
    split: &DatasetSplit,
    arch: &ArchConfig,
    mmd: MmdConfig,
    hyper: &Hyperparameters,
    seed: u64,
    log_messages: bool,
    observe: impl FnMut(&RoundReport),
) -> Result<(Vec<RoundReport>, Vec<LogEntry>)> {
    let params = init_params(arch, &input_dims(split)?, seed)?;
    let mut fed = Federation::new(params, split, mmd, hyper.clone(), seed, true, log_messages)?;
    let reports = fed.run(observe)?;
    Ok((reports, fed.transport.take_log()))
}

/// The single-device baseline: same pipeline, λ = 0, no embedding exchange.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline(
    device: DeviceKind,
    split: &DatasetSplit,
    arch: &ArchConfig,
    kernel: KernelConfig,
    hyper: &Hyperparameters,
    seed: u64,
    log_messages: bool,
    observe: impl FnMut(&RoundReport),
) -> Result<(Vec<RoundReport>, Vec<LogEntry>)> {
    let own = split.restrict(&[device]);
    if own.shards.is_empty() {
        return Err(Error::Config(format!("no {device} clients for the baseline")));
    }
    let params = init_params(arch, &input_dims(&own)?, seed)?;
    let mmd = MmdConfig::new(kernel, BTreeMap::new())?;
    let mut fed = Federation::new(params, &own, mmd, hyper.clone(), seed, false, log_messages)?;
    let reports = fed.run(observe)?;
    Ok((reports, fed.transport.take_log()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServerMeta {
    round: u32,
    registry: BTreeMap<DeviceKind, Vec<ClientId>>,
    hyper: Hyperparameters,
    exchange_enabled: bool,
    kernel: KernelConfig,
    lambdas: Vec<(DeviceKind, DeviceKind, f64)>,
    pools: BTreeMap<DeviceKind, (usize, usize, Vec<f64>)>,
}

impl ServerState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ServerMeta {
            round: self.round,
            registry: self.registry.clone(),
            hyper: self.hyper.clone(),
            exchange_enabled: self.exchange_enabled,
            kernel: self.mmd.kernel,
            lambdas: self
                .mmd
                .weights()
                .iter()
                .map(|(p, w)| (p.first(), p.second(), *w))
                .collect(),
            pools: self
                .pools
                .iter()
                .map(|(d, m)| (*d, (m.rows(), m.cols(), m.data().to_vec())))
                .collect(),
        };
        Checkpoint {
            params: self.global.clone(),
            meta: serde_json::to_value(meta).expect("server meta is plain data"),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: ServerMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Serialization(format!("server checkpoint meta: {e}")))?;
        let weights = meta
            .lambdas
            .iter()
            .map(|&(a, b, w)| (DevicePair::new(a, b), w))
            .collect();
        let mut pools = BTreeMap::new();
        for (d, (r, c, data)) in meta.pools {
            pools.insert(d, Matrix::from_vec(r, c, data)?);
        }
        let server = ServerState {
            round: meta.round,
            global: ck.params.clone(),
            registry: meta.registry,
            mmd: MmdConfig::new(meta.kernel, weights)?,
            hyper: meta.hyper,
            exchange_enabled: meta.exchange_enabled,
            pools,
        };
        Ok(server)
    }
}
