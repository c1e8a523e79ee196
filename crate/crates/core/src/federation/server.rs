use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::client::{client_local_update, ClientState, ClientUpdate, LocalObjective};
use super::transport::{Endpoint, Message, Transport};
use super::Hyperparameters;
use crate::error::{Error, Result};
use crate::ingest::{ClientId, DatasetSplit, DeviceKind, LabeledExample};
use crate::mmd::{device_pairs, mmd_squared, DevicePair, FrozenTarget, Kernel, KernelConfig, MmdConfig};
use crate::models::{argmax, classify, project, ClassifierParams, ModelParams, ProjectorParams};
use crate::numerics::Matrix;

/// Another device group's exchanged embeddings, as seen by one client.
#[derive(Debug, Clone)]
pub struct ForeignPool {
    pub device: DeviceKind,
    pub lambda: f64,
    pub points: Matrix,
}

/// Everything one client receives at the start of a round.
#[derive(Debug, Clone)]
pub struct BroadcastPayload {
    pub device: DeviceKind,
    pub projector: ProjectorParams,
    pub classifier: ClassifierParams,
    pub foreign_pools: Vec<ForeignPool>,
    /// Kernel with this round's bandwidth; `None` when the MMD term is off.
    pub kernel: Option<Kernel>,
    /// How many embeddings to send back; 0 disables exchange.
    pub exchange_size: usize,
}

impl BroadcastPayload {
    pub fn objective(&self) -> LocalObjective {
        match self.kernel {
            Some(k) if !self.foreign_pools.is_empty() => LocalObjective {
                targets: self
                    .foreign_pools
                    .iter()
                    .map(|p| (p.lambda, FrozenTarget::new(p.points.clone(), &k)))
                    .collect(),
                kernel: Some(k),
            },
            _ => LocalObjective::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    /// Rounds completed so far.
    pub round: u32,
    pub global: ModelParams,
    pub registry: BTreeMap<DeviceKind, Vec<ClientId>>,
    pub mmd: MmdConfig,
    pub hyper: Hyperparameters,
    pub exchange_enabled: bool,
    /// Embedding pools from the previous round's exchange.
    pub pools: BTreeMap<DeviceKind, Matrix>,
}

impl ServerState {
    pub fn new(
        global: ModelParams,
        clients: &[ClientState],
        mmd: MmdConfig,
        hyper: Hyperparameters,
        exchange_enabled: bool,
    ) -> Result<Self> {
        let mut registry: BTreeMap<DeviceKind, Vec<ClientId>> = BTreeMap::new();
        for c in clients {
            registry.entry(c.device).or_default().push(c.client_id);
        }
        for ids in registry.values_mut() {
            ids.sort_unstable();
        }
        let server = ServerState {
            round: 0,
            global,
            registry,
            mmd,
            hyper,
            exchange_enabled,
            pools: BTreeMap::new(),
        };
        server.check_topology()?;
        Ok(server)
    }

    fn check_topology(&self) -> Result<()> {
        if self.registry.is_empty() {
            return Err(Error::Protocol("no clients registered".into()));
        }
        for d in self.global.projectors.keys() {
            if !self.registry.contains_key(d) {
                return Err(Error::Protocol(format!("global params hold a projector for unregistered device {d}")));
            }
        }
        for d in self.registry.keys() {
            if !self.global.projectors.contains_key(d) {
                return Err(Error::Protocol(format!("no projector for registered device {d}")));
            }
        }
        Ok(())
    }

    pub fn devices(&self) -> Vec<DeviceKind> {
        self.registry.keys().copied().collect()
    }

    fn round_kernel(&self) -> Result<Option<Kernel>> {
        if !self.exchange_enabled || self.mmd.is_inert() {
            return Ok(None);
        }
        let mut pooled = Matrix::zeros(0, 0);
        for p in self.pools.values() {
            pooled.append_rows(p)?;
        }
        if pooled.rows() < 2 {
            return Ok(None);
        }
        self.mmd.kernel.resolve(&pooled).map(Some)
    }
}

/// Builds each registered client's payload: its own group's projector, the
/// global classifier and the other groups' embedding pools.
pub fn broadcast(server: &ServerState) -> Result<Vec<(ClientId, BroadcastPayload)>> {
    server.check_topology()?;
    let kernel = server.round_kernel()?;
    let exchange_size = if server.exchange_enabled {
        server.hyper.exchange_size
    } else {
        0
    };
    let mut out = Vec::new();
    for (&device, ids) in &server.registry {
        let mut foreign = Vec::new();
        let mut complete = kernel.is_some();
        for &other in server.registry.keys().filter(|&&o| o != device) {
            let lambda = server.mmd.weight(device, other);
            if lambda == 0.0 {
                continue;
            }
            match server.pools.get(&other) {
                Some(p) if p.rows() > 0 => foreign.push(ForeignPool {
                    device: other,
                    lambda,
                    points: p.clone(),
                }),
                _ => complete = false,
            }
        }
        // cold start: with any required pool missing the MMD term is off
        if !complete {
            foreign.clear();
        }
        let projector = server.global.projectors[&device].clone();
        for &id in ids {
            out.push((
                id,
                BroadcastPayload {
                    device,
                    projector: projector.clone(),
                    classifier: server.global.classifier.clone(),
                    foreign_pools: foreign.clone(),
                    kernel: if foreign.is_empty() { None } else { kernel },
                    exchange_size,
                },
            ));
        }
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

/// Sample-count weighted mean of flat vectors: `Σ (n_k / Σ n) · v_k`, summed
/// in the given order, then clamped to the per-coordinate range of the
/// inputs so rounding never leaves their convex hull (identical inputs
/// therefore come back bit-exact).
pub fn weighted_mean(vectors: &[(&[f64], usize)]) -> Result<Vec<f64>> {
    let Some(&(first, _)) = vectors.first() else {
        return Err(Error::Protocol("weighted mean of no vectors".into()));
    };
    let dim = first.len();
    if let Some((v, _)) = vectors.iter().find(|(v, _)| v.len() != dim) {
        return Err(Error::shape(format!("vector of length {} vs {dim}", v.len())));
    }
    let total: f64 = vectors.iter().map(|&(_, n)| n as f64).sum();
    if total == 0.0 {
        return Err(Error::Protocol("all sample counts are zero".into()));
    }
    let mut mean = vec![0.0; dim];
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for &(v, n) in vectors {
        let w = n as f64 / total;
        for (((m, x), l), h) in mean.iter_mut().zip(v).zip(&mut lo).zip(&mut hi) {
            *m += w * x;
            *l = l.min(*x);
            *h = h.max(*x);
        }
    }
    for ((m, l), h) in mean.iter_mut().zip(&lo).zip(&hi) {
        *m = m.clamp(*l, *h);
    }
    Ok(mean)
}

/// Two-level FedAvg: projectors within each device group, the classifier
/// over every client. Updates are processed in client-id order.
pub fn aggregate(server: &ServerState, updates: &[ClientUpdate]) -> Result<ModelParams> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);

    let cls_len = server.global.classifier.network().param_count();
    for u in &sorted {
        let Some(ids) = server.registry.get(&u.device) else {
            return Err(Error::Protocol(format!("client-{} reports unregistered device {}", u.client_id, u.device)));
        };
        if !ids.contains(&u.client_id) {
            return Err(Error::Protocol(format!("client-{} is not registered under {}", u.client_id, u.device)));
        }
        let expected = server.global.projectors[&u.device].network().param_count();
        if u.projector.network().param_count() != expected
            || u.projector.device != u.device
            || u.classifier.network().param_count() != cls_len
        {
            return Err(Error::Protocol(format!("client-{} sent parameters of the wrong shape", u.client_id)));
        }
    }

    let mut next = server.global.clone();
    for (&device, global_proj) in &server.global.projectors {
        let group: Vec<(Vec<f64>, usize)> = sorted
            .iter()
            .filter(|u| u.device == device)
            .map(|u| (u.projector.network().flat_params(), u.sample_count))
            .collect();
        if group.is_empty() {
            return Err(Error::Protocol(format!("no update from any {device} client")));
        }
        let refs: Vec<(&[f64], usize)> = group.iter().map(|(v, n)| (v.as_slice(), *n)).collect();
        let mut net = global_proj.network().clone();
        net.set_flat_params(&weighted_mean(&refs)?)?;
        next.projectors.insert(device, global_proj.with_network(net)?);
    }
    let cls: Vec<(Vec<f64>, usize)> = sorted
        .iter()
        .map(|u| (u.classifier.network().flat_params(), u.sample_count))
        .collect();
    let refs: Vec<(&[f64], usize)> = cls.iter().map(|(v, n)| (v.as_slice(), *n)).collect();
    let mut net = server.global.classifier.network().clone();
    net.set_flat_params(&weighted_mean(&refs)?)?;
    next.classifier = server.global.classifier.with_network(net)?;
    Ok(next)
}

/// Concatenates each device group's exchanged embeddings in client-id order.
pub fn exchange_embeddings(updates: &[ClientUpdate]) -> Result<BTreeMap<DeviceKind, Matrix>> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let mut pools: BTreeMap<DeviceKind, Matrix> = BTreeMap::new();
    for u in sorted {
        if let Some(e) = &u.embeddings {
            pools
                .entry(u.device)
                .or_insert_with(|| Matrix::zeros(0, 0))
                .append_rows(e)?;
        }
    }
    Ok(pools)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_device: BTreeMap<DeviceKind, f64>,
    /// Accuracy over the union of all test sets.
    pub pooled: f64,
}

pub fn evaluate(params: &ModelParams, test_sets: &BTreeMap<DeviceKind, Vec<LabeledExample>>) -> Result<Evaluation> {
    let mut per_device = BTreeMap::new();
    let mut correct_all = 0usize;
    let mut total = 0usize;
    for (&device, tests) in test_sets {
        if tests.is_empty() {
            return Err(Error::Precondition(format!("empty {device} test set")));
        }
        let proj = params
            .projectors
            .get(&device)
            .ok_or_else(|| Error::Protocol(format!("no projector for test device {device}")))?;
        let mut correct = 0usize;
        for ex in tests {
            let logits = classify(&params.classifier, &project(proj, ex)?)?;
            if argmax(&logits) == ex.label {
                correct += 1;
            }
        }
        per_device.insert(device, correct as f64 / tests.len() as f64);
        correct_all += correct;
        total += tests.len();
    }
    if total == 0 {
        return Err(Error::Precondition("no test sets".into()));
    }
    Ok(Evaluation {
        per_device,
        pooled: correct_all as f64 / total as f64,
    })
}

/// The deterministic part of a round report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based index of the round just completed.
    pub round: u32,
    pub per_device_accuracy: BTreeMap<DeviceKind, f64>,
    pub pooled_accuracy: f64,
    /// Sample-weighted mean of the clients' local training losses.
    pub mean_train_loss: f64,
    /// MMD² between the freshly exchanged pools, keyed `"A-B"`.
    pub pairwise_mmd2: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub metrics: RoundMetrics,
    pub duration_ms: f64,
}

pub fn pair_key(p: &DevicePair) -> String {
    format!("{}-{}", p.first(), p.second())
}

/// MMD² between every pair of pools, with a bandwidth chosen on their union.
pub fn pool_mmd2(pools: &BTreeMap<DeviceKind, Matrix>, kernel: &KernelConfig) -> Result<BTreeMap<String, f64>> {
    let devices: Vec<DeviceKind> = pools.iter().filter(|(_, m)| m.rows() > 0).map(|(d, _)| *d).collect();
    let pairs = device_pairs(&devices);
    let mut out = BTreeMap::new();
    if pairs.is_empty() {
        return Ok(out);
    }
    let mut pooled = Matrix::zeros(0, 0);
    for d in &devices {
        pooled.append_rows(&pools[d])?;
    }
    let k = kernel.resolve(&pooled)?;
    for p in pairs {
        out.insert(pair_key(&p), mmd_squared(&pools[&p.first()], &pools[&p.second()], &k)?);
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
fn run_clients(
    clients: &[ClientState],
    payloads: &[BroadcastPayload],
    round: u32,
    hyper: &Hyperparameters,
) -> Vec<Result<ClientUpdate>> {
    use rayon::prelude::*;
    clients
        .par_iter()
        .zip(payloads.par_iter())
        .map(|(c, p)| client_local_update(c, round, p, hyper))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_clients(
    clients: &[ClientState],
    payloads: &[BroadcastPayload],
    round: u32,
    hyper: &Hyperparameters,
) -> Vec<Result<ClientUpdate>> {
    clients
        .iter()
        .zip(payloads)
        .map(|(c, p)| client_local_update(c, round, p, hyper))
        .collect()
}

/// broadcast -> local updates -> aggregate -> exchange -> evaluate.
///
/// `clients` must be sorted by client id. Results are merged in that order no
/// matter how the local updates were scheduled.
pub fn run_round(
    server: &ServerState,
    clients: &[ClientState],
    test_sets: &BTreeMap<DeviceKind, Vec<LabeledExample>>,
    transport: &mut Transport,
) -> Result<(ServerState, RoundReport)> {
    if server.round >= server.hyper.rounds {
        return Err(Error::Protocol(format!(
            "round {} exceeds the configured {} rounds",
            server.round + 1,
            server.hyper.rounds
        )));
    }
    let started = Stopwatch::start();
    let round = server.round + 1;

    for (id, payload) in broadcast(server)? {
        transport.send(round, Endpoint::Server, Endpoint::Client(id), Message::Broadcast(Box::new(payload)));
    }
    let mut payloads = Vec::with_capacity(clients.len());
    for c in clients {
        match transport.recv(Endpoint::Client(c.client_id)) {
            Some(Message::Broadcast(p)) => payloads.push(*p),
            _ => return Err(Error::Protocol(format!("client-{} got no broadcast", c.client_id))),
        }
    }

    let mut updates = Vec::with_capacity(clients.len());
    for res in run_clients(clients, &payloads, round, &server.hyper) {
        let update = res?;
        transport.send(
            round,
            Endpoint::Client(update.client_id),
            Endpoint::Server,
            Message::Update(Box::new(update)),
        );
    }
    for msg in transport.drain(Endpoint::Server) {
        if let Message::Update(u) = msg {
            updates.push(*u);
        }
    }

    let global = aggregate(server, &updates)?;
    let pools = if server.exchange_enabled {
        exchange_embeddings(&updates)?
    } else {
        BTreeMap::new()
    };
    let eval = evaluate(&global, test_sets)?;
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let mean_train_loss = sorted
        .iter()
        .map(|u| u.train_loss * u.sample_count as f64)
        .sum::<f64>()
        / total as f64;
    let pairwise_mmd2 = pool_mmd2(&pools, &server.mmd.kernel)?;

    let next = ServerState {
        round,
        global,
        registry: server.registry.clone(),
        mmd: server.mmd.clone(),
        hyper: server.hyper.clone(),
        exchange_enabled: server.exchange_enabled,
        pools,
    };
    let report = RoundReport {
        metrics: RoundMetrics {
            round,
            per_device_accuracy: eval.per_device,
            pooled_accuracy: eval.pooled,
            mean_train_loss,
            pairwise_mmd2,
        },
        duration_ms: started.elapsed_ms(),
    };
    Ok((next, report))
}

/// A server, its clients and held-out data, stepped one round at a time.
#[derive(Debug)]
pub struct Federation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub test_sets: BTreeMap<DeviceKind, Vec<LabeledExample>>,
    pub transport: Transport,
}

impl Federation {
    pub fn new(
        global: ModelParams,
        split: &DatasetSplit,
        mmd: MmdConfig,
        hyper: Hyperparameters,
        seed: u64,
        exchange_enabled: bool,
        log_messages: bool,
    ) -> Result<Self> {
        hyper.validate()?;
        let mut clients = split
            .shards
            .iter()
            .map(|s| ClientState::register(s.clone(), seed))
            .collect::<Result<Vec<_>>>()?;
        clients.sort_by_key(|c| c.client_id);
        let server = ServerState::new(global, &clients, mmd, hyper, exchange_enabled)?;
        for d in server.registry.keys() {
            if !split.test_sets.contains_key(d) {
                return Err(Error::Protocol(format!("no test set for {d}")));
            }
        }
        Ok(Federation {
            server,
            clients,
            test_sets: split.test_sets.clone(),
            transport: Transport::new(log_messages),
        })
    }

    pub fn is_done(&self) -> bool {
        self.server.round >= self.server.hyper.rounds
    }

    pub fn step(&mut self) -> Result<RoundReport> {
        let (next, report) = run_round(&self.server, &self.clients, &self.test_sets, &mut self.transport)?;
        self.server = next;
        Ok(report)
    }

    /// Runs the remaining rounds, handing each report to `observe`.
    pub fn run(&mut self, mut observe: impl FnMut(&RoundReport)) -> Result<Vec<RoundReport>> {
        let mut out = Vec::new();
        while !self.is_done() {
            let r = self.step()?;
            observe(&r);
            out.push(r);
        }
        Ok(out)
    }
}

/// Wall-clock timer; reads zero where no clock exists (wasm32 without WASI).
struct Stopwatch(#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return Stopwatch(std::time::Instant::now());
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        return Stopwatch();
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        return 0.0;
    }
}
