use rand::seq::SliceRandom;

use super::server::BroadcastPayload;
use super::Hyperparameters;
use crate::error::{Error, Result};
use crate::ingest::{ClientId, ClientShard, DeviceKind, LabeledExample};
use crate::mmd::{FrozenTarget, Kernel};
use crate::models::{argmax, ClassifierParams, ProjectorParams};
use crate::numerics::{backprop, backprop_weighted, sgd_step, Batch, Gradients, Matrix, Network};
use crate::seed::{rng_for, stream};

/// A participant holding one private shard. Between rounds it keeps no model.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: ClientId,
    pub device: DeviceKind,
    shard: Vec<LabeledExample>,
    seed: u64,
}

impl ClientState {
    pub fn register(shard: ClientShard, seed: u64) -> Result<Self> {
        if shard.train.is_empty() {
            return Err(Error::Protocol(format!(
                "client-{} registered with an empty shard",
                shard.client_id
            )));
        }
        if let Some(bad) = shard.train.iter().find(|e| e.device != shard.device) {
            return Err(Error::Protocol(format!(
                "client-{} ({}) holds a {} example",
                shard.client_id, shard.device, bad.device
            )));
        }
        Ok(ClientState {
            client_id: shard.client_id,
            device: shard.device,
            shard: shard.train,
            seed,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.shard.len()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.shard
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: ClientId,
    pub device: DeviceKind,
    pub projector: ProjectorParams,
    pub classifier: ClassifierParams,
    pub sample_count: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Detached embeddings of a random subset of the shard; `None` when
    /// exchange is disabled.
    pub embeddings: Option<Matrix>,
}

/// The client's training objective: mean cross-entropy of
/// `classifier(projector(x))` plus `Σ λ · MMD²(batch embeddings, pool)` over
/// the frozen foreign pools.
#[derive(Debug, Clone, Default)]
pub struct LocalObjective {
    pub targets: Vec<(f64, FrozenTarget)>,
    pub kernel: Option<Kernel>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub projector_grads: Gradients,
    pub classifier_grads: Gradients,
    pub correct: usize,
}

impl LocalObjective {
    fn active(&self) -> Option<&Kernel> {
        self.kernel.as_ref().filter(|_| !self.targets.is_empty())
    }

    fn embed(projector: &Network, batch: &Batch<'_>) -> Result<Vec<Vec<f64>>> {
        batch.inputs.iter().map(|x| projector.forward(x)).collect()
    }

    pub fn value(&self, projector: &Network, classifier: &Network, batch: &Batch<'_>) -> Result<f64> {
        let emb = Self::embed(projector, batch)?;
        let eb = Batch::new(emb.iter().map(Vec::as_slice).collect(), batch.labels.clone())?;
        let mut loss = classifier.loss(&eb, 1.0, None)?;
        if let Some(kernel) = self.active() {
            let e = Matrix::from_rows(&emb)?;
            for (lambda, t) in &self.targets {
                loss += lambda * t.value_and_grad(&e, kernel)?.0;
            }
        }
        Ok(loss)
    }

    /// Loss and gradients for both networks. The MMD gradient reaches the
    /// projector only, through backprop's extra output-gradient channel.
    pub fn value_and_grads(&self, projector: &Network, classifier: &Network, batch: &Batch<'_>) -> Result<StepOutput> {
        let emb = Self::embed(projector, batch)?;
        let eb = Batch::new(emb.iter().map(Vec::as_slice).collect(), batch.labels.clone())?;
        let cls = backprop(classifier, &eb, None)?;
        let correct = cls
            .outputs
            .iter()
            .zip(&batch.labels)
            .filter(|(o, &l)| argmax(o) == l)
            .count();
        let mut loss = cls.loss;
        let mut emb_grads = cls.input_grads;
        if let Some(kernel) = self.active() {
            let e = Matrix::from_rows(&emb)?;
            for (lambda, t) in &self.targets {
                if *lambda == 0.0 {
                    continue;
                }
                let (v, g) = t.value_and_grad(&e, kernel)?;
                loss += lambda * v;
                for (row, grow) in emb_grads.iter_mut().zip(g.row_iter()) {
                    for (a, b) in row.iter_mut().zip(grow) {
                        *a += lambda * b;
                    }
                }
            }
        }
        let proj = backprop_weighted(projector, batch, 0.0, Some(&emb_grads))?;
        Ok(StepOutput {
            loss,
            projector_grads: proj.grads,
            classifier_grads: cls.grads,
            correct,
        })
    }
}

/// Batch order for one epoch: a seeded shuffle of `0..n`.
pub fn epoch_order(seed: u64, round: u32, client_id: ClientId, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[stream::SHUFFLE, round as u64, client_id as u64, epoch as u64]);
    idx.shuffle(&mut rng);
    idx
}

/// Runs `local_epochs` of mini-batch SGD on the combined loss, starting from
/// the broadcast parameters.
pub fn client_local_update(
    client: &ClientState,
    round: u32,
    payload: &BroadcastPayload,
    hyper: &Hyperparameters,
) -> Result<ClientUpdate> {
    if payload.device != client.device || payload.projector.device != client.device {
        return Err(Error::Protocol(format!(
            "client-{} ({}) received a {} payload",
            client.client_id, client.device, payload.device
        )));
    }
    if hyper.learning_rate.is_nan() || hyper.learning_rate < 0.0 || hyper.batch_size == 0 {
        return Err(Error::Config("learning_rate must be >= 0 and batch_size > 0".into()));
    }
    let objective = payload.objective();
    let mut projector = payload.projector.network().clone();
    let mut classifier = payload.classifier.network().clone();
    let n = client.shard.len();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;

    for epoch in 0..hyper.local_epochs {
        let order = epoch_order(client.seed, round, client.client_id, epoch, n);
        for chunk in order.chunks(hyper.batch_size) {
            let batch = Batch::new(
                chunk.iter().map(|&i| client.shard[i].features.as_slice()).collect(),
                chunk.iter().map(|&i| client.shard[i].label).collect(),
            )?;
            let step = objective.value_and_grads(&projector, &classifier, &batch)?;
            loss_sum += step.loss * chunk.len() as f64;
            correct += step.correct;
            seen += chunk.len();
            if hyper.learning_rate > 0.0 {
                projector = sgd_step(&projector, &step.projector_grads, hyper.learning_rate)?;
                classifier = sgd_step(&classifier, &step.classifier_grads, hyper.learning_rate)?;
            }
        }
    }

    let projector = payload.projector.with_network(projector)?;
    let classifier = payload.classifier.with_network(classifier)?;
    let embeddings = if payload.exchange_size > 0 {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = rng_for(client.seed, &[stream::EXCHANGE, round as u64, client.client_id as u64]);
        idx.shuffle(&mut rng);
        idx.truncate(payload.exchange_size.min(n));
        let rows = idx
            .iter()
            .map(|&i| projector.network().forward(&client.shard[i].features))
            .collect::<Result<Vec<_>>>()?;
        Some(Matrix::from_rows(&rows)?)
    } else {
        None
    };

    Ok(ClientUpdate {
        client_id: client.client_id,
        device: client.device,
        projector,
        classifier,
        sample_count: n,
        train_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
        train_accuracy: if seen > 0 { correct as f64 / seen as f64 } else { 0.0 },
        embeddings,
    })
}
