//! In-process stand-in for the network: per-endpoint queues plus a log of
//! every message's shape.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::client::ClientUpdate;
use super::server::BroadcastPayload;
use crate::ingest::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Server,
    Client(ClientId),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Server => f.write_str("server"),
            Endpoint::Client(id) => write!(f, "client-{id}"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Message {
    Broadcast(Box<BroadcastPayload>),
    Update(Box<ClientUpdate>),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Broadcast(_) => MessageKind::Broadcast,
            Message::Update(_) => MessageKind::Update,
        }
    }

    /// Length of every float vector the message carries, in payload order.
    pub fn vector_lens(&self) -> Vec<usize> {
        let mut lens = Vec::new();
        match self {
            Message::Broadcast(p) => {
                lens.push(p.projector.network().param_count());
                lens.push(p.classifier.network().param_count());
                for pool in &p.foreign_pools {
                    lens.extend(std::iter::repeat_n(pool.points.cols(), pool.points.rows()));
                }
            }
            Message::Update(u) => {
                lens.push(u.projector.network().param_count());
                lens.push(u.classifier.network().param_count());
                // train loss, train accuracy
                lens.push(2);
                if let Some(e) = &u.embeddings {
                    lens.extend(std::iter::repeat_n(e.cols(), e.rows()));
                }
            }
        }
        lens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Broadcast,
    Update,
}

/// One JSON-lines record of the message log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub round: u32,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    /// Total number of floats carried.
    pub payload_len: usize,
    pub vector_lens: Vec<usize>,
}

#[derive(Debug, Default)]
pub struct Transport {
    queues: BTreeMap<Endpoint, VecDeque<Message>>,
    log: Vec<LogEntry>,
    logging: bool,
}

impl Transport {
    pub fn new(logging: bool) -> Self {
        Transport {
            logging,
            ..Default::default()
        }
    }

    pub fn send(&mut self, round: u32, from: Endpoint, to: Endpoint, msg: Message) {
        if self.logging {
            let vector_lens = msg.vector_lens();
            self.log.push(LogEntry {
                round,
                from: from.to_string(),
                to: to.to_string(),
                kind: msg.kind(),
                payload_len: vector_lens.iter().sum(),
                vector_lens,
            });
        }
        self.queues.entry(to).or_default().push_back(msg);
    }

    pub fn recv(&mut self, at: Endpoint) -> Option<Message> {
        self.queues.get_mut(&at).and_then(VecDeque::pop_front)
    }

    pub fn drain(&mut self, at: Endpoint) -> Vec<Message> {
        self.queues
            .get_mut(&at)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<LogEntry> {
        std::mem::take(&mut self.log)
    }
}
