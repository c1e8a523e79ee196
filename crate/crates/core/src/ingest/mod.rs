//! MindBigData ingestion: line parsing, event assembly, fixed-length
//! preprocessing, client sharding and the on-disk example cache.

mod cache;
mod device;
mod events;
mod preprocess;
mod record;
mod split;

pub use cache::{decode_examples, encode_examples, read_cache, write_cache, CACHE_VERSION};
pub use device::{DeviceConfig, DeviceKind};
pub use events::{assemble_events, AssembleReport, AssembleStats, EegEvent};
pub use preprocess::{preprocess, resample_linear, stimulus_label, z_normalize, LabeledExample};
pub use record::{parse_file, parse_mindbigdata_line, parse_reader, EegRecord, ParseOutcome};
pub use split::{balance_classes, group_by_device, split_dataset, ClientId, ClientShard, DatasetSplit};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;

/// Counts from a full file-to-examples ingestion.
#[derive(Debug, Clone, Default)]
pub struct IngestSummary {
    pub lines_rejected: usize,
    pub records: usize,
    pub assemble: AssembleStats,
    pub events_rejected: usize,
    pub examples_per_device: BTreeMap<DeviceKind, usize>,
}

/// Parses, assembles and preprocesses a set of MindBigData files.
pub fn ingest_files(
    paths: &[impl AsRef<Path>],
    configs: &BTreeMap<DeviceKind, DeviceConfig>,
) -> Result<(Vec<LabeledExample>, IngestSummary)> {
    let mut summary = IngestSummary::default();
    let mut records = Vec::new();
    for p in paths {
        let out = parse_file(p.as_ref())?;
        summary.lines_rejected += out.errors.len();
        records.extend(out.records);
    }
    summary.records = records.len();
    let assembled = assemble_events(records, configs);
    summary.assemble = assembled.stats;
    let mut examples = Vec::new();
    for ev in &assembled.events {
        match preprocess(ev, &configs[&ev.device]) {
            Ok(ex) => {
                *summary.examples_per_device.entry(ex.device).or_default() += 1;
                examples.push(ex);
            }
            Err(_) => summary.events_rejected += 1,
        }
    }
    Ok((examples, summary))
}

pub fn default_configs() -> BTreeMap<DeviceKind, DeviceConfig> {
    DeviceKind::ALL
        .iter()
        .map(|&d| (d, DeviceConfig::default_for(d)))
        .collect()
}
