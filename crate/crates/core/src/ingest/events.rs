use std::collections::BTreeMap;

use super::device::{DeviceConfig, DeviceKind};
use super::record::EegRecord;

/// All channels of one stimulus presentation on one device.
#[derive(Debug, Clone, PartialEq)]
pub struct EegEvent {
    pub event_id: u64,
    pub device: DeviceKind,
    pub code: i8,
    pub channels: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssembleStats {
    /// Events missing at least one configured channel.
    pub dropped_incomplete: usize,
    /// Events whose records disagree on the code, or repeat a channel.
    pub dropped_inconsistent: usize,
    /// Events carrying a channel the device config does not list.
    pub dropped_unknown_channel: usize,
    /// Records for a device with no config.
    pub skipped_records: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AssembleReport {
    pub events: Vec<EegEvent>,
    pub stats: AssembleStats,
}

#[derive(Default)]
struct Pending {
    code: Option<i8>,
    conflict: bool,
    channels: BTreeMap<String, Vec<f64>>,
}

/// Groups records by `(device, event_id)` and keeps only complete, consistent
/// events. Output is ordered by device, then event id.
pub fn assemble_events<I>(records: I, configs: &BTreeMap<DeviceKind, DeviceConfig>) -> AssembleReport
where
    I: IntoIterator<Item = EegRecord>,
{
    let mut groups: BTreeMap<(DeviceKind, u64), Pending> = BTreeMap::new();
    let mut stats = AssembleStats::default();
    for r in records {
        if !configs.contains_key(&r.device) {
            stats.skipped_records += 1;
            continue;
        }
        let g = groups.entry((r.device, r.event_id)).or_default();
        match g.code {
            Some(c) if c != r.code => g.conflict = true,
            _ => g.code = Some(r.code),
        }
        if g.channels.insert(r.channel, r.samples).is_some() {
            g.conflict = true;
        }
    }

    let mut events = Vec::new();
    for ((device, event_id), g) in groups {
        let cfg = &configs[&device];
        if g.conflict {
            stats.dropped_inconsistent += 1;
            continue;
        }
        if g.channels.keys().any(|c| !cfg.channel_names.contains(c)) {
            stats.dropped_unknown_channel += 1;
            continue;
        }
        if cfg.channel_names.iter().any(|c| !g.channels.contains_key(c)) {
            stats.dropped_incomplete += 1;
            continue;
        }
        events.push(EegEvent {
            event_id,
            device,
            code: g.code.expect("group has at least one record"),
            channels: g.channels,
        });
    }
    AssembleReport { events, stats }
}
