use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::device::DeviceKind;
use super::preprocess::LabeledExample;
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

pub type ClientId = u32;

/// One client's private training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: ClientId,
    pub device: DeviceKind,
    pub train: Vec<LabeledExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    /// Ordered by client id; ids are assigned device by device (MW, EP, MU).
    pub shards: Vec<ClientShard>,
    pub test_sets: BTreeMap<DeviceKind, Vec<LabeledExample>>,
}

impl DatasetSplit {
    pub fn devices(&self) -> Vec<DeviceKind> {
        self.test_sets.keys().copied().collect()
    }

    /// Keeps only the given devices, preserving client ids.
    pub fn restrict(&self, devices: &[DeviceKind]) -> DatasetSplit {
        DatasetSplit {
            shards: self
                .shards
                .iter()
                .filter(|s| devices.contains(&s.device))
                .cloned()
                .collect(),
            test_sets: self
                .test_sets
                .iter()
                .filter(|(d, _)| devices.contains(d))
                .map(|(d, t)| (*d, t.clone()))
                .collect(),
        }
    }
}

pub fn group_by_device(examples: Vec<LabeledExample>) -> BTreeMap<DeviceKind, Vec<LabeledExample>> {
    let mut by: BTreeMap<DeviceKind, Vec<LabeledExample>> = BTreeMap::new();
    for ex in examples {
        by.entry(ex.device).or_default().push(ex);
    }
    by
}

fn by_label_shuffled(examples: Vec<LabeledExample>, seed: u64, device: DeviceKind) -> Vec<Vec<LabeledExample>> {
    let mut groups: BTreeMap<usize, Vec<LabeledExample>> = BTreeMap::new();
    for ex in examples {
        groups.entry(ex.label).or_default().push(ex);
    }
    let mut rng = rng_for(seed, &[stream::SPLIT, device.code() as u64]);
    groups
        .into_values()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g
        })
        .collect()
}

/// Stratified, seeded split: per device a `test_fraction` hold-out, the rest
/// dealt round-robin (label by label) into `clients_per_device` shards.
pub fn split_dataset(
    examples: Vec<LabeledExample>,
    clients_per_device: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if clients_per_device == 0 {
        return Err(Error::Config("clients_per_device must be at least 1".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut shards = Vec::new();
    let mut test_sets = BTreeMap::new();
    let mut next_id: ClientId = 0;
    for (device, exs) in group_by_device(examples) {
        let n = exs.len();
        if n < clients_per_device + 1 {
            return Err(Error::Config(format!(
                "{device} has {n} examples, needs at least {} for {clients_per_device} clients plus a test set",
                clients_per_device + 1
            )));
        }
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - clients_per_device);

        // proportional interleave of the shuffled label groups decides the hold-out
        let groups = by_label_shuffled(exs, seed, device);
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
        for (gi, g) in groups.iter().enumerate() {
            for r in 0..g.len() {
                keyed.push(((r as f64 + 0.5) / g.len() as f64, gi, r));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut held = vec![Vec::new(); groups.len()];
        for &(_, gi, r) in &keyed[..n_test] {
            held[gi].push(r);
        }

        let mut test = Vec::with_capacity(n_test);
        for &(_, gi, r) in &keyed[..n_test] {
            test.push(groups[gi][r].clone());
        }
        let mut device_shards: Vec<Vec<LabeledExample>> = vec![Vec::new(); clients_per_device];
        let mut deal = 0;
        for (gi, g) in groups.into_iter().enumerate() {
            // held[gi] is ascending because keys within a group are increasing in rank
            let mut hold = held[gi].iter().peekable();
            for (r, ex) in g.into_iter().enumerate() {
                if hold.peek() == Some(&&r) {
                    hold.next();
                    continue;
                }
                device_shards[deal % clients_per_device].push(ex);
                deal += 1;
            }
        }
        for train in device_shards {
            shards.push(ClientShard {
                client_id: next_id,
                device,
                train,
            });
            next_id += 1;
        }
        test_sets.insert(device, test);
    }
    Ok(DatasetSplit { shards, test_sets })
}

/// Downsamples the majority class of each device to the minority count.
pub fn balance_classes(examples: Vec<LabeledExample>, seed: u64) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for (device, exs) in group_by_device(examples) {
        let mut groups: BTreeMap<usize, Vec<LabeledExample>> = BTreeMap::new();
        for ex in exs {
            groups.entry(ex.label).or_default().push(ex);
        }
        let keep = groups.values().map(Vec::len).min().unwrap_or(0);
        let mut rng = rng_for(seed, &[stream::BALANCE, device.code() as u64]);
        for (_, mut g) in groups {
            g.shuffle(&mut rng);
            g.truncate(keep);
            out.extend(g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(device: DeviceKind, n: usize, positives: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample {
                features: vec![i as f64],
                label: usize::from(i < positives),
                device,
            })
            .collect()
    }

    #[test]
    fn ten_examples_one_client() {
        let s = split_dataset(examples(DeviceKind::MW, 10, 5), 1, 0.2, 3).unwrap();
        assert_eq!(s.shards.len(), 1);
        assert_eq!(s.shards[0].train.len(), 8);
        assert_eq!(s.test_sets[&DeviceKind::MW].len(), 2);
    }

    #[test]
    fn deterministic() {
        let a = split_dataset(examples(DeviceKind::EP, 57, 20), 3, 0.2, 11).unwrap();
        let b = split_dataset(examples(DeviceKind::EP, 57, 20), 3, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(examples(DeviceKind::EP, 57, 20), 3, 0.2, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stratified_two_clients() {
        let s = split_dataset(examples(DeviceKind::MU, 100, 50), 2, 0.2, 5).unwrap();
        for sh in &s.shards {
            let pos = sh.train.iter().filter(|e| e.label == 1).count();
            let ratio = pos as f64 / sh.train.len() as f64;
            assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn partition_is_exact() {
        let mut all = examples(DeviceKind::MW, 40, 13);
        all.extend(examples(DeviceKind::MU, 31, 20));
        let s = split_dataset(all, 3, 0.25, 1).unwrap();
        for d in [DeviceKind::MW, DeviceKind::MU] {
            let mut seen: Vec<i64> = s
                .shards
                .iter()
                .filter(|sh| sh.device == d)
                .flat_map(|sh| sh.train.iter())
                .chain(&s.test_sets[&d])
                .map(|e| e.features[0] as i64)
                .collect();
            seen.sort();
            let n = if d == DeviceKind::MW { 40 } else { 31 };
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
        let ids: Vec<ClientId> = s.shards.iter().map(|s| s.client_id).collect();
        assert_eq!(ids, (0..6).collect::<Vec<_>>());
        assert!(s.shards.iter().all(|sh| !sh.train.is_empty()));
    }

    #[test]
    fn too_few_examples() {
        assert!(matches!(
            split_dataset(examples(DeviceKind::MW, 3, 1), 3, 0.2, 0),
            Err(Error::Config(_))
        ));
        assert!(split_dataset(examples(DeviceKind::MW, 30, 1), 0, 0.2, 0).is_err());
        assert!(split_dataset(examples(DeviceKind::MW, 30, 1), 2, 1.0, 0).is_err());
    }

    #[test]
    fn balancing_equalizes_classes() {
        let out = balance_classes(examples(DeviceKind::EP, 30, 7), 2);
        assert_eq!(out.len(), 14);
        assert_eq!(out.iter().filter(|e| e.label == 1).count(), 7);
    }
}
