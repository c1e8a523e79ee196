mod common;

use hhhfl::harness::{generate_synthetic, SyntheticSpec};
use hhhfl::ingest::{split_dataset, DeviceKind};

#[test]
fn six_sigma_is_linearly_separable_per_device() {
    let spec = SyntheticSpec::benchmark(&DeviceKind::ALL, 1000, 6.0);
    let data = generate_synthetic(&spec, 21).unwrap();
    let split = split_dataset(data.into_values().flatten().collect(), 1, 0.2, 21).unwrap();
    for shard in &split.shards {
        let acc = common::logistic_probe(&shard.train, &split.test_sets[&shard.device], 60, 0.5);
        assert!(acc > 0.99, "{}: {acc}", shard.device);
    }
}

#[test]
fn devices_do_not_share_a_raw_space() {
    let spec = SyntheticSpec::benchmark(&DeviceKind::ALL, 5, 4.0);
    let data = generate_synthetic(&spec, 1).unwrap();
    let dims: Vec<usize> = data.values().map(|v| v[0].features.len()).collect();
    assert_eq!(dims, vec![1024, 440, 512]);
    for exs in data.values() {
        assert_eq!(exs.iter().filter(|e| e.label == 1).count(), 5);
    }
}
