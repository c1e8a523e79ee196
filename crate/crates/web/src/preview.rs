use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use hhhfl::ingest::{preprocess, DeviceConfig, DeviceKind, EegEvent};
use hhhfl::seed::rng_for;
use hhhfl::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessPreview {
    pub device: DeviceKind,
    pub sampling_rate_hz: u32,
    pub channels: Vec<String>,
    /// Raw microvolt traces, one per channel, in configured order.
    pub raw: Vec<Vec<f64>>,
    /// The resampled, concatenated, z-normalized projector input.
    pub features: Vec<f64>,
    pub label: usize,
}

/// Two seconds of alpha-band noise per channel, pushed through the same
/// preprocessing as real recordings.
pub fn preview_event(device: &str, code: i8, seed: u64) -> Result<PreprocessPreview> {
    let kind: DeviceKind = device.parse()?;
    let config = DeviceConfig::default_for(kind);
    let len = 2 * config.sampling_rate_hz as usize;
    let rate = config.sampling_rate_hz as f64;
    let mut channels = BTreeMap::new();
    let mut raw = Vec::new();
    for (c, name) in config.channel_names.iter().enumerate() {
        let mut rng = rng_for(seed, &[kind.code() as u64, c as u64]);
        let freq = 8.0 + 4.0 * rng.random::<f64>();
        let phase = TAU * rng.random::<f64>();
        let trace: Vec<f64> = (0..len)
            .map(|i| {
                let t = i as f64 / rate;
                let noise: f64 = rng.sample(StandardNormal);
                4200.0 + 25.0 * (TAU * freq * t + phase).sin() + 8.0 * noise
            })
            .collect();
        channels.insert(name.clone(), trace.clone());
        raw.push(trace);
    }
    let event = EegEvent {
        event_id: seed,
        device: kind,
        code,
        channels,
    };
    let ex = preprocess(&event, &config)?;
    Ok(PreprocessPreview {
        device: kind,
        sampling_rate_hz: config.sampling_rate_hz,
        channels: config.channel_names,
        raw,
        features: ex.features,
        label: ex.label,
    })
}
