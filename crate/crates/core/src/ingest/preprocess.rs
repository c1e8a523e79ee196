use super::device::{DeviceConfig, DeviceKind};
use super::events::EegEvent;
use crate::error::{Error, Result};

/// A fixed-length, z-normalized feature vector with its binary stimulus label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    /// 1 when a digit was shown, 0 otherwise.
    pub label: usize,
    pub device: DeviceKind,
}

/// 1 for codes 0..=9 (a digit was shown), 0 for -1.
pub fn stimulus_label(code: i8) -> usize {
    usize::from((0..=9).contains(&code))
}

/// Linear interpolation of `x` onto `len` evenly spaced points spanning the
/// same interval. Identity when the lengths already match.
pub fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() == len {
        return x.to_vec();
    }
    if len == 0 || x.is_empty() {
        return Vec::new();
    }
    if x.len() == 1 || len == 1 {
        return vec![x[0]; len];
    }
    let scale = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - lo as f64;
            x[lo] + (x[lo + 1] - x[lo]) * frac
        })
        .collect()
}

/// Subtracts the mean and divides by the population standard deviation
/// (or by 1 when it is below 1e-12).
pub fn z_normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let div = if sd < 1e-12 { 1.0 } else { sd };
    for v in x {
        *v = (*v - mean) / div;
    }
}

/// Resamples each channel to `input_dim / channels` points, concatenates in
/// configured channel order, resamples the whole vector to exactly
/// `input_dim`, then z-normalizes.
pub fn preprocess(event: &EegEvent, config: &DeviceConfig) -> Result<LabeledExample> {
    if event.device != config.kind {
        return Err(Error::Config(format!(
            "event {} is from {} but config is for {}",
            event.event_id, event.device, config.kind
        )));
    }
    config.validate()?;
    let per_channel = (config.input_dim / config.channel_names.len()).max(1);
    let mut concat = Vec::with_capacity(per_channel * config.channel_names.len());
    for name in &config.channel_names {
        let samples = event.channels.get(name).ok_or_else(|| {
            Error::Data(format!("event {} lacks channel {name}", event.event_id))
        })?;
        if samples.is_empty() {
            return Err(Error::Data(format!(
                "event {} channel {name} is empty",
                event.event_id
            )));
        }
        concat.extend(resample_linear(samples, per_channel));
    }
    let mut features = resample_linear(&concat, config.input_dim);
    z_normalize(&mut features);
    Ok(LabeledExample {
        features,
        label: stimulus_label(event.code),
        device: event.device,
    })
}
