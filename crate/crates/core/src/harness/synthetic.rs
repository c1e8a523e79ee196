use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{z_normalize, DeviceKind, LabeledExample};
use crate::seed::{rng_for, stream};

/// One pseudo-device of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDevice {
    pub input_dim: usize,
    pub examples_per_class: usize,
    /// Distance between the two class means, in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation.
    #[serde(default = "unit")]
    pub noise: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyntheticSpec {
    pub devices: BTreeMap<DeviceKind, SyntheticDevice>,
}

impl SyntheticSpec {
    /// Input dims 1024/440/512 for MW/EP/MU, as the real devices use.
    pub fn benchmark(devices: &[DeviceKind], examples_per_class: usize, separation: f64) -> Self {
        SyntheticSpec {
            devices: devices
                .iter()
                .map(|&d| {
                    let input_dim = match d {
                        DeviceKind::MW => 1024,
                        DeviceKind::EP => 440,
                        DeviceKind::MU => 512,
                    };
                    (
                        d,
                        SyntheticDevice {
                            input_dim,
                            examples_per_class,
                            separation,
                            noise: 1.0,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::Config("synthetic spec lists no devices".into()));
        }
        let mut dims: Vec<usize> = Vec::new();
        for (d, s) in &self.devices {
            if !(s.separation > 0.0 && s.separation.is_finite()) {
                return Err(Error::Config(format!("{d}: separation must be positive")));
            }
            if !(s.noise > 0.0 && s.noise.is_finite()) {
                return Err(Error::Config(format!("{d}: noise must be positive")));
            }
            if s.input_dim < 2 || s.examples_per_class == 0 {
                return Err(Error::Config(format!("{d}: input_dim >= 2 and examples_per_class >= 1 required")));
            }
            if dims.contains(&s.input_dim) {
                return Err(Error::Config(format!(
                    "{d}: input_dim {} repeats another device's; synthetic devices must be heterogeneous",
                    s.input_dim
                )));
            }
            dims.push(s.input_dim);
        }
        Ok(())
    }
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Two isotropic Gaussian classes per device whose mean-difference axis is a
/// device-specific random direction in that device's own input space.
///
/// Rotating isotropic noise leaves its distribution unchanged, so the random
/// rotation only has to be applied to the class-mean axis. Examples are
/// z-normalized like preprocessed recordings, classes alternate 0, 1, 0, ...
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<BTreeMap<DeviceKind, Vec<LabeledExample>>> {
    spec.validate()?;
    let mut out = BTreeMap::new();
    for (&device, s) in &spec.devices {
        let mut rng = rng_for(seed, &[stream::SYNTHETIC, device.code() as u64]);
        let axis = random_unit(&mut rng, s.input_dim);
        let half = 0.5 * s.separation * s.noise;
        let mut examples = Vec::with_capacity(2 * s.examples_per_class);
        for _ in 0..s.examples_per_class {
            for label in 0..2usize {
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let mut features: Vec<f64> = axis
                    .iter()
                    .map(|a| {
                        let z: f64 = rng.sample(StandardNormal);
                        sign * half * a + s.noise * z
                    })
                    .collect();
                z_normalize(&mut features);
                examples.push(LabeledExample {
                    features,
                    label,
                    device,
                });
            }
        }
        out.insert(device, examples);
    }
    Ok(out)
}
