use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use hhhfl::federation::{input_dims, Federation, Hyperparameters};
use hhhfl::harness::{generate_synthetic, SyntheticDevice, SyntheticSpec};
use hhhfl::ingest::{split_dataset, DeviceKind};
use hhhfl::mmd::{KernelConfig, MmdConfig};
use hhhfl::models::{init_params, project, ArchConfig};
use hhhfl::{Error, Result};

/// Settings for the in-browser federation. Input sizes are scaled down from
/// the real devices so a round takes milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub devices: Vec<DeviceKind>,
    pub lambda: f64,
    pub separation: f64,
    pub examples_per_class: usize,
    pub clients_per_device: usize,
    pub rounds: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            devices: DeviceKind::ALL.to_vec(),
            lambda: 1.0,
            separation: 4.0,
            examples_per_class: 80,
            clients_per_device: 2,
            rounds: 40,
            learning_rate: 0.1,
            seed: 1,
        }
    }
}

fn demo_dim(d: DeviceKind) -> usize {
    match d {
        DeviceKind::MW => 96,
        DeviceKind::EP => 64,
        DeviceKind::MU => 48,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRound {
    pub round: u32,
    pub accuracy: BTreeMap<DeviceKind, f64>,
    pub pooled_accuracy: f64,
    pub train_loss: f64,
    pub mmd2: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingView {
    /// Per device: `[x, y, label]` for each test example.
    pub points: BTreeMap<DeviceKind, Vec<[f64; 3]>>,
}

pub struct FederationRunner {
    fed: Federation,
}

impl FederationRunner {
    pub fn new(config: &DemoConfig) -> Result<Self> {
        if config.devices.is_empty() {
            return Err(Error::Config("the demo needs at least one device".into()));
        }
        if config.examples_per_class > 500 || config.rounds > 500 {
            return Err(Error::Config("keep examples_per_class and rounds at 500 or less".into()));
        }
        let spec = SyntheticSpec {
            devices: config
                .devices
                .iter()
                .map(|&d| {
                    let s = SyntheticDevice {
                        input_dim: demo_dim(d),
                        examples_per_class: config.examples_per_class,
                        separation: config.separation,
                        noise: 1.0,
                    };
                    (d, s)
                })
                .collect(),
        };
        let data = generate_synthetic(&spec, config.seed)?;
        let split = split_dataset(
            data.into_values().flatten().collect(),
            config.clients_per_device,
            0.25,
            config.seed,
        )?;
        let arch = ArchConfig {
            embedding_dim: 10,
            conv_channels: 4,
            kernel_width: 8,
            stride: 4,
        };
        let params = init_params(&arch, &input_dims(&split)?, config.seed)?;
        let devices = split.devices();
        let mmd = MmdConfig::uniform(KernelConfig::default(), &devices, config.lambda)?;
        let hyper = Hyperparameters {
            rounds: config.rounds,
            local_epochs: 1,
            batch_size: 16,
            learning_rate: config.learning_rate,
            exchange_size: 32,
        };
        let exchange = devices.len() > 1;
        let fed = Federation::new(params, &split, mmd, hyper, config.seed, exchange, false)?;
        Ok(FederationRunner { fed })
    }

    pub fn is_done(&self) -> bool {
        self.fed.is_done()
    }

    pub fn step(&mut self) -> Result<DemoRound> {
        let m = self.fed.step()?.metrics;
        Ok(DemoRound {
            round: m.round,
            accuracy: m.per_device_accuracy,
            pooled_accuracy: m.pooled_accuracy,
            train_loss: m.mean_train_loss,
            mmd2: m.pairwise_mmd2,
        })
    }

    pub fn embeddings(&self) -> Result<EmbeddingView> {
        let global = &self.fed.server.global;
        let mut all = Vec::new();
        for (d, tests) in &self.fed.test_sets {
            for ex in tests {
                all.push((*d, project(&global.projectors[d], ex)?, ex.label));
            }
        }
        let rows: Vec<&[f64]> = all.iter().map(|(_, e, _)| e.as_slice()).collect();
        let (mean, axes) = principal_axes(&rows);
        let mut points: BTreeMap<DeviceKind, Vec<[f64; 3]>> = BTreeMap::new();
        for (d, e, label) in &all {
            let c: Vec<f64> = e.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let xy = [dot(&c, &axes[0]), dot(&c, &axes[1])];
            points.entry(*d).or_default().push([xy[0], xy[1], *label as f64]);
        }
        Ok(EmbeddingView { points })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean and the top two eigenvectors of the covariance, by power iteration
/// with deflation. Each axis is signed so its largest entry is positive,
/// which keeps the picture from flipping between rounds.
pub(crate) fn principal_axes(rows: &[&[f64]]) -> (Vec<f64>, [Vec<f64>; 2]) {
    let dim = rows.first().map_or(0, |r| r.len());
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(*r) {
            *m += x / n;
        }
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for r in rows {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    let mut axes: [Vec<f64>; 2] = [vec![0.0; dim], vec![0.0; dim]];
    for axis in &mut axes {
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
            let norm = dot(&w, &w).sqrt();
            if norm < 1e-300 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
            lambda = norm;
        }
        if let Some(k) = (0..dim).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())) {
            if v[k] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        *axis = v;
    }
    (mean, axes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_of_an_elongated_cloud() {
        let pts: Vec<Vec<f64>> = (-10..=10)
            .flat_map(|t| [vec![3.0 * t as f64, 0.5, 0.0], vec![3.0 * t as f64, -0.5, 0.0]])
            .collect();
        let rows: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let (_, [a, b]) = principal_axes(&rows);
        assert!((a[0] - 1.0).abs() < 1e-9, "{a:?}");
        assert!((b[1].abs() - 1.0).abs() < 1e-6, "{b:?}");
        assert!(dot(&a, &b).abs() < 1e-6);
    }
}
