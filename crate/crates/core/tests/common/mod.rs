#![allow(dead_code)]

use std::collections::BTreeMap;

use hhhfl::federation::{evaluate, LocalObjective};
use hhhfl::ingest::{DatasetSplit, DeviceKind, LabeledExample};
use hhhfl::models::{init_params, ArchConfig, ModelParams};
use hhhfl::numerics::{sgd_step, Batch};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Best and final pooled test accuracy of centralized training on all of
/// `devices`' training data: per-device projectors, one shared classifier,
/// plain CE, device batches interleaved.
pub struct OracleResult {
    pub best_pooled: f64,
    pub final_pooled: f64,
    pub best_per_device: BTreeMap<DeviceKind, f64>,
}

pub fn centralized_oracle(
    split: &DatasetSplit,
    devices: &[DeviceKind],
    arch: &ArchConfig,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> OracleResult {
    let split = split.restrict(devices);
    let mut train: BTreeMap<DeviceKind, Vec<&LabeledExample>> = BTreeMap::new();
    for s in &split.shards {
        train.entry(s.device).or_default().extend(s.train.iter());
    }
    let dims = train.iter().map(|(d, v)| (*d, v[0].features.len())).collect();
    let mut params: ModelParams = init_params(arch, &dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let objective = LocalObjective::default();
    let mut best_pooled: f64 = 0.0;
    let mut final_pooled = 0.0;
    let mut best_per_device: BTreeMap<DeviceKind, f64> = BTreeMap::new();
    for _ in 0..epochs {
        let mut batches: Vec<(DeviceKind, Vec<&LabeledExample>)> = Vec::new();
        for (d, exs) in &train {
            let mut exs = exs.clone();
            exs.shuffle(&mut rng);
            for c in exs.chunks(batch_size) {
                batches.push((*d, c.to_vec()));
            }
        }
        batches.shuffle(&mut rng);
        for (d, b) in batches {
            let batch = Batch::new(
                b.iter().map(|e| e.features.as_slice()).collect(),
                b.iter().map(|e| e.label).collect(),
            )
            .unwrap();
            let proj = params.projectors[&d].clone();
            let step = objective
                .value_and_grads(proj.network(), params.classifier.network(), &batch)
                .unwrap();
            let p = sgd_step(proj.network(), &step.projector_grads, lr).unwrap();
            let c = sgd_step(params.classifier.network(), &step.classifier_grads, lr).unwrap();
            params.projectors.insert(d, proj.with_network(p).unwrap());
            params.classifier = params.classifier.with_network(c).unwrap();
        }
        let ev = evaluate(&params, &split.test_sets).unwrap();
        best_pooled = best_pooled.max(ev.pooled);
        final_pooled = ev.pooled;
        for (d, a) in ev.per_device {
            let e = best_per_device.entry(d).or_insert(0.0);
            *e = e.max(a);
        }
    }
    OracleResult {
        best_pooled,
        final_pooled,
        best_per_device,
    }
}

/// Test-side kernel, written out independently of the library's.
#[derive(Clone, Copy, Debug)]
pub enum OracleKernel {
    Rbf(f64),
    Linear,
}

impl OracleKernel {
    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            OracleKernel::Rbf(s) => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * s * s)).exp()
            }
            OracleKernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn to_kernel(self) -> hhhfl::mmd::Kernel {
        match self {
            OracleKernel::Rbf(s) => hhhfl::mmd::Kernel::rbf(s).unwrap(),
            OracleKernel::Linear => hhhfl::mmd::Kernel::Linear,
        }
    }
}

/// Biased MMD² as the literal double sum.
pub fn naive_mmd2(a: &[Vec<f64>], b: &[Vec<f64>], k: OracleKernel) -> f64 {
    let mut saa = 0.0;
    for x in a {
        for y in a {
            saa += k.eval(x, y);
        }
    }
    let mut sbb = 0.0;
    for x in b {
        for y in b {
            sbb += k.eval(x, y);
        }
    }
    let mut sab = 0.0;
    for x in a {
        for y in b {
            sab += k.eval(x, y);
        }
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m)
}

/// Flat weighted mean in the given order, clamped to the inputs' range.
pub fn oracle_weighted_mean(vectors: &[(Vec<f64>, usize)]) -> Vec<f64> {
    let total: f64 = vectors.iter().map(|(_, n)| *n as f64).sum();
    let dim = vectors[0].0.len();
    (0..dim)
        .map(|i| {
            let mut s = 0.0;
            for (v, n) in vectors {
                s += (*n as f64 / total) * v[i];
            }
            let lo = vectors.iter().map(|(v, _)| v[i]).fold(f64::INFINITY, f64::min);
            let hi = vectors.iter().map(|(v, _)| v[i]).fold(f64::NEG_INFINITY, f64::max);
            s.clamp(lo, hi)
        })
        .collect()
}

/// Full-batch logistic regression on raw features; returns test accuracy.
pub fn logistic_probe(train: &[LabeledExample], test: &[LabeledExample], iters: usize, lr: f64) -> f64 {
    let d = train[0].features.len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..iters {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for e in train {
            let z: f64 = e.features.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - e.label as f64;
            for (g, x) in gw.iter_mut().zip(&e.features) {
                *g += r * x;
            }
            gb += r;
        }
        let n = train.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
    }
    let correct = test
        .iter()
        .filter(|e| {
            let z: f64 = e.features.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
            usize::from(z > 0.0) == e.label
        })
        .count();
    correct as f64 / test.len() as f64
}

pub const VALID_LINE: &str = "67635\t67635\tEP\tAF3\t6\t4\t4395.9,4382.5,4377.4,4387.1";

/// Deterministic malformed MindBigData lines, each broken in one way.
pub fn malformed_corpus(seed: u64) -> Vec<String> {
    let fields: Vec<&str> = VALID_LINE.split('\t').collect();
    let mut out: Vec<String> = vec![
        String::new(),
        "   ".into(),
        "\r".into(),
        VALID_LINE.replace('\t', " "),
        VALID_LINE.replace('\t', ","),
        format!("{VALID_LINE}\textra"),
    ];
    // truncated to every field count below 7
    for k in 1..7 {
        out.push(fields[..k].join("\t"));
    }
    // cut mid-line at every byte offset that leaves fewer fields
    for cut in 1..VALID_LINE.len() {
        let s = &VALID_LINE[..cut];
        if s.split('\t').count() < 7 {
            out.push(s.to_string());
        }
    }
    let replace = |i: usize, v: &str| {
        let mut f = fields.clone();
        f[i] = v;
        f.join("\t")
    };
    for bad in ["x", "-1", "1.5", "", "99999999999999999999999", "0x10"] {
        out.push(replace(0, bad));
        out.push(replace(1, bad));
        out.push(replace(5, bad));
    }
    for bad in ["XX", "ep", "", "EPOC", "M W"] {
        out.push(replace(2, bad));
    }
    for bad in ["10", "-2", "100", "", "six", "3.0"] {
        out.push(replace(4, bad));
    }
    for bad in ["3", "5", "0", "400"] {
        out.push(replace(5, bad));
    }
    for bad in [
        "4395.9,4382.5,4377.4,abc",
        "4395.9,,4377.4,4387.1",
        "4395.9,4382.5,4377.4,NaN",
        "4395.9,4382.5,inf,4387.1",
        "4395.9;4382.5;4377.4;4387.1",
        "4395.9,4382.5,4377.4,4387.1,",
        "1e999,1,2,3",
    ] {
        out.push(replace(6, bad));
    }
    // random byte garbage with the right shape
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    for _ in 0..64 {
        let mut f: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
        let i = rng.random_range(0..7);
        let junk: String = (0..rng.random_range(1..6))
            .map(|_| b"#?z-.~"[rng.random_range(0..6)] as char)
            .collect();
        f[i] = if i == 3 { format!("{}\t{junk}", f[i]) } else { format!("{}{junk}", f[i]) };
        out.push(f.join("\t"));
    }
    out
}
