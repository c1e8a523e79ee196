//! Built-in checks behind the `gradcheck` and `selftest` subcommands.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::error::Result;
use crate::federation::{run_baseline, run_hhhfl, weighted_mean, Hyperparameters, LocalObjective, MessageKind};
use crate::ingest::{parse_mindbigdata_line, split_dataset, DeviceKind};
use crate::mmd::{mmd_squared, FrozenTarget, Kernel, KernelConfig, MmdConfig};
use crate::models::{build_classifier, build_projector, ArchConfig, NUM_CLASSES};
use crate::numerics::{
    finite_difference_check, max_relative_error, Activation, Batch, ConvMeta, Layer, LayerParams, Matrix, Network,
};
use crate::seed::rng_for;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_dense_net(rng: &mut impl Rng) -> Network {
    let (i, h, o) = (rng.random_range(2..7), rng.random_range(2..7), rng.random_range(2..5));
    Network::new(
        i,
        vec![
            Layer {
                params: LayerParams::dense(normal_matrix(rng, h, i, 0.7), normal_vec(rng, h, 0.3)).unwrap(),
                activation: Activation::Relu,
            },
            Layer {
                params: LayerParams::dense(normal_matrix(rng, o, h, 0.7), normal_vec(rng, o, 0.3)).unwrap(),
                activation: Activation::Identity,
            },
        ],
    )
    .unwrap()
}

fn random_conv_net(rng: &mut impl Rng) -> Network {
    let meta = ConvMeta {
        in_channels: rng.random_range(1..3),
        out_channels: rng.random_range(1..4),
        kernel_width: rng.random_range(2..5),
        stride: rng.random_range(1..3),
    };
    let length = rng.random_range(8..14);
    let conv_out = meta.out_channels * meta.output_length(length).unwrap();
    Network::new(
        meta.in_channels * length,
        vec![
            Layer {
                params: LayerParams::conv1d(
                    meta,
                    normal_matrix(rng, meta.out_channels, meta.in_channels * meta.kernel_width, 0.7),
                    normal_vec(rng, meta.out_channels, 0.3),
                )
                .unwrap(),
                activation: Activation::Relu,
            },
            Layer {
                params: LayerParams::dense(normal_matrix(rng, 3, conv_out, 0.5), normal_vec(rng, 3, 0.3)).unwrap(),
                activation: Activation::Identity,
            },
        ],
    )
    .unwrap()
}

fn random_inputs(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let xs = (0..n).map(|_| normal_vec(rng, dim, 1.0)).collect();
    let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (xs, ys)
}

fn small_arch() -> ArchConfig {
    ArchConfig {
        embedding_dim: 10,
        conv_channels: 3,
        kernel_width: 4,
        stride: 2,
    }
}

/// Max relative error of each gradient family on one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub seed: u64,
    pub dense: f64,
    pub conv1d: f64,
    pub projector_classifier: f64,
    pub ce_mmd: f64,
}

impl GradcheckCase {
    pub fn max(&self) -> f64 {
        self.dense.max(self.conv1d).max(self.projector_classifier).max(self.ce_mmd)
    }
}

pub fn gradcheck_seed(seed: u64, eps: f64) -> Result<GradcheckCase> {
    let mut rng = rng_for(seed, &[0x6c]);

    let net = random_dense_net(&mut rng);
    let (xs, ys) = random_inputs(&mut rng, 4, net.input_len(), net.output_len());
    let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), ys)?;
    let extra: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut rng, net.output_len(), 0.2)).collect();
    let dense = finite_difference_check(&net, &batch, Some(&extra), eps)?;

    let net = random_conv_net(&mut rng);
    let (xs, ys) = random_inputs(&mut rng, 4, net.input_len(), net.output_len());
    let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), ys)?;
    let conv1d = finite_difference_check(&net, &batch, None, eps)?;

    let arch = small_arch();
    let input_dim = rng.random_range(24..48);
    let projector = build_projector(&arch, DeviceKind::MU, input_dim, &mut rng)?;
    let classifier = build_classifier(arch.embedding_dim, &mut rng)?;
    let composed = projector.network().then(classifier.network())?;
    let (xs, ys) = random_inputs(&mut rng, 4, input_dim, NUM_CLASSES);
    let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), ys)?;
    let projector_classifier = finite_difference_check(&composed, &batch, None, eps)?;

    let target = normal_matrix(&mut rng, 6, arch.embedding_dim, 0.5);
    let kernel = if seed.is_multiple_of(2) {
        Kernel::rbf(rng.random_range(0.5..3.0))?
    } else {
        Kernel::Linear
    };
    let objective = LocalObjective {
        targets: vec![(rng.random_range(0.5..2.0), FrozenTarget::new(target, &kernel))],
        kernel: Some(kernel),
    };
    let ce_mmd = composite_error(&objective, projector.network(), classifier.network(), &batch, eps)?;

    Ok(GradcheckCase {
        seed,
        dense,
        conv1d,
        projector_classifier,
        ce_mmd,
    })
}

/// Finite-difference check of the full client objective over projector and
/// classifier parameters jointly.
pub fn composite_error(
    objective: &LocalObjective,
    projector: &Network,
    classifier: &Network,
    batch: &Batch<'_>,
    eps: f64,
) -> Result<f64> {
    let step = objective.value_and_grads(projector, classifier, batch)?;
    let mut analytic = step.projector_grads.flat();
    analytic.extend(step.classifier_grads.flat());
    let np = projector.param_count();
    let mut params = projector.flat_params();
    params.extend(classifier.flat_params());
    let (mut p, mut c) = (projector.clone(), classifier.clone());
    max_relative_error(&params, &analytic, eps, |flat| {
        p.set_flat_params(&flat[..np])?;
        c.set_flat_params(&flat[np..])?;
        objective.value(&p, &c, batch)
    })
}

pub fn gradcheck_suite(seeds: u64, eps: f64) -> Result<Vec<GradcheckCase>> {
    (0..seeds).map(|s| gradcheck_seed(s, eps)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail: detail.into(),
    }
}

fn naive_mmd2(a: &Matrix, b: &Matrix, k: &Kernel) -> f64 {
    let mean = |x: &Matrix, y: &Matrix| {
        let mut s = 0.0;
        for p in x.row_iter() {
            for q in y.row_iter() {
                s += k.eval(p, q);
            }
        }
        s / (x.rows() * y.rows()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

/// A fast end-to-end sweep of the simulator's core guarantees.
pub fn selftest() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    let cases = gradcheck_suite(20, crate::numerics::DEFAULT_EPS)?;
    let worst = cases.iter().map(GradcheckCase::max).fold(0.0, f64::max);
    out.push(check(
        "gradients",
        worst < GRADCHECK_TOLERANCE,
        format!("max relative error {worst:.2e} over 20 seeds"),
    ));

    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = rng_for(seed, &[0x33]);
        let (n, m) = (rng.random_range(1..33), rng.random_range(1..33));
        let a = normal_matrix(&mut rng, n, 3, 1.0);
        let b = normal_matrix(&mut rng, m, 3, 1.0);
        for k in [Kernel::rbf(1.3)?, Kernel::Linear] {
            worst = worst.max((mmd_squared(&a, &b, &k)? - naive_mmd2(&a, &b, &k).max(0.0)).abs());
        }
    }
    let lin = mmd_squared(
        &Matrix::from_rows(&[vec![0.0], vec![2.0]])?,
        &Matrix::from_rows(&[vec![1.0], vec![3.0]])?,
        &Kernel::Linear,
    )?;
    out.push(check(
        "mmd",
        worst < 1e-10 && (lin - 1.0).abs() < 1e-12,
        format!("max deviation from double sum {worst:.1e}; linear {{0,2}} vs {{1,3}} = {lin}"),
    ));

    let v1 = [1.0, -2.0, 0.5];
    let v2 = [3.0, 0.0, -1.5];
    let m12 = weighted_mean(&[(&v1, 2), (&v2, 3)])?;
    let m21 = weighted_mean(&[(&v2, 3), (&v1, 2)])?;
    let same = weighted_mean(&[(&v1, 2), (&v1, 7)])?;
    let ex = weighted_mean(&[(&[0.0], 1), (&[4.0], 3)])?;
    out.push(check(
        "aggregation",
        m12 == m21 && same == v1 && ex == [3.0],
        format!("(0, 4) weighted (1, 3) = {}", ex[0]),
    ));

    let spec = SyntheticSpec::benchmark(&DeviceKind::ALL, 8, 4.0);
    let data = generate_synthetic(&spec, 11)?;
    let split = split_dataset(data.into_values().flatten().collect(), 2, 0.25, 11)?;
    let hyper = Hyperparameters {
        rounds: 2,
        batch_size: 4,
        exchange_size: 3,
        ..Default::default()
    };
    let arch = small_arch();
    let mmd = MmdConfig::uniform(KernelConfig::default(), &DeviceKind::ALL, 1.0)?;
    let (reports, log) = run_hhhfl(&split, &arch, mmd.clone(), &hyper, 11, true, |_| {})?;
    let raw_dims = [440, 512, 1024];
    let leaked = log
        .iter()
        .flat_map(|e| &e.vector_lens)
        .filter(|l| raw_dims.contains(l))
        .count();
    let emb_ok = log
        .iter()
        .filter(|e| e.kind == MessageKind::Update)
        .all(|e| e.vector_lens[3..].iter().all(|&l| l == arch.embedding_dim));
    out.push(check(
        "privacy",
        leaked == 0 && emb_ok && !log.is_empty(),
        format!("{} messages, {leaked} raw-length vectors", log.len()),
    ));

    let (again, _) = run_hhhfl(&split, &arch, mmd, &hyper, 11, false, |_| {})?;
    let metrics = |r: &[crate::federation::RoundReport]| r.iter().map(|x| x.metrics.clone()).collect::<Vec<_>>();
    out.push(check("determinism", metrics(&reports) == metrics(&again), "two identical runs"));

    let one = split.restrict(&[DeviceKind::EP]);
    let one = crate::ingest::DatasetSplit {
        shards: one.shards.into_iter().take(1).collect(),
        test_sets: one.test_sets,
    };
    let zero = MmdConfig::new(KernelConfig::default(), BTreeMap::new())?;
    let (h, _) = run_hhhfl(&one, &arch, zero, &hyper, 3, false, |_| {})?;
    let (b, _) = run_baseline(DeviceKind::EP, &one, &arch, KernelConfig::default(), &hyper, 3, false, |_| {})?;
    out.push(check(
        "reduction",
        metrics(&h) == metrics(&b),
        "one device, one client, zero weights vs baseline",
    ));

    let bad = ["", "1\t2\tEP", "1\t2\tXX\tAF3\t0\t1\t0.5", "1\t2\tEP\tAF3\t0\t3\t0.5,1", "1\t2\tEP\tAF3\t0\t1\tnan"];
    let typed = bad.iter().enumerate().all(|(i, l)| parse_mindbigdata_line(l, i + 1).is_err());
    out.push(check("ingestion", typed, format!("{} malformed lines rejected", bad.len())));

    Ok(out)
}
