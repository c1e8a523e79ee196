//! Kernel two-sample machinery for aligning embedding distributions: RBF and
//! linear kernels, the median bandwidth heuristic, the biased (V-statistic)
//! MMD² estimator and its gradient with respect to one sample.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DeviceKind;
use crate::numerics::{dot, squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Policy(BandwidthPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthPolicy {
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    #[serde(default = "median")]
    pub bandwidth: Bandwidth,
}

fn median() -> Bandwidth {
    Bandwidth::Policy(BandwidthPolicy::Median)
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: KernelKind::Rbf,
            bandwidth: median(),
        }
    }
}

/// A kernel with its bandwidth fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Rbf { sigma: f64 },
    Linear,
}

impl Kernel {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("rbf bandwidth must be positive, got {sigma}")));
        }
        Ok(Kernel::Rbf { sigma })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { sigma } => (-squared_distance(x, y) / (2.0 * sigma * sigma)).exp(),
            Kernel::Linear => dot(x, y),
        }
    }

    /// Adds `scale * d k(x, y) / dx` into `out`.
    #[inline]
    fn add_grad_x(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            Kernel::Rbf { sigma } => {
                let s2 = sigma * sigma;
                let k = (-squared_distance(x, y) / (2.0 * s2)).exp();
                let c = -scale * k / s2;
                for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
                    *o += c * (xi - yi);
                }
            }
            Kernel::Linear => {
                for (o, yi) in out.iter_mut().zip(y) {
                    *o += scale * yi;
                }
            }
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let (KernelKind::Rbf, Bandwidth::Fixed(s)) = (self.kind, self.bandwidth) {
            Kernel::rbf(s)?;
        }
        Ok(())
    }

    /// Fixes the bandwidth, running the median heuristic over `pooled` when
    /// the policy asks for it.
    pub fn resolve(&self, pooled: &Matrix) -> Result<Kernel> {
        match (self.kind, self.bandwidth) {
            (KernelKind::Linear, _) => Ok(Kernel::Linear),
            (KernelKind::Rbf, Bandwidth::Fixed(s)) => Kernel::rbf(s),
            (KernelKind::Rbf, Bandwidth::Policy(BandwidthPolicy::Median)) => Kernel::rbf(median_heuristic(pooled)?),
        }
    }
}

/// Evaluates a kernel whose bandwidth is already fixed in the config.
pub fn kernel_eval(config: &KernelConfig, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("kernel arguments of length {} and {}", x.len(), y.len())));
    }
    let k = match (config.kind, config.bandwidth) {
        (KernelKind::Linear, _) => Kernel::Linear,
        (KernelKind::Rbf, Bandwidth::Fixed(s)) => Kernel::rbf(s)?,
        (KernelKind::Rbf, Bandwidth::Policy(_)) => {
            return Err(Error::Precondition("rbf bandwidth not resolved".into()))
        }
    };
    Ok(k.eval(x, y))
}

/// `sqrt(median pairwise squared distance / 2)`, or 1 when that median is 0.
/// An even number of pairs takes the mean of the two middle values.
pub fn median_heuristic(points: &Matrix) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::Config(format!("median heuristic needs at least 2 points, got {n}")));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(squared_distance(points.row(i), points.row(j)));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    Ok(if med > 0.0 { (med / 2.0).sqrt() } else { 1.0 })
}

/// A sample of embeddings drawn from one device's distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSample {
    pub device: DeviceKind,
    pub points: Matrix,
}

impl EmbeddingSample {
    pub fn new(device: DeviceKind, points: Matrix) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::Precondition(format!("{device}: empty embedding sample")));
        }
        if !points.is_finite() {
            return Err(Error::Data(format!("{device}: non-finite embedding")));
        }
        Ok(EmbeddingSample { device, points })
    }
}

fn check_pair(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Precondition("MMD needs nonempty samples".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "MMD samples of dimension {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    Ok(())
}

/// `(1/n²) Σ k(x_i, x_j)` over all ordered pairs, diagonal included.
pub fn mean_self_kernel(x: &Matrix, kernel: &Kernel) -> f64 {
    let n = x.rows();
    let mut s = 0.0;
    for i in 0..n {
        let xi = x.row(i);
        s += kernel.eval(xi, xi);
        for j in i + 1..n {
            s += 2.0 * kernel.eval(xi, x.row(j));
        }
    }
    s / (n * n) as f64
}

fn mean_cross_kernel(a: &Matrix, b: &Matrix, kernel: &Kernel) -> f64 {
    let mut s = 0.0;
    for ai in a.row_iter() {
        for bj in b.row_iter() {
            s += kernel.eval(ai, bj);
        }
    }
    s / (a.rows() * b.rows()) as f64
}

/// Biased V-statistic estimate of MMD², clamped at 0.
pub fn mmd_squared(a: &Matrix, b: &Matrix, kernel: &Kernel) -> Result<f64> {
    check_pair(a, b)?;
    let raw = mean_self_kernel(a, kernel) + mean_self_kernel(b, kernel) - 2.0 * mean_cross_kernel(a, b, kernel);
    Ok(raw.max(0.0))
}

/// `∂ MMD² / ∂ a_p` for every row `p` of `a`, with `b` and the bandwidth held fixed.
pub fn mmd_gradient(a: &Matrix, b: &Matrix, kernel: &Kernel) -> Result<Matrix> {
    check_pair(a, b)?;
    let n = a.rows() as f64;
    let m = b.rows() as f64;
    let mut g = Matrix::zeros(a.rows(), a.cols());
    for p in 0..a.rows() {
        let ap = a.row(p);
        let out = g.row_mut(p);
        for aj in a.row_iter() {
            kernel.add_grad_x(ap, aj, 2.0 / (n * n), out);
        }
        for bj in b.row_iter() {
            kernel.add_grad_x(ap, bj, -2.0 / (n * m), out);
        }
    }
    Ok(g)
}

/// A constant comparison sample with its self-kernel term cached, for
/// repeated MMD evaluations against changing batches.
#[derive(Debug, Clone)]
pub struct FrozenTarget {
    pub points: Matrix,
    self_term: f64,
}

impl FrozenTarget {
    pub fn new(points: Matrix, kernel: &Kernel) -> Self {
        let self_term = mean_self_kernel(&points, kernel);
        FrozenTarget { points, self_term }
    }

    /// MMD²(a, target) and its gradient with respect to `a`.
    pub fn value_and_grad(&self, a: &Matrix, kernel: &Kernel) -> Result<(f64, Matrix)> {
        check_pair(a, &self.points)?;
        let raw = mean_self_kernel(a, kernel) + self.self_term - 2.0 * mean_cross_kernel(a, &self.points, kernel);
        Ok((raw.max(0.0), mmd_gradient(a, &self.points, kernel)?))
    }
}

/// Unordered device pair, stored low-then-high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DevicePair(DeviceKind, DeviceKind);

impl DevicePair {
    pub fn new(a: DeviceKind, b: DeviceKind) -> Self {
        if a <= b {
            DevicePair(a, b)
        } else {
            DevicePair(b, a)
        }
    }

    pub fn first(&self) -> DeviceKind {
        self.0
    }

    pub fn second(&self) -> DeviceKind {
        self.1
    }
}

/// Every unordered pair of distinct devices, in device order.
pub fn device_pairs(devices: &[DeviceKind]) -> Vec<DevicePair> {
    let mut ds = devices.to_vec();
    ds.sort();
    ds.dedup();
    let mut out = Vec::new();
    for i in 0..ds.len() {
        for j in i + 1..ds.len() {
            out.push(DevicePair::new(ds[i], ds[j]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdConfig {
    pub kernel: KernelConfig,
    weights: BTreeMap<DevicePair, f64>,
}

impl MmdConfig {
    pub fn new(kernel: KernelConfig, weights: BTreeMap<DevicePair, f64>) -> Result<Self> {
        kernel.validate()?;
        if let Some((p, w)) = weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!(
                "lambda for {}-{} must be a nonnegative number, got {w}",
                p.0, p.1
            )));
        }
        Ok(MmdConfig { kernel, weights })
    }

    /// The same `lambda` for every pair of `devices`.
    pub fn uniform(kernel: KernelConfig, devices: &[DeviceKind], lambda: f64) -> Result<Self> {
        MmdConfig::new(kernel, device_pairs(devices).into_iter().map(|p| (p, lambda)).collect())
    }

    /// λ for the pair; 0 when the pair is not listed.
    pub fn weight(&self, a: DeviceKind, b: DeviceKind) -> f64 {
        self.weights.get(&DevicePair::new(a, b)).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &BTreeMap<DevicePair, f64> {
        &self.weights
    }

    pub fn is_inert(&self) -> bool {
        self.weights.values().all(|&w| w == 0.0)
    }

    /// Copy with every λ set to 0.
    pub fn zeroed(&self) -> Self {
        MmdConfig {
            kernel: self.kernel,
            weights: self.weights.keys().map(|&p| (p, 0.0)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn kernel_values() {
        let rbf = KernelConfig {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Fixed(2f64.sqrt()),
        };
        assert_eq!(kernel_eval(&rbf, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        let v = kernel_eval(&rbf, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-9);
        let lin = KernelConfig {
            kind: KernelKind::Linear,
            bandwidth: median(),
        };
        assert_eq!(kernel_eval(&lin, &[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(kernel_eval(&lin, &[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(kernel_eval(&KernelConfig::default(), &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn median_cases() {
        assert!((median_heuristic(&col(&[0.0, 2.0])).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(median_heuristic(&col(&[3.0, 3.0, 3.0])).unwrap(), 1.0);
        assert!(matches!(median_heuristic(&col(&[1.0])), Err(Error::Config(_))));
    }

    #[test]
    fn identical_samples_zero() {
        let a = Matrix::from_rows(&[vec![0.1, 0.2], vec![-1.0, 3.0], vec![0.5, 0.5]]).unwrap();
        let k = Kernel::rbf(0.7).unwrap();
        assert!(mmd_squared(&a, &a, &k).unwrap().abs() < 1e-12);
        let g = mmd_gradient(&a, &a, &k).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn linear_hand_case() {
        let a = col(&[0.0, 2.0]);
        let b = col(&[1.0, 3.0]);
        assert_eq!(mmd_squared(&a, &b, &Kernel::Linear).unwrap(), 1.0);
        let g = mmd_gradient(&a, &b, &Kernel::Linear).unwrap();
        assert_eq!(g.data(), &[-1.0, -1.0]);
    }

    #[test]
    fn far_clusters_have_no_cross_term() {
        let a = col(&[0.0, 0.3, -0.2]);
        let b = col(&[100.0, 100.5]);
        let k = Kernel::rbf(1.0).unwrap();
        let v = mmd_squared(&a, &b, &k).unwrap();
        let expected = mean_self_kernel(&a, &k) + mean_self_kernel(&b, &k);
        assert!((v - expected).abs() < 1e-8);
    }

    #[test]
    fn frozen_target_matches_direct() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, -1.0], vec![1.0, 1.0]]).unwrap();
        let k = Kernel::rbf(1.3).unwrap();
        let t = FrozenTarget::new(b.clone(), &k);
        let (v, g) = t.value_and_grad(&a, &k).unwrap();
        assert!((v - mmd_squared(&a, &b, &k).unwrap()).abs() < 1e-15);
        assert_eq!(g, mmd_gradient(&a, &b, &k).unwrap());
    }

    #[test]
    fn config_weights() {
        let c = MmdConfig::uniform(KernelConfig::default(), &[DeviceKind::MU, DeviceKind::MW], 1.0).unwrap();
        assert_eq!(c.weight(DeviceKind::MW, DeviceKind::MU), 1.0);
        assert_eq!(c.weight(DeviceKind::MU, DeviceKind::MW), 1.0);
        assert_eq!(c.weight(DeviceKind::MU, DeviceKind::EP), 0.0);
        assert!(c.zeroed().is_inert());
        let bad = [(DevicePair::new(DeviceKind::MW, DeviceKind::EP), -1.0)].into_iter().collect();
        assert!(MmdConfig::new(KernelConfig::default(), bad).is_err());
    }

    #[test]
    fn bandwidth_deserializes_from_number_or_policy() {
        let k: KernelConfig = toml::from_str("kind = \"rbf\"\nbandwidth = 1.5").unwrap();
        assert_eq!(k.bandwidth, Bandwidth::Fixed(1.5));
        let k: KernelConfig = toml::from_str("kind = \"rbf\"\nbandwidth = \"median\"").unwrap();
        assert_eq!(k.bandwidth, median());
    }
}
