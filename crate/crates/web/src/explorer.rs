use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use hhhfl::mmd::{median_heuristic, mmd_squared, Kernel};
use hhhfl::numerics::Matrix;
use hhhfl::seed::rng_for;
use hhhfl::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmdExploration {
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    /// Bandwidth used for `mmd2`.
    pub sigma: f64,
    pub mmd2: f64,
    /// MMD² with the linear kernel: the squared distance between the means.
    pub linear_mmd2: f64,
    /// `(sigma, mmd2)` over a log-spaced bandwidth sweep.
    pub sweep: Vec<[f64; 2]>,
}

fn cloud(rng: &mut impl Rng, n: usize, center: f64, spread: f64) -> Matrix {
    let data = (0..2 * n)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            let offset = if i % 2 == 0 { center } else { 0.0 };
            offset + spread * z
        })
        .collect();
    Matrix::from_vec(n, 2, data).expect("2n values")
}

fn points(m: &Matrix) -> Vec<[f64; 2]> {
    m.row_iter().map(|r| [r[0], r[1]]).collect()
}

/// Cloud `a` is standard normal; cloud `b` is shifted by `shift` along x and
/// scaled by `spread`. `bandwidth: None` uses the median heuristic on both.
pub fn explore_mmd(n: usize, shift: f64, spread: f64, bandwidth: Option<f64>, seed: u64) -> Result<MmdExploration> {
    if !(2..=2000).contains(&n) {
        return Err(Error::Config(format!("cloud size must be in 2..=2000, got {n}")));
    }
    if !(spread > 0.0 && spread.is_finite()) || !shift.is_finite() {
        return Err(Error::Config("shift must be finite and spread positive".into()));
    }
    let a = cloud(&mut rng_for(seed, &[0]), n, 0.0, 1.0);
    let b = cloud(&mut rng_for(seed, &[1]), n, shift, spread);
    let sigma = match bandwidth {
        Some(s) => s,
        None => {
            let mut pooled = a.clone();
            pooled.append_rows(&b)?;
            median_heuristic(&pooled)?
        }
    };
    let mmd2 = mmd_squared(&a, &b, &Kernel::rbf(sigma)?)?;
    let linear_mmd2 = mmd_squared(&a, &b, &Kernel::Linear)?;
    let sweep = (0..33)
        .map(|i| {
            let s = 10f64.powf(-1.5 + 3.0 * i as f64 / 32.0);
            Ok([s, mmd_squared(&a, &b, &Kernel::rbf(s)?)?])
        })
        .collect::<Result<_>>()?;
    Ok(MmdExploration {
        a: points(&a),
        b: points(&b),
        sigma,
        mmd2,
        linear_mmd2,
        sweep,
    })
}
