//! Central-difference gradient verification.

use super::network::{backprop, Batch, Network};
use crate::error::{Error, Result};

/// Step used by every built-in check.
pub const DEFAULT_EPS: f64 = 1e-5;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Precondition(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    Ok(())
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for an arbitrary scalar function of a flat parameter vector.
pub fn max_relative_error<F>(params: &[f64], analytic: &[f64], eps: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_eps(eps)?;
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss(&probe)?;
        probe[i] = orig - eps;
        let down = loss(&probe)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Checks [`backprop`] against central differences of the same loss over
/// every parameter of `net`.
pub fn finite_difference_check(
    net: &Network,
    batch: &Batch<'_>,
    extra: Option<&[Vec<f64>]>,
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    let analytic = backprop(net, batch, extra)?.grads.flat();
    let mut probe = net.clone();
    max_relative_error(&net.flat_params(), &analytic, eps, |p| {
        probe.set_flat_params(p)?;
        probe.loss(batch, 1.0, extra)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Layer, LayerParams, Matrix};

    #[test]
    fn rejects_bad_eps() {
        let net = Network::new(
            1,
            vec![Layer {
                params: LayerParams::dense(Matrix::zeros(2, 1), vec![0.0; 2]).unwrap(),
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let xs = [vec![1.0]];
        let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), vec![0]).unwrap();
        for eps in [0.0, -1e-5, 0.1, f64::NAN] {
            assert!(matches!(
                finite_difference_check(&net, &batch, None, eps),
                Err(Error::Precondition(_))
            ));
        }
    }

    #[test]
    fn quadratic_function() {
        // f(p) = p0^2 + 3 p1, gradient (2 p0, 3)
        let p = [1.5, -2.0];
        let err = max_relative_error(&p, &[3.0, 3.0], 1e-5, |q| Ok(q[0] * q[0] + 3.0 * q[1])).unwrap();
        assert!(err < 1e-9);
        let wrong = max_relative_error(&p, &[3.0, 2.0], 1e-5, |q| Ok(q[0] * q[0] + 3.0 * q[1])).unwrap();
        assert!(wrong > 0.3);
    }
}
