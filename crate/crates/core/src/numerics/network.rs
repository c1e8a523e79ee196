use serde::{Deserialize, Serialize};

use super::layers::{softmax_cross_entropy, LayerParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        if self == Activation::Relu {
            for v in x {
                *v = v.max(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub params: LayerParams,
    pub activation: Activation,
}

/// A feed-forward chain of layers over flat input vectors, shape-checked at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_len: usize,
    output_len: usize,
    layers: Vec<Layer>,
}

/// Per-layer gradient buffers mirroring a [`Network`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

/// A borrowed mini-batch of flat inputs and class labels.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape(format!(
                "batch has {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Activations recorded by a forward pass: `inputs[l]` feeds layer `l`,
/// `output` is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct BackpropOutput {
    pub loss: f64,
    pub grads: Gradients,
    /// Gradient of the loss with respect to each sample's input.
    pub input_grads: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(input_len: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut len = input_len;
        for (i, layer) in layers.iter().enumerate() {
            len = layer
                .params
                .output_len(len)
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
        }
        Ok(Network {
            input_len,
            output_len: len,
            layers,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Appends `other`'s layers; `other` must accept this network's output.
    pub fn then(&self, other: &Network) -> Result<Network> {
        if other.input_len != self.output_len {
            return Err(Error::shape(format!(
                "cannot compose: output {} feeds input {}",
                self.output_len, other.input_len
            )));
        }
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        Network::new(self.input_len, layers)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.param_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params.flat()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat parameter vector has length {}, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for p in layer.params.flat_mut() {
                *p = *it.next().expect("length checked above");
            }
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| l.params.zeros_like()).collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len {
            return Err(Error::shape(format!(
                "layer 0: input length {} but network expects {}",
                input.len(),
                self.input_len
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer
                .params
                .forward_flat(&x)
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            layer.activation.apply(&mut x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer
                .params
                .forward_flat(&x)
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            layer.activation.apply(&mut y);
            inputs.push(x);
            x = y;
        }
        Ok(Trace { inputs, output: x })
    }

    /// Backpropagates `output_grad` through one recorded pass, accumulating
    /// into `grads`; returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_len {
            return Err(Error::shape(format!(
                "layer {}: output gradient length {} != output length {}",
                self.layers.len().saturating_sub(1),
                output_grad.len(),
                self.output_len
            )));
        }
        let mut g = output_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                // post-activation output is the next layer's input (or the final output)
                let out = if l + 1 < self.layers.len() {
                    &trace.inputs[l + 1]
                } else {
                    &trace.output
                };
                for (gi, &o) in g.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = layer
                .params
                .backward_flat(&trace.inputs[l], &g, &mut grads.layers[l]);
        }
        Ok(g)
    }

    /// `ce_weight * mean CE + sum_b <extra_b, output_b>` evaluated without gradients.
    pub fn loss(&self, batch: &Batch<'_>, ce_weight: f64, extra: Option<&[Vec<f64>]>) -> Result<f64> {
        check_batch(self, batch, extra)?;
        let n = batch.len() as f64;
        let mut total = 0.0;
        for (b, (x, &label)) in batch.inputs.iter().zip(&batch.labels).enumerate() {
            let out = self.forward(x)?;
            if ce_weight != 0.0 {
                total += ce_weight * softmax_cross_entropy(&out, label)?.loss / n;
            }
            if let Some(extra) = extra {
                total += super::matrix::dot(&extra[b], &out);
            }
        }
        Ok(total)
    }
}

fn check_batch(net: &Network, batch: &Batch<'_>, extra: Option<&[Vec<f64>]>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    if batch.inputs.len() != batch.labels.len() {
        return Err(Error::shape("batch inputs and labels differ in length"));
    }
    if let Some(extra) = extra {
        if extra.len() != batch.len() {
            return Err(Error::shape(format!(
                "layer {}: {} extra output gradients for a batch of {}",
                net.layers.len().saturating_sub(1),
                extra.len(),
                batch.len()
            )));
        }
        if let Some(bad) = extra.iter().find(|g| g.len() != net.output_len) {
            return Err(Error::shape(format!(
                "layer {}: extra output gradient length {} != output length {}",
                net.layers.len().saturating_sub(1),
                bad.len(),
                net.output_len
            )));
        }
    }
    Ok(())
}

/// Gradients of the mean softmax cross-entropy over `batch`, plus
/// `sum_b <extra_b, output_b>` when extra output gradients are given.
pub fn backprop(net: &Network, batch: &Batch<'_>, extra: Option<&[Vec<f64>]>) -> Result<BackpropOutput> {
    backprop_weighted(net, batch, 1.0, extra)
}

/// Like [`backprop`] with the cross-entropy term scaled by `ce_weight`
/// (0 disables it and leaves only the extra-gradient channel).
pub fn backprop_weighted(
    net: &Network,
    batch: &Batch<'_>,
    ce_weight: f64,
    extra: Option<&[Vec<f64>]>,
) -> Result<BackpropOutput> {
    check_batch(net, batch, extra)?;
    let n = batch.len() as f64;
    let mut grads = net.zero_gradients();
    let mut loss = 0.0;
    let mut input_grads = Vec::with_capacity(batch.len());
    let mut outputs = Vec::with_capacity(batch.len());
    for (b, (x, &label)) in batch.inputs.iter().zip(&batch.labels).enumerate() {
        let trace = net.forward_trace(x)?;
        let mut g = vec![0.0; net.output_len];
        if ce_weight != 0.0 {
            let ce = softmax_cross_entropy(trace.output(), label)?;
            loss += ce_weight * ce.loss / n;
            for (k, (gk, p)) in g.iter_mut().zip(&ce.probabilities).enumerate() {
                let onehot = if k == label { 1.0 } else { 0.0 };
                *gk = ce_weight * (p - onehot) / n;
            }
        } else if label >= net.output_len {
            return Err(Error::Index {
                index: label,
                len: net.output_len,
            });
        }
        if let Some(extra) = extra {
            loss += super::matrix::dot(&extra[b], trace.output());
            for (gk, e) in g.iter_mut().zip(&extra[b]) {
                *gk += e;
            }
        }
        input_grads.push(net.backward(&trace, &g, &mut grads)?);
        outputs.push(trace.output);
    }
    Ok(BackpropOutput {
        loss,
        grads,
        input_grads,
        outputs,
    })
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(LayerParams::flat).collect()
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient layer counts differ"));
        }
        for (i, (a, b)) in self.layers.iter_mut().zip(&other.layers).enumerate() {
            if !a.same_shape(b) {
                return Err(Error::shape(format!("layer {i}: gradient shapes differ")));
            }
            for (x, y) in a.flat_mut().zip(b.flat()) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// One plain SGD step: `params - learning_rate * grads`.
pub fn sgd_step(net: &Network, grads: &Gradients, learning_rate: f64) -> Result<Network> {
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::Precondition(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if grads.layers.len() != net.layers.len() {
        return Err(Error::shape(format!(
            "gradients have {} layers, network has {}",
            grads.layers.len(),
            net.layers.len()
        )));
    }
    let mut next = net.clone();
    for (i, (layer, g)) in next.layers.iter_mut().zip(&grads.layers).enumerate() {
        if !layer.params.same_shape(g) {
            return Err(Error::shape(format!("layer {i}: gradient shape mismatch")));
        }
        for (p, d) in layer.params.flat_mut().zip(g.flat()) {
            *p -= learning_rate * d;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ConvMeta, Matrix};

    fn small_net() -> Network {
        let conv = LayerParams::conv1d(
            ConvMeta {
                in_channels: 1,
                out_channels: 2,
                kernel_width: 2,
                stride: 1,
            },
            Matrix::from_vec(2, 2, vec![0.5, -0.25, 0.3, 0.8]).unwrap(),
            vec![0.1, -0.2],
        )
        .unwrap();
        let dense = LayerParams::dense(
            Matrix::from_vec(2, 6, (0..12).map(|i| (i as f64 - 6.0) / 10.0).collect()).unwrap(),
            vec![0.0, 0.05],
        )
        .unwrap();
        Network::new(
            4,
            vec![
                Layer {
                    params: conv,
                    activation: Activation::Relu,
                },
                Layer {
                    params: dense,
                    activation: Activation::Identity,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn construction_catches_mismatch_with_layer_index() {
        let net = small_net();
        let bad = LayerParams::dense(Matrix::zeros(2, 5), vec![0.0; 2]).unwrap();
        let mut layers = net.layers().to_vec();
        layers[1].params = bad;
        let err = Network::new(4, layers).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn zero_signal_gives_zero_classifier_bias_grad() {
        // uniform logits, balanced labels: dL/db = mean(p - onehot) = 0
        let dense = LayerParams::dense(Matrix::zeros(2, 3), vec![0.0, 0.0]).unwrap();
        let net = Network::new(
            3,
            vec![Layer {
                params: dense,
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let xs = [vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]];
        let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), vec![0, 1]).unwrap();
        let out = backprop(&net, &batch, None).unwrap();
        for b in out.grads.layers[0].bias() {
            assert!(b.abs() < 1e-15);
        }
    }

    #[test]
    fn flat_params_roundtrip() {
        let mut net = small_net();
        let flat = net.flat_params();
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        net.set_flat_params(&shifted).unwrap();
        assert_eq!(net.flat_params(), shifted);
        assert!(net.set_flat_params(&flat[1..]).is_err());
    }

    #[test]
    fn sgd_fixed_point_and_arithmetic() {
        let net = small_net();
        let zero = net.zero_gradients();
        assert_eq!(sgd_step(&net, &zero, 0.1).unwrap(), net);

        let one = LayerParams::dense(Matrix::from_vec(1, 1, vec![1.0]).unwrap(), vec![0.0]).unwrap();
        let n1 = Network::new(
            1,
            vec![Layer {
                params: one.clone(),
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let mut g = n1.zero_gradients();
        g.layers[0].weights_mut().set(0, 0, 0.5);
        let stepped = sgd_step(&n1, &g, 0.1).unwrap();
        assert!((stepped.layers()[0].params.weights().get(0, 0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_nonpositive_rate() {
        let net = small_net();
        let g = net.zero_gradients();
        assert!(matches!(sgd_step(&net, &g, 0.0), Err(Error::Precondition(_))));
        assert!(matches!(sgd_step(&net, &g, -1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn sgd_rejects_shape_mismatch() {
        let net = small_net();
        let mut g = net.zero_gradients();
        g.layers.pop();
        assert!(matches!(sgd_step(&net, &g, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn backprop_rejects_bad_extra_shape() {
        let net = small_net();
        let xs = [vec![1.0, 2.0, 3.0, 4.0]];
        let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), vec![0]).unwrap();
        let extra = vec![vec![0.0; 3]];
        let err = backprop(&net, &batch, Some(&extra)).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn backprop_is_bit_deterministic() {
        let net = small_net();
        let xs = [vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -1.0, 2.0, 0.0]];
        let batch = Batch::new(xs.iter().map(Vec::as_slice).collect(), vec![0, 1]).unwrap();
        let a = backprop(&net, &batch, None).unwrap();
        let b = backprop(&net, &batch, None).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grads, b.grads);
    }
}
