use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvMeta {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
}

impl ConvMeta {
    /// Valid-convolution output length for an input of `length` samples.
    pub fn output_length(&self, length: usize) -> Result<usize> {
        if length < self.kernel_width {
            return Err(Error::shape(format!(
                "signal length {length} shorter than kernel width {}",
                self.kernel_width
            )));
        }
        Ok((length - self.kernel_width) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    Conv1d(ConvMeta),
}

/// Parameters of one layer.
///
/// Dense layers store `weights` as `out x in`. Conv layers store them as
/// `out_channels x (in_channels * kernel_width)`, with the kernel taps of one
/// input channel contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    kind: LayerKind,
    weights: Matrix,
    bias: Vec<f64>,
}

impl LayerParams {
    pub fn dense(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(format!(
                "dense bias length {} != output dim {}",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(LayerParams {
            kind: LayerKind::Dense,
            weights,
            bias,
        })
    }

    pub fn conv1d(meta: ConvMeta, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if meta.kernel_width == 0 || meta.stride == 0 || meta.in_channels == 0 {
            return Err(Error::shape(format!("degenerate conv geometry {meta:?}")));
        }
        if weights.rows() != meta.out_channels
            || weights.cols() != meta.in_channels * meta.kernel_width
        {
            return Err(Error::shape(format!(
                "conv weights {}x{} do not match {} out x {} in x {} taps",
                weights.rows(),
                weights.cols(),
                meta.out_channels,
                meta.in_channels,
                meta.kernel_width
            )));
        }
        if bias.len() != meta.out_channels {
            return Err(Error::shape(format!(
                "conv bias length {} != out_channels {}",
                bias.len(),
                meta.out_channels
            )));
        }
        Ok(LayerParams {
            kind: LayerKind::Conv1d(meta),
            weights,
            bias,
        })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    /// Same kind and shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            kind: self.kind,
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn same_shape(&self, other: &LayerParams) -> bool {
        self.kind == other.kind
            && self.weights.rows() == other.weights.rows()
            && self.weights.cols() == other.weights.cols()
            && self.bias.len() == other.bias.len()
    }

    /// Flat output length for a flat input of `input_len` values, or a shape error.
    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        match self.kind {
            LayerKind::Dense => {
                if input_len != self.weights.cols() {
                    return Err(Error::shape(format!(
                        "dense layer expects input of length {}, got {input_len}",
                        self.weights.cols()
                    )));
                }
                Ok(self.weights.rows())
            }
            LayerKind::Conv1d(meta) => {
                if !input_len.is_multiple_of(meta.in_channels) {
                    return Err(Error::shape(format!(
                        "input length {input_len} not divisible into {} channels",
                        meta.in_channels
                    )));
                }
                Ok(meta.out_channels * meta.output_length(input_len / meta.in_channels)?)
            }
        }
    }

    /// Weights then bias, row-major.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.data().iter().chain(&self.bias).copied()
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.data_mut().iter_mut().chain(self.bias.iter_mut())
    }

    pub(crate) fn forward_flat(&self, input: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            LayerKind::Dense => dense_forward(self, input),
            LayerKind::Conv1d(meta) => {
                self.output_len(input.len())?;
                let length = input.len() / meta.in_channels;
                Ok(conv_forward_raw(self, meta, input, length))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub(crate) fn backward_flat(
        &self,
        input: &[f64],
        output_grad: &[f64],
        grads: &mut LayerParams,
    ) -> Vec<f64> {
        match self.kind {
            LayerKind::Dense => {
                let cols = self.weights.cols();
                let mut input_grad = vec![0.0; cols];
                for (i, &dy) in output_grad.iter().enumerate() {
                    grads.bias[i] += dy;
                    let grow = grads.weights.row_mut(i);
                    for (g, x) in grow.iter_mut().zip(input) {
                        *g += dy * x;
                    }
                    let wrow = self.weights.row(i);
                    for (dx, w) in input_grad.iter_mut().zip(wrow) {
                        *dx += w * dy;
                    }
                }
                input_grad
            }
            LayerKind::Conv1d(meta) => {
                let length = input.len() / meta.in_channels;
                let out_len = (length - meta.kernel_width) / meta.stride + 1;
                let k = meta.kernel_width;
                let mut input_grad = vec![0.0; input.len()];
                for o in 0..meta.out_channels {
                    let wrow = self.weights.row(o);
                    for p in 0..out_len {
                        let dy = output_grad[o * out_len + p];
                        grads.bias[o] += dy;
                        let start = p * meta.stride;
                        for c in 0..meta.in_channels {
                            let x = &input[c * length + start..c * length + start + k];
                            let w = &wrow[c * k..(c + 1) * k];
                            let gw = &mut grads.weights.row_mut(o)[c * k..(c + 1) * k];
                            for t in 0..k {
                                gw[t] += dy * x[t];
                            }
                            let dx = &mut input_grad[c * length + start..c * length + start + k];
                            for t in 0..k {
                                dx[t] += w[t] * dy;
                            }
                        }
                    }
                }
                input_grad
            }
        }
    }
}

/// `W x + b` for a dense layer.
pub fn dense_forward(params: &LayerParams, input: &[f64]) -> Result<Vec<f64>> {
    if params.kind != LayerKind::Dense {
        return Err(Error::shape("dense_forward called on a conv1d layer"));
    }
    let w = &params.weights;
    if input.len() != w.cols() {
        return Err(Error::shape(format!(
            "dense input has length {} but weights have {} columns",
            input.len(),
            w.cols()
        )));
    }
    Ok(w.row_iter()
        .zip(&params.bias)
        .map(|(row, b)| dot(row, input) + b)
        .collect())
}

/// Valid (unpadded) strided cross-correlation of a `channels x length` signal.
pub fn conv1d_forward(params: &LayerParams, signal: &Matrix) -> Result<Matrix> {
    let LayerKind::Conv1d(meta) = params.kind else {
        return Err(Error::shape("conv1d_forward called on a dense layer"));
    };
    if signal.rows() != meta.in_channels {
        return Err(Error::shape(format!(
            "signal has {} channels, layer expects {}",
            signal.rows(),
            meta.in_channels
        )));
    }
    let out_len = meta.output_length(signal.cols())?;
    let out = conv_forward_raw(params, meta, signal.data(), signal.cols());
    Matrix::from_vec(meta.out_channels, out_len, out)
}

fn conv_forward_raw(params: &LayerParams, meta: ConvMeta, input: &[f64], length: usize) -> Vec<f64> {
    let k = meta.kernel_width;
    let out_len = (length - k) / meta.stride + 1;
    let mut out = vec![0.0; meta.out_channels * out_len];
    for o in 0..meta.out_channels {
        let wrow = params.weights.row(o);
        for p in 0..out_len {
            let start = p * meta.stride;
            let mut acc = params.bias[o];
            for c in 0..meta.in_channels {
                let x = &input[c * length + start..c * length + start + k];
                acc += dot(&wrow[c * k..(c + 1) * k], x);
            }
            out[o * out_len + p] = acc;
        }
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxCe {
    pub loss: f64,
    pub probabilities: Vec<f64>,
}

/// Softmax over `logits` and the negative log-likelihood of `label`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<SoftmaxCe> {
    if label >= logits.len() {
        return Err(Error::Index {
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probabilities = exps.iter().map(|e| e / sum).collect();
    // log p = (z - max) - log(sum) keeps tiny probabilities representable
    let loss = -((logits[label] - max) - sum.ln());
    Ok(SoftmaxCe {
        loss,
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: &[&[f64]], b: &[f64]) -> LayerParams {
        let rows: Vec<Vec<f64>> = w.iter().map(|r| r.to_vec()).collect();
        LayerParams::dense(Matrix::from_rows(&rows).unwrap(), b.to_vec()).unwrap()
    }

    fn conv(kernel: &[f64], stride: usize) -> LayerParams {
        let meta = ConvMeta {
            in_channels: 1,
            out_channels: 1,
            kernel_width: kernel.len(),
            stride,
        };
        LayerParams::conv1d(
            meta,
            Matrix::from_vec(1, kernel.len(), kernel.to_vec()).unwrap(),
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn dense_identity() {
        let p = LayerParams::dense(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(dense_forward(&p, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn dense_hand_product() {
        let p = dense(&[&[1.0, 2.0], &[0.0, 1.0]], &[1.0, 0.0]);
        assert_eq!(dense_forward(&p, &[1.0, 1.0]).unwrap(), vec![4.0, 1.0]);
    }

    #[test]
    fn dense_shape_error_names_dims() {
        let p = dense(&[&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]], &[0.0, 0.0]);
        let err = dense_forward(&p, &[1.0, 1.0]).unwrap_err().to_string();
        assert!(err.contains('2') && err.contains('3'), "{err}");
    }

    #[test]
    fn conv_identity_kernel() {
        let p = conv(&[1.0], 1);
        let s = Matrix::from_vec(1, 4, vec![0.5, -2.0, 3.0, 7.0]).unwrap();
        assert_eq!(conv1d_forward(&p, &s).unwrap(), s);
    }

    #[test]
    fn conv_sliding_sums() {
        let p = conv(&[1.0, 1.0], 1);
        let s = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv1d_forward(&p, &s).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_stride_length() {
        let p = conv(&[1.0, 0.0, 0.0], 2);
        let s = Matrix::from_vec(1, 8, (0..8).map(f64::from).collect()).unwrap();
        // floor((8 - 3) / 2) + 1 = 3 windows starting at 0, 2, 4
        assert_eq!(conv1d_forward(&p, &s).unwrap().data(), &[0.0, 2.0, 4.0]);
    }

    #[test]
    fn conv_too_short() {
        let p = conv(&[1.0; 4], 1);
        let s = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(conv1d_forward(&p, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_regions() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[0.0, 1.5, 3.0]), vec![0.0, 1.5, 3.0]);
        assert_eq!(relu(&[-1.0, -0.1]), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetric() {
        let r = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_confident() {
        // closed form: loss = ln(1 + e^{-20}) for the right label, 20 + ln(1 + e^{-20}) otherwise
        let tail = (-20.0f64).exp().ln_1p();
        let right = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!(right.loss < 1e-8);
        assert!((right.loss - tail).abs() < 1e-15);
        let wrong = softmax_cross_entropy(&[10.0, -10.0], 1).unwrap();
        assert!((wrong.loss - 20.0).abs() < 1e-6);
        assert!((wrong.loss - (20.0 + tail)).abs() < 1e-12);
    }

    #[test]
    fn softmax_label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn softmax_sums_to_one_for_large_logits() {
        let r = softmax_cross_entropy(&[1000.0, -1000.0, 999.5, 0.0], 2).unwrap();
        let s: f64 = r.probabilities.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(r.loss.is_finite());
    }
}
