//! Per-device projector networks into the shared embedding space, the shared
//! classifier, initialization and flat (de)serialization.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DeviceKind, LabeledExample};
use crate::numerics::{Activation, ConvMeta, Layer, LayerKind, LayerParams, Matrix, Network};
use crate::seed::{rng_for, stream};

pub const NUM_CLASSES: usize = 2;

/// Architecture knobs shared by every projector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub embedding_dim: usize,
    pub conv_channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            embedding_dim: 10,
            conv_channels: 8,
            kernel_width: 16,
            stride: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config("embedding_dim must be at least 2".into()));
        }
        if self.conv_channels == 0 || self.kernel_width == 0 || self.stride == 0 {
            return Err(Error::Config("conv sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Maps one device's feature vectors into the embedding space:
/// conv1d -> ReLU -> flatten -> dense.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub device: DeviceKind,
    net: Network,
}

impl ProjectorParams {
    pub fn new(device: DeviceKind, net: Network, embedding_dim: usize) -> Result<Self> {
        let layers = net.layers();
        let ok = layers.len() == 2
            && matches!(layers[0].params.kind(), LayerKind::Conv1d(m) if m.in_channels == 1)
            && layers[1].params.kind() == LayerKind::Dense
            && net.output_len() == embedding_dim;
        if !ok {
            return Err(Error::shape(format!(
                "{device} projector must be single-channel conv1d + dense into {embedding_dim} dims"
            )));
        }
        Ok(ProjectorParams { device, net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_len()
    }

    pub fn with_network(&self, net: Network) -> Result<Self> {
        ProjectorParams::new(self.device, net, self.net.output_len())
    }
}

/// Shared dense classifier from the embedding space to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    net: Network,
}

impl ClassifierParams {
    pub fn new(net: Network) -> Result<Self> {
        if net.layers().len() != 1 || net.output_len() != NUM_CLASSES {
            return Err(Error::shape("classifier must be a single dense layer with 2 outputs"));
        }
        Ok(ClassifierParams { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.input_len()
    }

    pub fn with_network(&self, net: Network) -> Result<Self> {
        ClassifierParams::new(net)
    }
}

/// Everything federation broadcasts and aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding_dim: usize,
    pub projectors: BTreeMap<DeviceKind, ProjectorParams>,
    pub classifier: ClassifierParams,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

pub fn build_projector(arch: &ArchConfig, device: DeviceKind, input_dim: usize, rng: &mut impl Rng) -> Result<ProjectorParams> {
    let meta = ConvMeta {
        in_channels: 1,
        out_channels: arch.conv_channels,
        kernel_width: arch.kernel_width,
        stride: arch.stride,
    };
    let conv_len = meta
        .output_length(input_dim)
        .map_err(|e| Error::Config(format!("{device}: input_dim {input_dim} too small for the conv layer ({e})")))?;
    let flat = arch.conv_channels * conv_len;
    let conv = LayerParams::conv1d(
        meta,
        glorot(rng, arch.conv_channels, arch.kernel_width, arch.kernel_width, arch.conv_channels * arch.kernel_width),
        vec![0.0; arch.conv_channels],
    )?;
    let dense = LayerParams::dense(
        glorot(rng, arch.embedding_dim, flat, flat, arch.embedding_dim),
        vec![0.0; arch.embedding_dim],
    )?;
    let net = Network::new(
        input_dim,
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
    )?;
    ProjectorParams::new(device, net, arch.embedding_dim)
}

pub fn build_classifier(embedding_dim: usize, rng: &mut impl Rng) -> Result<ClassifierParams> {
    let dense = LayerParams::dense(
        glorot(rng, NUM_CLASSES, embedding_dim, embedding_dim, NUM_CLASSES),
        vec![0.0; NUM_CLASSES],
    )?;
    ClassifierParams::new(Network::new(
        embedding_dim,
        vec![Layer {
            params: dense,
            activation: Activation::Identity,
        }],
    )?)
}

/// Glorot-uniform weights, zero biases. Each device's projector and the
/// classifier draw from their own seed-derived stream, so a device's initial
/// projector does not depend on which other devices take part.
pub fn init_params(arch: &ArchConfig, devices: &BTreeMap<DeviceKind, usize>, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    if devices.is_empty() {
        return Err(Error::Config("at least one device is required".into()));
    }
    let mut projectors = BTreeMap::new();
    for (&device, &input_dim) in devices {
        let mut rng = rng_for(seed, &[stream::INIT, device.code() as u64]);
        projectors.insert(device, build_projector(arch, device, input_dim, &mut rng)?);
    }
    let mut rng = rng_for(seed, &[stream::INIT, 255]);
    let classifier = build_classifier(arch.embedding_dim, &mut rng)?;
    Ok(ModelParams {
        embedding_dim: arch.embedding_dim,
        projectors,
        classifier,
    })
}

/// Embeds one example with its device's projector.
pub fn project(projector: &ProjectorParams, example: &LabeledExample) -> Result<Vec<f64>> {
    if example.device != projector.device {
        return Err(Error::Config(format!(
            "{} example fed to the {} projector",
            example.device, projector.device
        )));
    }
    projector.net.forward(&example.features)
}

pub fn classify(classifier: &ClassifierParams, embedding: &[f64]) -> Result<Vec<f64>> {
    classifier.net.forward(embedding)
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub kind: LayerKind,
    pub rows: usize,
    pub cols: usize,
    pub bias: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentManifest {
    /// `projector/<DEVICE>` or `classifier`.
    pub name: String,
    pub input_len: usize,
    pub layers: Vec<LayerManifest>,
}

impl ComponentManifest {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.rows * l.cols + l.bias).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub components: Vec<ComponentManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub manifest: Manifest,
}

pub const CLASSIFIER_KEY: &str = "classifier";

pub fn projector_key(device: DeviceKind) -> String {
    format!("projector/{device}")
}

fn manifest_of(name: String, net: &Network) -> ComponentManifest {
    ComponentManifest {
        name,
        input_len: net.input_len(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerManifest {
                kind: l.params.kind(),
                rows: l.params.weights().rows(),
                cols: l.params.weights().cols(),
                bias: l.params.bias().len(),
                activation: l.activation,
            })
            .collect(),
    }
}

fn rebuild(manifest: &ComponentManifest, flat: &[f64]) -> Result<Network> {
    if flat.len() != manifest.param_count() {
        return Err(Error::Serialization(format!(
            "{}: {} values but manifest describes {}",
            manifest.name,
            flat.len(),
            manifest.param_count()
        )));
    }
    let mut offset = 0;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let w = flat[offset..offset + lm.rows * lm.cols].to_vec();
        offset += lm.rows * lm.cols;
        let b = flat[offset..offset + lm.bias].to_vec();
        offset += lm.bias;
        let weights = Matrix::from_vec(lm.rows, lm.cols, w)?;
        let params = match lm.kind {
            LayerKind::Dense => LayerParams::dense(weights, b),
            LayerKind::Conv1d(meta) => LayerParams::conv1d(meta, weights, b),
        }
        .map_err(|e| Error::Serialization(format!("{}: {e}", manifest.name)))?;
        layers.push(Layer {
            params,
            activation: lm.activation,
        });
    }
    Network::new(manifest.input_len, layers).map_err(|e| Error::Serialization(format!("{}: {e}", manifest.name)))
}

/// Flat vectors keyed by component, ordered by layer then row-major weights then bias.
pub fn flatten_params(params: &ModelParams) -> FlatParams {
    let mut vectors = BTreeMap::new();
    let mut components = Vec::new();
    for (&d, p) in &params.projectors {
        let key = projector_key(d);
        components.push(manifest_of(key.clone(), &p.net));
        vectors.insert(key, p.net.flat_params());
    }
    components.push(manifest_of(CLASSIFIER_KEY.into(), &params.classifier.net));
    vectors.insert(CLASSIFIER_KEY.into(), params.classifier.net.flat_params());
    FlatParams {
        vectors,
        manifest: Manifest {
            format_version: CHECKPOINT_VERSION,
            embedding_dim: params.embedding_dim,
            components,
        },
    }
}

pub fn unflatten_params(flat: &FlatParams) -> Result<ModelParams> {
    let m = &flat.manifest;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(Error::Serialization(format!(
            "manifest version {} unsupported",
            m.format_version
        )));
    }
    if flat.vectors.len() != m.components.len() {
        return Err(Error::Serialization("vector set does not match manifest".into()));
    }
    let mut projectors = BTreeMap::new();
    let mut classifier = None;
    for comp in &m.components {
        let v = flat
            .vectors
            .get(&comp.name)
            .ok_or_else(|| Error::Serialization(format!("missing vector for {}", comp.name)))?;
        let net = rebuild(comp, v)?;
        if comp.name == CLASSIFIER_KEY {
            classifier = Some(ClassifierParams::new(net).map_err(|e| Error::Serialization(e.to_string()))?);
        } else {
            let device: DeviceKind = comp
                .name
                .strip_prefix("projector/")
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| Error::Serialization(format!("unknown component {}", comp.name)))?;
            let p = ProjectorParams::new(device, net, m.embedding_dim)
                .map_err(|e| Error::Serialization(e.to_string()))?;
            projectors.insert(device, p);
        }
    }
    let classifier = classifier.ok_or_else(|| Error::Serialization("manifest has no classifier".into()))?;
    if classifier.embedding_dim() != m.embedding_dim {
        return Err(Error::Serialization("classifier input dim disagrees with manifest".into()));
    }
    Ok(ModelParams {
        embedding_dim: m.embedding_dim,
        projectors,
        classifier,
    })
}
