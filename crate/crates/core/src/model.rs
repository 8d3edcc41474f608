//! Feed-forward networks: specifications, parameters, plaintext reference
//! passes, the `pricure-model/1` file format, and synthetic fixtures.
//!
//! Weights of layer `j` are stored row-major with shape `[k_{j-1}, k_j]`, so
//! a layer computes `x · W + b` on a row vector `x`.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{FixedPointCodec, RingError, RingTensor};
use crate::sharing::{relu_input_bound, truncation_input_bound};

pub const MODEL_FORMAT: &str = "pricure-model/1";

/// Fractional digits of decimal strings in model files.
pub const FILE_DIGITS: u32 = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported model format {0:?}")]
    Version(String),
    #[error("bad decimal {value:?} at {location}: expected exactly two fractional digits")]
    Decimal { value: String, location: String },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("layer {layer}: expected {expected}, found {found}")]
    Shape {
        layer: usize,
        expected: String,
        found: String,
    },
    #[error("input has {got} features, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("unknown preset {0:?} (expected mnist, fmnist, idc or mimic)")]
    UnknownPreset(String),
    #[error(transparent)]
    Range(#[from] RingError),
    #[error("model io: {0}")]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "relu")]
    pub hidden_activation: Activation,
    #[serde(default = "linear")]
    pub output_activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

fn linear() -> Activation {
    Activation::Linear
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims,
            output_dim,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Linear,
        }
    }

    /// 28×28 grayscale digits.
    pub fn mnist() -> Self {
        Self::new(784, vec![128, 64], 10)
    }

    pub fn fmnist() -> Self {
        Self::new(784, vec![128, 64], 10)
    }

    /// 50×50 RGB histopathology patches.
    pub fn idc() -> Self {
        Self::new(7500, vec![500], 2)
    }

    /// 30 clinical features, 4 outcome classes.
    pub fn mimic() -> Self {
        Self::new(30, vec![500], 4)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Self::mnist()),
            "fmnist" => Ok(Self::fmnist()),
            "idc" => Ok(Self::idc()),
            "mimic" => Ok(Self::mimic()),
            _ => Err(ModelError::UnknownPreset(name.to_string())),
        }
    }

    /// Same input and output widths with every hidden layer replaced by
    /// `hidden`.
    pub fn with_hidden(mut self, hidden: usize) -> Self {
        for k in &mut self.hidden_dims {
            *k = hidden;
        }
        self
    }

    /// `[d, k_1, ..., k_l, o]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    /// Number of weight matrices, `l + 1`.
    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Total number of activation outputs across hidden layers, `Σ k_j`.
    pub fn hidden_units(&self) -> usize {
        self.hidden_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(ModelError::Spec(format!("zero-width layer in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        f.write_str(&dims.join("-"))
    }
}

/// Weights `[inputs, outputs]` row-major plus a bias per output.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.outputs + j]
    }

    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) {
        self.weights[i * self.outputs + j] = w;
    }

    pub fn forward(&self, x: &[f64], activation: Activation) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out.into_iter().map(|v| activation.apply(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl ModelParameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let dims = spec.dims();
        ModelParameters {
            spec: spec.clone(),
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let dims = self.spec.dims();
        if self.layers.len() != self.spec.num_layers() {
            return Err(ModelError::Shape {
                layer: self.layers.len(),
                expected: format!("{} layers", self.spec.num_layers()),
                found: format!("{} layers", self.layers.len()),
            });
        }
        for (j, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = (dims[j], dims[j + 1]);
            if layer.inputs != rows
                || layer.outputs != cols
                || layer.weights.len() != rows * cols
                || layer.bias.len() != cols
            {
                return Err(ModelError::Shape {
                    layer: j,
                    expected: format!("weights {rows}x{cols}, bias {cols}"),
                    found: format!(
                        "weights {}x{} ({} values), bias {}",
                        layer.inputs,
                        layer.outputs,
                        layer.weights.len(),
                        layer.bias.len()
                    ),
                });
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(j));
            }
        }
        Ok(())
    }

    /// Rounds every parameter onto the two-decimal file grid.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = quantize(*v);
            }
        }
        out
    }
}

/// Truncates toward zero onto the two-decimal grid.
pub fn quantize(x: f64) -> f64 {
    let codec = FixedPointCodec::default();
    match codec.to_fixed(x) {
        Ok(v) => v as f64 / 100.0,
        Err(_) => x,
    }
}

fn check_input(spec: &NetworkSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(ModelError::Dimension {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// Plaintext floating-point forward pass; returns the `o` output scores.
pub fn forward_float(params: &ModelParameters, x: &[f64]) -> Result<Vec<f64>> {
    check_input(&params.spec, x)?;
    let mut h = x.to_vec();
    for (j, layer) in params.layers.iter().enumerate() {
        h = layer.forward(&h, params.spec.activation(j));
    }
    Ok(h)
}

/// Parameters mapped into the ring: weights `[k_{j-1}, k_j]`, biases
/// `[1, k_j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedModel {
    pub spec: NetworkSpec,
    pub codec: FixedPointCodec,
    pub weights: Vec<RingTensor>,
    pub biases: Vec<RingTensor>,
}

impl EncodedModel {
    pub fn encode(params: &ModelParameters, codec: FixedPointCodec) -> Result<Self> {
        params.validate()?;
        let mut weights = Vec::with_capacity(params.layers.len());
        let mut biases = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            weights.push(codec.encode_tensor(vec![layer.inputs, layer.outputs], &layer.weights)?);
            biases.push(codec.encode_tensor(vec![1, layer.outputs], &layer.bias)?);
        }
        Ok(EncodedModel {
            spec: params.spec.clone(),
            codec,
            weights,
            biases,
        })
    }

    /// Fixed-point pass over an encoded `[1, d]` input, following the
    /// schedule the shared protocol uses: `z = h·W + f·b`, rescale to
    /// `floor(lift(z) / f)`, then ReLU on hidden layers.
    ///
    /// Fails if an intermediate leaves the range where the shared
    /// truncation or ReLU is exact.
    pub fn forward(&self, x: &RingTensor) -> Result<RingTensor> {
        let m = self.codec.modulus();
        let f = self.codec.scale();
        let trunc_bound = truncation_input_bound(m, f) as i64;
        let relu_bound = relu_input_bound(m) as i64;
        let limit = |bound: i64| (bound as f64) / f as f64;
        if x.shape() != [1, self.spec.input_dim] {
            return Err(ModelError::Dimension {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let mut h = x.clone();
        for (j, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = h.matmul(w)?.add(&b.scale(f))?;
            let relu = self.spec.activation(j) == Activation::Relu;
            let mut out = Vec::with_capacity(z.len());
            for &v in z.data() {
                let lifted = m.lift(v);
                if lifted.abs() >= trunc_bound {
                    return Err(RingError::OutOfRange {
                        value: lifted as f64 / (f * f) as f64,
                        limit: limit(trunc_bound) / f as f64,
                    }
                    .into());
                }
                let t = lifted.div_euclid(f as i64);
                if relu && t.abs() >= relu_bound {
                    return Err(RingError::OutOfRange {
                        value: t as f64 / f as f64,
                        limit: limit(relu_bound),
                    }
                    .into());
                }
                let t = if relu { t.max(0) } else { t };
                out.push(m.from_signed(t));
            }
            h = RingTensor::new(m, z.shape().to_vec(), out)?;
        }
        Ok(h)
    }
}

/// Encodes `x` and runs [`EncodedModel::forward`]; the bit-level reference
/// for shared inference.
pub fn forward_fixed(params: &ModelParameters, x: &[f64], codec: FixedPointCodec) -> Result<RingTensor> {
    check_input(&params.spec, x)?;
    let model = EncodedModel::encode(params, codec)?;
    let input = codec.encode_tensor(vec![1, x.len()], x)?;
    model.forward(&input)
}

/// Seeded random parameters on the two-decimal grid: weights in
/// `[-0.5, 0.5]`, biases in `[-0.1, 0.1]`.
pub fn generate_fixture(spec: &NetworkSpec, seed: u64) -> ModelParameters {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = ModelParameters::zeros(spec);
    for layer in &mut params.layers {
        for w in &mut layer.weights {
            *w = rng.gen_range(-50i64..=50) as f64 / 100.0;
        }
        for b in &mut layer.bias {
            *b = rng.gen_range(-10i64..=10) as f64 / 100.0;
        }
    }
    params
}

/// Nearest-mean classifier baked into `spec`'s shape.
///
/// Output `c` scores `μ_c·x − |μ_c|²/2`. The first hidden layer carries each
/// score as the pair `relu(s), relu(−s)`, later hidden layers pass those
/// units through, and the output layer takes their difference. Needs
/// `2·o` units in every hidden layer.
pub fn nearest_mean_readout(spec: &NetworkSpec, means: &[Vec<f64>]) -> Result<ModelParameters> {
    spec.validate()?;
    let o = spec.output_dim;
    if means.len() != o || means.iter().any(|m| m.len() != spec.input_dim) {
        return Err(ModelError::Spec(format!(
            "{} class means of width {} do not fit {spec}",
            means.len(),
            means.first().map_or(0, Vec::len)
        )));
    }
    if spec.hidden_dims.iter().any(|&k| k < 2 * o) {
        return Err(ModelError::Spec(format!(
            "hidden layers of {spec} need at least {} units for a readout",
            2 * o
        )));
    }
    let mut params = ModelParameters::zeros(spec);
    let last = params.layers.len() - 1;
    for (j, layer) in params.layers.iter_mut().enumerate() {
        for (c, mu) in means.iter().enumerate() {
            if j == 0 && last == 0 {
                for (i, &v) in mu.iter().enumerate() {
                    layer.set_weight(i, c, quantize(v));
                }
                layer.bias[c] = quantize(-0.5 * mu.iter().map(|v| v * v).sum::<f64>());
            } else if j == 0 {
                let bias = quantize(-0.5 * mu.iter().map(|v| v * v).sum::<f64>());
                for (i, &v) in mu.iter().enumerate() {
                    layer.set_weight(i, 2 * c, quantize(v));
                    layer.set_weight(i, 2 * c + 1, -quantize(v));
                }
                layer.bias[2 * c] = bias;
                layer.bias[2 * c + 1] = -bias;
            } else if j == last {
                layer.set_weight(2 * c, c, 1.0);
                layer.set_weight(2 * c + 1, c, -1.0);
            } else {
                layer.set_weight(2 * c, 2 * c, 1.0);
                layer.set_weight(2 * c + 1, 2 * c + 1, 1.0);
            }
        }
    }
    Ok(params)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Isotropic Gaussian blobs, one per class, with balanced classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub means: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
}

/// Distance of every class mean from the origin.
pub const BLOB_SEPARATION: f64 = 6.0;

/// Per-coordinate standard deviation around each mean.
pub const BLOB_SPREAD: f64 = 1.0;

/// Deterministic blob dataset. Means sit on distinct coordinate axes at
/// distance [`BLOB_SEPARATION`] when `dim >= classes`, otherwise on random
/// directions. Samples are interleaved by class.
pub fn make_blobs(n_per_class: usize, classes: usize, dim: usize, seed: u64) -> Result<SyntheticDataset> {
    if classes < 2 {
        return Err(ModelError::Spec(format!("blobs need at least 2 classes, got {classes}")));
    }
    if dim == 0 {
        return Err(ModelError::Spec("blobs need at least one feature".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if dim >= classes {
                let mut mu = vec![0.0; dim];
                mu[c] = BLOB_SEPARATION;
                mu
            } else {
                let dir: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.into_iter().map(|v| v / norm * BLOB_SEPARATION).collect()
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(n_per_class * classes);
    for _ in 0..n_per_class {
        for (label, mu) in means.iter().enumerate() {
            let features = mu.iter().map(|&v| v + BLOB_SPREAD * gaussian(&mut rng)).collect();
            samples.push(Sample { features, label });
        }
    }
    Ok(SyntheticDataset {
        seed,
        classes,
        dim,
        spread: BLOB_SPREAD,
        means,
        samples,
    })
}

impl SyntheticDataset {
    /// Empirical class means over a subset of samples.
    pub fn class_means<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; self.dim]; self.classes];
        let mut counts = vec![0usize; self.classes];
        for s in samples {
            counts[s.label] += 1;
            for (acc, v) in sums[s.label].iter_mut().zip(&s.features) {
                *acc += v;
            }
        }
        for (sum, &n) in sums.iter_mut().zip(&counts) {
            for v in sum.iter_mut() {
                *v /= n.max(1) as f64;
            }
        }
        sums
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| ModelError::Spec(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(parse_error)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller on (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<u32>,
    #[serde(default)]
    pub note: String,
}

#[derive(Serialize, Deserialize)]
struct FileLayer {
    weights: Vec<Vec<String>>,
    bias: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    spec: NetworkSpec,
    #[serde(default)]
    meta: ModelMeta,
    layers: Vec<FileLayer>,
}

/// Formats `x` on the two-decimal grid, truncating toward zero.
pub fn format_decimal(x: f64) -> String {
    let codec = FixedPointCodec::default();
    let v = codec.to_fixed(x).unwrap_or(0);
    let sign = if v < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", v.unsigned_abs() / 100, v.unsigned_abs() % 100)
}

/// Parses `-?\d+\.\d\d` exactly.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = digits.split_once('.')?;
    if int.is_empty()
        || frac.len() != FILE_DIGITS as usize
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let hundredths: i64 = int.parse::<i64>().ok()?.checked_mul(100)?.checked_add(frac.parse::<i64>().ok()?)?;
    let signed = if s.starts_with('-') { -hundredths } else { hundredths };
    Some(signed as f64 / 100.0)
}

fn parse_error(e: serde_json::Error) -> ModelError {
    ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn to_model_string(params: &ModelParameters, meta: &ModelMeta) -> Result<String> {
    params.validate()?;
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        spec: params.spec.clone(),
        meta: meta.clone(),
        layers: params
            .layers
            .iter()
            .map(|l| FileLayer {
                weights: l
                    .weights
                    .chunks(l.outputs)
                    .map(|row| row.iter().map(|&w| format_decimal(w)).collect())
                    .collect(),
                bias: l.bias.iter().map(|&b| format_decimal(b)).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&file).map_err(|e| ModelError::Spec(e.to_string()))
}

pub fn from_model_str(text: &str) -> Result<(ModelParameters, ModelMeta)> {
    let file: ModelFile = serde_json::from_str(text).map_err(parse_error)?;
    if file.format != MODEL_FORMAT {
        return Err(ModelError::Version(file.format));
    }
    file.spec.validate()?;
    let dims = file.spec.dims();
    if file.layers.len() != file.spec.num_layers() {
        return Err(ModelError::Shape {
            layer: file.layers.len().min(file.spec.num_layers()),
            expected: format!("{} layers", file.spec.num_layers()),
            found: format!("{} layers", file.layers.len()),
        });
    }
    let decimal = |s: &String, location: String| {
        parse_decimal(s).ok_or_else(|| ModelError::Decimal {
            value: s.clone(),
            location,
        })
    };
    let mut layers = Vec::with_capacity(file.layers.len());
    for (j, fl) in file.layers.iter().enumerate() {
        let (rows, cols) = (dims[j], dims[j + 1]);
        if fl.weights.len() != rows || fl.weights.iter().any(|r| r.len() != cols) || fl.bias.len() != cols {
            return Err(ModelError::Shape {
                layer: j,
                expected: format!("weights {rows}x{cols}, bias {cols}"),
                found: format!(
                    "weights {}x{}, bias {}",
                    fl.weights.len(),
                    fl.weights.first().map_or(0, Vec::len),
                    fl.bias.len()
                ),
            });
        }
        let mut layer = Layer::zeros(rows, cols);
        for (i, row) in fl.weights.iter().enumerate() {
            for (k, s) in row.iter().enumerate() {
                layer.set_weight(i, k, decimal(s, format!("layers[{j}].weights[{i}][{k}]"))?);
            }
        }
        for (k, s) in fl.bias.iter().enumerate() {
            layer.bias[k] = decimal(s, format!("layers[{j}].bias[{k}]"))?;
        }
        layers.push(layer);
    }
    Ok((ModelParameters { spec: file.spec, layers }, file.meta))
}

pub fn save_model(path: &Path, params: &ModelParameters, meta: &ModelMeta) -> Result<()> {
    fs::write(path, to_model_string(params, meta)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelParameters, ModelMeta)> {
    from_model_str(&fs::read_to_string(path)?)
}
