//! From-scratch MLP classifier.
//!
//! `x → [dense + activation]* → z → logits = W z`. The output head `W` has one
//! row per class and no bias, so the class score is exactly `w_j · z` and the
//! head is the whole output parameterization seen by the regularizers.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, axpy, cosine_similarity, seeded_rng, RandomSource, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// How class scores are read off the head at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// `w_j · z`.
    #[default]
    Dot,
    /// `cos(w_j, z)`, for heads trained with a cosine-margin loss.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Widths of the hidden layers; the last one is the head width `H^o`.
    /// Empty means `z = x`.
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_classes")]
    pub output_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}

fn default_classes() -> usize {
    5
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_classes,
            activation: Activation::Relu,
            init_seed: 0,
        }
    }

    /// Width of `z`.
    pub fn head_width(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("input_dim", "must be positive"));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::validation(
                "hidden_dims",
                format!("layer {i} has zero width"),
            ));
        }
        if self.output_classes < 2 {
            return Err(Error::validation(
                "output_classes",
                "at least 2 classes required",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`.
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub config: MlpConfig,
    pub layers: Vec<DenseLayer>,
    /// `|C| × H^o`, rows are the class weight vectors.
    pub head: RealMatrix,
    #[serde(default)]
    pub scoring: Scoring,
}

/// Per-sample intermediate values recorded by [`Mlp::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Input to each dense layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each dense layer.
    pre: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
    pub cache: ForwardCache,
}

/// Gradients for every parameter of an [`Mlp`], in the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<(RealMatrix, Vec<f64>)>,
    pub head: RealMatrix,
}

impl GradientSet {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    (
                        RealMatrix::zeros(l.weight.rows(), l.weight.cols()),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
            head: RealMatrix::zeros(model.head.rows(), model.head.cols()),
        }
    }

    /// `self += alpha * other`.
    pub fn accumulate(&mut self, alpha: f64, other: &GradientSet) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            axpy(alpha, ow.as_slice(), w.as_mut_slice());
            axpy(alpha, ob, b);
        }
        axpy(alpha, other.head.as_slice(), self.head.as_mut_slice());
    }

    /// Flat views in parameter order (see [`Mlp::param_slices_mut`]).
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for (w, b) in &self.layers {
            out.push(w.as_slice());
            out.push(b);
        }
        out.push(self.head.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut RandomSource) -> RealMatrix {
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    RealMatrix::from_vec(rows, cols, data).expect("length matches shape")
}

impl Mlp {
    /// Scaled-uniform initialization, `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.init_seed);
        let mut layers = Vec::with_capacity(config.hidden_dims.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden_dims {
            layers.push(DenseLayer {
                weight: uniform_matrix(width, fan_in, &mut rng),
                bias: vec![0.0; width],
                activation: config.activation,
            });
            fan_in = width;
        }
        let mut head = uniform_matrix(config.output_classes, fan_in, &mut rng);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for i in 0..head.rows() {
            while head.row(i).iter().all(|x| *x == 0.0) {
                for x in head.row_mut(i) {
                    *x = rng.random_range(-bound..=bound);
                }
            }
        }
        Ok(Self {
            config,
            layers,
            head,
            scoring: Scoring::Dot,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        if x.len() != self.config.input_dim {
            return Err(Error::shape("Mlp::forward", self.config.input_dim, x.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut a = layer.weight.matvec(&h)?;
            axpy(1.0, &layer.bias, &mut a);
            let next = a.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(a);
        }
        let logits = self.head.matvec(&h)?;
        Ok(ForwardOutput {
            z: h.clone(),
            logits,
            cache: ForwardCache { inputs, pre, z: h },
        })
    }

    /// Backpropagation from the head.
    ///
    /// `extra_grad_head` is added to the head gradient verbatim; callers
    /// scale it beforehand.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        extra_grad_head: &RealMatrix,
    ) -> Result<GradientSet> {
        self.backward_full(cache, grad_logits, extra_grad_head, None)
    }

    /// As [`Mlp::backward`], with an additional gradient arriving directly on
    /// `z` (cosine losses and feature-space regularizers).
    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        extra_grad_head: &RealMatrix,
        extra_grad_z: Option<&[f64]>,
    ) -> Result<GradientSet> {
        if grad_logits.len() != self.head.rows() {
            return Err(Error::shape(
                "Mlp::backward",
                self.head.rows(),
                grad_logits.len(),
            ));
        }
        if extra_grad_head.shape() != self.head.shape() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("{:?}", self.head.shape()),
                format!("{:?}", extra_grad_head.shape()),
            ));
        }
        if cache.inputs.len() != self.layers.len() || cache.z.len() != self.head.cols() {
            return Err(Error::shape(
                "Mlp::backward",
                "cache from this model",
                "foreign cache",
            ));
        }
        let mut head = extra_grad_head.clone();
        head.add_outer(1.0, grad_logits, &cache.z);

        let mut delta = self.head.matvec_transposed(grad_logits)?;
        if let Some(gz) = extra_grad_z {
            if gz.len() != delta.len() {
                return Err(Error::shape("Mlp::backward", delta.len(), gz.len()));
            }
            axpy(1.0, gz, &mut delta);
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[k];
            for (d, &p) in delta.iter_mut().zip(pre) {
                *d *= layer.activation.derivative(p);
            }
            let mut gw = RealMatrix::zeros(layer.weight.rows(), layer.weight.cols());
            gw.add_outer(1.0, &delta, &cache.inputs[k]);
            let gb = delta.clone();
            if k > 0 {
                delta = layer.weight.matvec_transposed(&delta)?;
            }
            layers.push((gw, gb));
        }
        layers.reverse();
        Ok(GradientSet { layers, head })
    }

    /// Class scores under the model's [`Scoring`]. A zero `z` scores 0 for
    /// every class under cosine scoring.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward(x)?;
        Ok(match self.scoring {
            Scoring::Dot => out.logits,
            Scoring::Cosine => self
                .head
                .row_iter()
                .map(|w| cosine_similarity(&out.z, w).unwrap_or(0.0))
                .collect(),
        })
    }

    /// Predicted class index; ties resolve to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    /// Mutable flat views of every parameter array: each layer's weight then
    /// bias, then the head.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(self.head.as_mut_slice());
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(self.head.as_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Named feature groups, concatenated in a declared order before the MLP.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureGroupSet {
    pub groups: Vec<(String, Vec<f64>)>,
}

impl FeatureGroupSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let name = name.into();
        match self.groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => *v = values,
            None => self.groups.push((name, values)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Concatenates `groups` in the order given by `order`.
pub fn fuse<S: AsRef<str>>(groups: &FeatureGroupSet, order: &[S]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for name in order {
        let name = name.as_ref();
        let g = groups
            .get(name)
            .ok_or_else(|| Error::domain(format!("fuse: missing feature group `{name}`")))?;
        out.extend_from_slice(g);
    }
    Ok(out)
}

const CHECKPOINT_FORMAT: &str = "wranksim-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: Mlp,
}

impl Mlp {
    pub fn to_checkpoint_string(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&ck).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!(
                "not a checkpoint: format `{}`",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        ck.model.check_shapes()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&s)
    }

    fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.hidden_dims.len() {
            return Err(Error::shape(
                "checkpoint",
                format!("{} layers", self.config.hidden_dims.len()),
                self.layers.len(),
            ));
        }
        let mut fan_in = self.config.input_dim;
        for (l, &width) in self.layers.iter().zip(&self.config.hidden_dims) {
            if l.weight.shape() != (width, fan_in) || l.bias.len() != width {
                return Err(Error::shape(
                    "checkpoint",
                    format!("layer {width}x{fan_in}"),
                    format!("{:?}", l.weight.shape()),
                ));
            }
            fan_in = width;
        }
        if self.head.shape() != (self.config.output_classes, fan_in) {
            return Err(Error::shape(
                "checkpoint",
                format!("head {}x{fan_in}", self.config.output_classes),
                format!("{:?}", self.head.shape()),
            ));
        }
        Ok(())
    }
}
