//! Differentiable feature maps `φ(x; w)` used by deep kernels.
//!
//! Every extractor consumes one flattened window (`n_inputs × window`,
//! row-major, one row per input variable) and produces a small latent
//! vector. Forward passes can be recorded into a [`Recording`]; the
//! matching backward pass returns exact reverse-mode gradients with respect
//! to every parameter and to the input.

mod cnn;
mod dense;
mod gcn;
mod mlp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cnn::{conv1d, CnnNet, CnnSpec};
pub use gcn::{gcn_layer, select_nodes, GcnNet, GcnSpec, SubsamplePolicy};
pub use mlp::{MlpNet, MlpSpec};

/// Elementwise nonlinearity between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One named weight matrix or bias vector, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Ordered parameter collection of one extractor. Also used for gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExtractorParams {
    pub blocks: Vec<ParamBlock>,
}

impl ExtractorParams {
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock::zeros(b.name.clone(), b.rows, b.cols))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            out.extend_from_slice(&b.data);
        }
    }

    /// Overwrites all values from a flat slice; returns the number consumed.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let n = self.len();
        if flat.len() < n {
            return Err(Error::Shape(format!(
                "expected at least {n} flat parameters, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        for b in &mut self.blocks {
            let len = b.data.len();
            b.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(off)
    }

    pub fn add_assign(&mut self, other: &ExtractorParams) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(ParamBlock::shape).collect()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Intermediate values kept by a recorded forward pass.
#[derive(Debug, Clone, Default)]
pub struct Recording {
    pub(crate) tape: Vec<Vec<f64>>,
    pub(crate) indices: Vec<usize>,
    recorded: bool,
}

impl Recording {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }

    pub(crate) fn reset(&mut self) {
        self.tape.clear();
        self.indices.clear();
        self.recorded = true;
    }

    pub(crate) fn require(&self) -> Result<()> {
        if self.recorded {
            Ok(())
        } else {
            Err(Error::NoForwardPass)
        }
    }
}

/// Common interface of the three extractor architectures.
pub trait FeatureMap {
    /// Length of the flattened input window.
    fn input_len(&self) -> usize;
    fn latent_dim(&self) -> usize;
    /// Parameter names and shapes, in storage order.
    fn param_shapes(&self) -> Vec<(String, usize, usize, bool)>;
    fn forward(
        &self,
        params: &ExtractorParams,
        input: &[f64],
        rec: Option<&mut Recording>,
    ) -> Result<Vec<f64>>;
    /// Accumulates `upstreamᵀ ∂φ/∂w` into `grads` and returns `upstreamᵀ ∂φ/∂x`.
    fn backward(
        &self,
        params: &ExtractorParams,
        rec: &Recording,
        upstream: &[f64],
        grads: &mut ExtractorParams,
    ) -> Result<Vec<f64>>;
}

/// Draws weights from `N(0, 1/fan_in)` and zeroes biases.
///
/// The boolean in each shape entry marks a bias; `fan_in` is the number of
/// rows for dense/graph weights and the row length for convolution weights.
fn init_blocks(shapes: &[(String, usize, usize, bool)], fan_ins: &[usize], seed: u64) -> ExtractorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = shapes
        .iter()
        .zip(fan_ins)
        .map(|((name, rows, cols, is_bias), &fan_in)| {
            let mut b = ParamBlock::zeros(name.clone(), *rows, *cols);
            if !is_bias {
                let normal = Normal::new(0.0, (1.0 / fan_in.max(1) as f64).sqrt())
                    .expect("finite std");
                for v in &mut b.data {
                    *v = normal.sample(&mut rng);
                }
            }
            b
        })
        .collect();
    ExtractorParams { blocks }
}

/// Architecture descriptor, serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    Mlp(MlpSpec),
    Cnn(CnnSpec),
    Gcn(GcnSpec),
}

#[derive(Debug, Clone)]
enum Net {
    Mlp(MlpNet),
    Cnn(CnnNet),
    Gcn(GcnNet),
}

/// An extractor architecture together with its parameters.
#[derive(Debug, Clone)]
pub struct Extractor {
    spec: ExtractorSpec,
    net: Net,
    pub params: ExtractorParams,
}

impl Extractor {
    /// Builds the network and initializes parameters from `seed`.
    pub fn new(spec: ExtractorSpec, seed: u64) -> Result<Self> {
        let net = Self::build(&spec)?;
        let params = init_params_for(&net, seed);
        Ok(Self { spec, net, params })
    }

    /// Rebuilds an extractor from stored parameters, checking shapes.
    pub fn with_params(spec: ExtractorSpec, params: ExtractorParams) -> Result<Self> {
        let net = Self::build(&spec)?;
        let expected: Vec<(usize, usize)> = net_ref(&net)
            .param_shapes()
            .into_iter()
            .map(|(_, r, c, _)| (r, c))
            .collect();
        if params.shapes() != expected {
            return Err(Error::Shape(format!(
                "parameter shapes {:?} do not match architecture {:?}",
                params.shapes(),
                expected
            )));
        }
        if !params.is_finite() {
            return Err(Error::Numerical("non-finite extractor parameter".into()));
        }
        Ok(Self { spec, net, params })
    }

    fn build(spec: &ExtractorSpec) -> Result<Net> {
        Ok(match spec {
            ExtractorSpec::Mlp(s) => Net::Mlp(MlpNet::new(s.clone())?),
            ExtractorSpec::Cnn(s) => Net::Cnn(CnnNet::new(s.clone())?),
            ExtractorSpec::Gcn(s) => Net::Gcn(GcnNet::new(s.clone())?),
        })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn feature_map(&self) -> &dyn FeatureMap {
        net_ref(&self.net)
    }

    pub fn gcn(&self) -> Option<&GcnNet> {
        match &self.net {
            Net::Gcn(g) => Some(g),
            _ => None,
        }
    }

    pub fn input_len(&self) -> usize {
        self.feature_map().input_len()
    }

    pub fn latent_dim(&self) -> usize {
        self.feature_map().latent_dim()
    }

    pub fn forward(&self, input: &[f64], rec: Option<&mut Recording>) -> Result<Vec<f64>> {
        self.feature_map().forward(&self.params, input, rec)
    }

    /// Gradients of `upstream · φ(x)` with respect to parameters and input,
    /// using the forward pass stored in `rec`.
    pub fn param_gradients(
        &self,
        rec: &Recording,
        upstream: &[f64],
    ) -> Result<(ExtractorParams, Vec<f64>)> {
        let mut grads = self.params.zeros_like();
        let dx = self
            .feature_map()
            .backward(&self.params, rec, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}

fn net_ref(net: &Net) -> &dyn FeatureMap {
    match net {
        Net::Mlp(n) => n,
        Net::Cnn(n) => n,
        Net::Gcn(n) => n,
    }
}

fn init_params_for(net: &Net, seed: u64) -> ExtractorParams {
    let map = net_ref(net);
    let shapes = map.param_shapes();
    let fan_ins: Vec<usize> = match net {
        Net::Cnn(_) => shapes
            .iter()
            .map(|(name, rows, cols, _)| if name.starts_with("conv") { *cols } else { *rows })
            .collect(),
        _ => shapes.iter().map(|(_, rows, _, _)| *rows).collect(),
    };
    init_blocks(&shapes, &fan_ins, seed)
}

/// Initializes parameters for `spec` deterministically from `seed`.
pub fn init_params(spec: &ExtractorSpec, seed: u64) -> Result<ExtractorParams> {
    Ok(Extractor::new(spec.clone(), seed)?.params)
}
