//! Feed-forward network split into a nonlinear backbone and a distinguished
//! last linear layer `y = M·h + b`.
//!
//! Batches are row-major: one sample per row. A layer with weight `W`
//! (`out × in`) maps a batch `X` (`n × in`) to `X·Wᵀ + b`.

mod io;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, Matrix};

pub use io::{load_model, save_model, MODEL_FILE_VERSION, MODEL_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn check(&self) -> Result<()> {
        if self.bias.len() != self.weight.rows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output units",
                self.bias.len(),
                self.weight.rows()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut pre = x.matmul_t(&self.weight)?;
        pre.add_row_broadcast(&self.bias)?;
        let post = match self.activation {
            Activation::Relu => pre.map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Identity => pre.clone(),
        };
        Ok((pre, post))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    backbone: Vec<LayerParams>,
    last_layer: LayerParams,
}

/// Everything `forward` computed, kept for the backward passes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[i]` is the input to backbone layer `i`; `inputs[0]` is the batch.
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each backbone layer.
    pub pre_activations: Vec<Matrix>,
    /// Penultimate activation `h` (`n × hidden_dim`).
    pub penultimate: Matrix,
    /// `h·Mᵀ + b` (`n × classes`).
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &LayerParams) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn accumulate(&mut self, other: &LayerGrads) -> Result<()> {
        self.weight.add_scaled(&other.weight, 1.0)?;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        Ok(())
    }
}

/// Parameter gradients with the same layout as [`NetworkModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub backbone: Vec<LayerGrads>,
    pub last_layer: LayerGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Self {
            backbone: model.backbone.iter().map(LayerGrads::zeros_like).collect(),
            last_layer: LayerGrads::zeros_like(&model.last_layer),
        }
    }

    pub fn accumulate(&mut self, other: &ModelGrads) -> Result<()> {
        if self.backbone.len() != other.backbone.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            a.accumulate(b)?;
        }
        self.last_layer.accumulate(&other.last_layer)
    }
}

/// He-scaled Gaussian weights and zero biases. `dims` lists the input width,
/// every hidden width, and the class count; all hidden layers use ReLU.
pub fn init_model(dims: &[usize], seed: u64) -> Result<NetworkModel> {
    init_model_with_extra_linear(dims, None, seed)
}

/// Like [`init_model`], optionally inserting an identity-activation layer of
/// the given width right before the last layer.
pub fn init_model_with_extra_linear(
    dims: &[usize],
    extra_linear: Option<usize>,
    seed: u64,
) -> Result<NetworkModel> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a model needs at least input and output widths, got {dims:?}"
        )));
    }
    if dims.iter().any(|&d| d == 0) || extra_linear == Some(0) {
        return Err(Error::InvalidArgument(format!(
            "layer widths must be positive, got {dims:?}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut he = |out: usize, inp: usize, activation: Activation| {
        let std = (2.0 / inp as f64).sqrt();
        let weight = Matrix::from_fn(out, inp, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        });
        LayerParams {
            weight,
            bias: vec![0.0; out],
            activation,
        }
    };

    let mut backbone = Vec::new();
    for w in dims[..dims.len() - 1].windows(2) {
        backbone.push(he(w[1], w[0], Activation::Relu));
    }
    let mut hidden = dims[dims.len() - 2];
    if let Some(width) = extra_linear {
        backbone.push(he(width, hidden, Activation::Identity));
        hidden = width;
    }
    let last_layer = he(dims[dims.len() - 1], hidden, Activation::Identity);
    NetworkModel::new(backbone, last_layer)
}

impl NetworkModel {
    pub fn new(backbone: Vec<LayerParams>, last_layer: LayerParams) -> Result<Self> {
        if last_layer.activation != Activation::Identity {
            return Err(Error::InvalidArgument(
                "last layer must use the identity activation".into(),
            ));
        }
        last_layer.check()?;
        for (i, layer) in backbone.iter().enumerate() {
            layer.check()?;
            let next_in = backbone
                .get(i + 1)
                .map_or(last_layer.input_dim(), LayerParams::input_dim);
            if layer.output_dim() != next_in {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} units but the next layer expects {next_in}",
                    layer.output_dim()
                )));
            }
        }
        Ok(Self {
            backbone,
            last_layer,
        })
    }

    pub fn backbone(&self) -> &[LayerParams] {
        &self.backbone
    }

    pub fn last_layer(&self) -> &LayerParams {
        &self.last_layer
    }

    /// The last-layer map `M` (`classes × hidden_dim`).
    pub fn last_weight(&self) -> &Matrix {
        &self.last_layer.weight
    }

    pub fn input_dim(&self) -> usize {
        self.backbone
            .first()
            .map_or(self.last_layer.input_dim(), LayerParams::input_dim)
    }

    pub fn hidden_dim(&self) -> usize {
        self.last_layer.input_dim()
    }

    pub fn class_count(&self) -> usize {
        self.last_layer.output_dim()
    }

    /// All layer widths from input to classes.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.backbone.iter().map(LayerParams::output_dim));
        d.push(self.class_count());
        d
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Backbone layers followed by the last layer.
    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.backbone.iter().chain(std::iter::once(&self.last_layer))
    }

    pub(crate) fn layers_mut(&mut self) -> (&mut [LayerParams], &mut LayerParams) {
        (&mut self.backbone, &mut self.last_layer)
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.backbone.len());
        let mut pre_activations = Vec::with_capacity(self.backbone.len());
        let mut current = x.clone();
        for layer in &self.backbone {
            let (pre, post) = layer.apply(&current)?;
            inputs.push(std::mem::replace(&mut current, post));
            pre_activations.push(pre);
        }
        let (logits, _) = self.last_layer.apply(&current)?;
        Ok(ForwardTrace {
            inputs,
            pre_activations,
            penultimate: current,
            logits,
        })
    }

    /// Logits only.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.logits)
    }

    /// `∂ℓ/∂h = (∂ℓ/∂y)·M`.
    pub fn penultimate_grad_of_loss(&self, logit_grad: &Matrix) -> Result<Matrix> {
        if logit_grad.cols() != self.class_count() {
            return Err(Error::Shape(format!(
                "logit gradient has {} columns, model has {} classes",
                logit_grad.cols(),
                self.class_count()
            )));
        }
        logit_grad.matmul(&self.last_layer.weight)
    }

    /// Reverse-mode gradients of the scalar loss whose logit gradient is `logit_grad`.
    pub fn backward_params(&self, trace: &ForwardTrace, logit_grad: &Matrix) -> Result<ModelGrads> {
        self.check_trace(trace)?;
        if logit_grad.shape() != trace.logits.shape() {
            return Err(Error::Shape(format!(
                "logit gradient is {}x{}, logits are {}x{}",
                logit_grad.rows(),
                logit_grad.cols(),
                trace.logits.rows(),
                trace.logits.cols()
            )));
        }
        let last_layer = LayerGrads {
            weight: logit_grad.t_matmul(&trace.penultimate)?,
            bias: logit_grad.column_sums(),
        };
        let mut upstream = self.penultimate_grad_of_loss(logit_grad)?;
        let mut backbone = Vec::with_capacity(self.backbone.len());
        for (i, layer) in self.backbone.iter().enumerate().rev() {
            let grad_pre = activation_backward(layer.activation, &trace.pre_activations[i], upstream)?;
            backbone.push(LayerGrads {
                weight: grad_pre.t_matmul(&trace.inputs[i])?,
                bias: grad_pre.column_sums(),
            });
            upstream = grad_pre.matmul(&layer.weight)?;
        }
        backbone.reverse();
        Ok(ModelGrads {
            backbone,
            last_layer,
        })
    }

    /// Backbone vector–Jacobian product: pulls `∂ℓ/∂h` back to the input.
    pub fn backward_to_input(&self, trace: &ForwardTrace, penult_grad: &Matrix) -> Result<Matrix> {
        self.check_trace(trace)?;
        if penult_grad.shape() != trace.penultimate.shape() {
            return Err(Error::Shape(format!(
                "penultimate gradient is {}x{}, expected {}x{}",
                penult_grad.rows(),
                penult_grad.cols(),
                trace.penultimate.rows(),
                trace.penultimate.cols()
            )));
        }
        let mut upstream = penult_grad.clone();
        for (i, layer) in self.backbone.iter().enumerate().rev() {
            let grad_pre = activation_backward(layer.activation, &trace.pre_activations[i], upstream)?;
            upstream = grad_pre.matmul(&layer.weight)?;
        }
        Ok(upstream)
    }

    /// Full input gradient for a given logit gradient.
    pub fn input_grad(&self, trace: &ForwardTrace, logit_grad: &Matrix) -> Result<Matrix> {
        let g = self.penultimate_grad_of_loss(logit_grad)?;
        self.backward_to_input(trace, &g)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.pre_activations.len() != self.backbone.len() || trace.inputs.len() != self.backbone.len() {
            return Err(Error::Shape(
                "trace was not produced by a model of this architecture".into(),
            ));
        }
        if trace.penultimate.cols() != self.hidden_dim() {
            return Err(Error::Shape("trace penultimate width mismatch".into()));
        }
        Ok(())
    }
}

/// ReLU passes gradient only where the pre-activation is strictly positive.
fn activation_backward(activation: Activation, pre: &Matrix, upstream: Matrix) -> Result<Matrix> {
    match activation {
        Activation::Identity => Ok(upstream),
        Activation::Relu => upstream.zip_with(pre, "relu_backward", |g, z| if z > 0.0 { g } else { 0.0 }),
    }
}
