//! ℓ∞ adversarial sample generators: sign-gradient PGD and the null-space
//! projected generator (NPDA).
//!
//! Both start from `x + random_start_scale · N(0, I)`, take `steps` ascent
//! steps of size `step_size`, and after each step project back onto the
//! ε-ball around `x` and then onto the optional value range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{classification_loss, kl_divergence, LossKind};
use crate::model::{ForwardTrace, NetworkModel};
use crate::numerics::{gaussian_from, rng_from_seed, Matrix, NullProjector};

/// Random-start scale used when none is configured.
pub const DEFAULT_RANDOM_START: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// ℓ∞ radius in model-input units.
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    #[serde(default = "default_random_start")]
    pub random_start_scale: f64,
    #[serde(default = "default_true")]
    pub use_sign: bool,
    #[serde(default)]
    pub value_clamp: Option<(f64, f64)>,
}

fn default_random_start() -> f64 {
    DEFAULT_RANDOM_START
}

fn default_true() -> bool {
    true
}

impl AttackSpec {
    pub fn new(epsilon: f64, step_size: f64, steps: usize) -> Self {
        Self {
            epsilon,
            step_size,
            steps,
            random_start_scale: DEFAULT_RANDOM_START,
            use_sign: true,
            value_clamp: None,
        }
    }

    /// Zero steps and no random start: the generator returns its input.
    pub fn identity() -> Self {
        Self {
            random_start_scale: 0.0,
            ..Self::new(0.0, 0.0, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.epsilon) || !ok(self.step_size) || !ok(self.random_start_scale) {
            return Err(Error::InvalidArgument(format!(
                "attack parameters must be finite and nonnegative: {self:?}"
            )));
        }
        if let Some((lo, hi)) = self.value_clamp {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!("empty clamp range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// ε-ball projection around `anchor`, then the value clamp.
    pub fn project(&self, anchor: &Matrix, candidate: &mut Matrix) {
        let eps = self.epsilon;
        for (v, &a) in candidate.data_mut().iter_mut().zip(anchor.data()) {
            *v = v.clamp(a - eps, a + eps);
            if let Some((lo, hi)) = self.value_clamp {
                *v = v.clamp(lo, hi);
            }
        }
    }
}

/// The quantity an attack ascends, bound to one batch.
#[derive(Debug, Clone)]
pub struct InnerObjective<'a> {
    kind: LossKind,
    labels: &'a [usize],
    /// Clean logits of the attacked model; only the KL objective uses them.
    clean_logits: Option<Matrix>,
}

impl<'a> InnerObjective<'a> {
    /// `Ce` and `Lse` ascend the loss at the label; `Trades` ascends
    /// KL(clean ‖ adversarial) against the model's logits at `x`.
    pub fn new(kind: LossKind, labels: &'a [usize], model: &NetworkModel, x: &Matrix) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), x.rows())));
        }
        let clean_logits = match kind {
            LossKind::Trades => Some(model.predict(x)?),
            LossKind::Ce | LossKind::Lse => None,
        };
        Ok(Self {
            kind,
            labels,
            clean_logits,
        })
    }

    /// Per-sample logit gradient (the gradient of the batch sum).
    pub fn logit_grad(&self, logits: &Matrix) -> Result<Matrix> {
        let n = logits.rows() as f64;
        let mean_grad = match (&self.kind, &self.clean_logits) {
            (LossKind::Trades, Some(clean)) => kl_divergence(clean, logits)?.adv_grad,
            (kind, _) => classification_loss(*kind, logits, self.labels)?.logit_grad,
        };
        Ok(mean_grad.scale(n))
    }

    /// Logit gradient up to a positive per-sample factor, which sign ascent
    /// ignores. For cross-entropy each row is divided by `1 − p_y`, giving
    /// `softmax` over the other classes and `−1` at the label; it stays
    /// nonzero when `p_y` rounds to 1.
    pub fn sign_ascent_grad(&self, logits: &Matrix) -> Result<Matrix> {
        if self.kind != LossKind::Ce {
            return self.logit_grad(logits);
        }
        if self.labels.len() != logits.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} logit rows",
                self.labels.len(),
                logits.rows()
            )));
        }
        let mut out = Matrix::zeros(logits.rows(), logits.cols());
        for (r, &y) in self.labels.iter().enumerate() {
            let row = logits.row(r);
            if y >= row.len() {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: row.len(),
                });
            }
            let max = row
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != y)
                .fold(f64::NEG_INFINITY, |m, (_, &z)| m.max(z));
            let g = out.row_mut(r);
            let mut sum = 0.0;
            for (k, &z) in row.iter().enumerate() {
                if k != y {
                    g[k] = (z - max).exp();
                    sum += g[k];
                }
            }
            for (k, v) in g.iter_mut().enumerate() {
                *v = if k == y { -1.0 } else { *v / sum };
            }
        }
        Ok(out)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_input(model: &NetworkModel, x: &Matrix, labels: &[usize]) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), x.rows())));
    }
    Ok(())
}

/// Shared ascent loop; `direction` maps the current iterate to an input-space direction.
fn ascend(
    x: &Matrix,
    spec: &AttackSpec,
    seed: u64,
    mut direction: impl FnMut(&Matrix) -> Result<Matrix>,
) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let noise = gaussian_from(&mut rng, x.rows(), x.cols(), spec.random_start_scale);
    let mut current = x.add(&noise)?;
    spec.project(x, &mut current);
    for _ in 0..spec.steps {
        let dir = direction(&current)?;
        for (v, d) in current.data_mut().iter_mut().zip(dir.data()) {
            let step = if spec.use_sign { sign(*d) } else { *d };
            *v += spec.step_size * step;
        }
        spec.project(x, &mut current);
    }
    Ok(current)
}

/// Sign-gradient PGD on the selected objective.
pub fn pgd_attack(
    model: &NetworkModel,
    x: &Matrix,
    labels: &[usize],
    spec: &AttackSpec,
    loss: LossKind,
    seed: u64,
) -> Result<Matrix> {
    check_input(model, x, labels)?;
    let objective = InnerObjective::new(loss, labels, model, x)?;
    ascend(x, spec, seed, |current| {
        let trace = model.forward(current)?;
        let lg = if spec.use_sign {
            objective.sign_ascent_grad(&trace.logits)?
        } else {
            objective.logit_grad(&trace.logits)?
        };
        model.input_grad(&trace, &lg)
    })
}

/// Penultimate loss gradient of `model_adv` projected into the null space of
/// the standard model's last layer: `g = (∂ℓ/∂h) · Pᵀ`, one row per sample.
pub fn npda_penultimate_direction(
    model_adv: &NetworkModel,
    projector: &NullProjector,
    trace: &ForwardTrace,
    objective: &InnerObjective<'_>,
) -> Result<Matrix> {
    if projector.dim() != model_adv.hidden_dim() {
        return Err(Error::Shape(format!(
            "projector acts on width {}, model hidden width is {}",
            projector.dim(),
            model_adv.hidden_dim()
        )));
    }
    let lg = objective.logit_grad(&trace.logits)?;
    let penult = model_adv.penultimate_grad_of_loss(&lg)?;
    projector.project_rows(&penult)
}

/// Null-space projected sample generation: each step pulls the projected
/// penultimate direction back to the input through the backbone.
pub fn npda_generate(
    model_adv: &NetworkModel,
    projector: &NullProjector,
    x: &Matrix,
    labels: &[usize],
    spec: &AttackSpec,
    loss: LossKind,
    seed: u64,
) -> Result<Matrix> {
    npda_run(model_adv, projector, None, x, labels, spec, loss, seed).map(|(adv, _)| adv)
}

/// [`npda_generate`] that also returns the largest
/// `‖M_std·gᵢ‖_∞ / ‖M_std‖_max` over every step and sample.
#[allow(clippy::too_many_arguments)]
pub fn npda_generate_audited(
    model_adv: &NetworkModel,
    projector: &NullProjector,
    std_weight: &Matrix,
    x: &Matrix,
    labels: &[usize],
    spec: &AttackSpec,
    loss: LossKind,
    seed: u64,
) -> Result<(Matrix, f64)> {
    npda_run(model_adv, projector, Some(std_weight), x, labels, spec, loss, seed)
}

/// `max_i ‖M·gᵢ‖_∞ / ‖M‖_max` for the rows `gᵢ` of `g`; 0 when `M` is zero.
pub fn null_residual(m: &Matrix, g: &Matrix) -> Result<f64> {
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(g.matmul_t(m)?.max_abs() / scale)
}

#[allow(clippy::too_many_arguments)]
fn npda_run(
    model_adv: &NetworkModel,
    projector: &NullProjector,
    std_weight: Option<&Matrix>,
    x: &Matrix,
    labels: &[usize],
    spec: &AttackSpec,
    loss: LossKind,
    seed: u64,
) -> Result<(Matrix, f64)> {
    check_input(model_adv, x, labels)?;
    if projector.dim() != model_adv.hidden_dim() {
        return Err(Error::Shape(format!(
            "projector acts on width {}, model hidden width is {}",
            projector.dim(),
            model_adv.hidden_dim()
        )));
    }
    let objective = InnerObjective::new(loss, labels, model_adv, x)?;
    let mut worst = 0.0_f64;
    let adv = ascend(x, spec, seed, |current| {
        let trace = model_adv.forward(current)?;
        let g = npda_penultimate_direction(model_adv, projector, &trace, &objective)?;
        if let Some(m) = std_weight {
            worst = worst.max(null_residual(m, &g)?);
        }
        model_adv.backward_to_input(&trace, &g)
    })?;
    Ok((adv, worst))
}
