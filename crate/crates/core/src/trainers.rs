//! Training loops: standard, PGD-AT, TRADES, NPDA and NPGD.
//!
//! All loops use plain constant-rate SGD on batch-mean losses. Shuffling and
//! every attack draw are seeded from `TrainSpec::seed`, so a run is a pure
//! function of `(data, spec, initial model)`.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{npda_generate_audited, null_residual, pgd_attack, AttackSpec};
use crate::error::{Error, Result};
use crate::harness::{evaluate, Dataset};
use crate::losses::{classification_loss, trades_loss, LossKind};
use crate::model::{load_model, ModelGrads, NetworkModel};
use crate::numerics::{derive_seed, null_projector_svd, rng_from_seed, Matrix, NullProjector, ProjectorInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    PgdAt,
    Trades,
    Npda,
    Npgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::PgdAt => "pgd_at",
            Method::Trades => "trades",
            Method::Npda => "npda",
            Method::Npgd => "npgd",
        }
    }

    pub fn needs_std_model(self) -> bool {
        matches!(self, Method::Npda | Method::Npgd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub method: Method,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "AttackSpec::identity")]
    pub attack: AttackSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub std_model_path: Option<PathBuf>,
    /// NPGD only: keep every backbone layer at its standard-model value.
    #[serde(default)]
    pub freeze_backbone: bool,
    /// Attack used for the per-epoch robust error; defaults to `attack`.
    #[serde(default)]
    pub report_attack: Option<AttackSpec>,
}

fn default_loss() -> LossKind {
    LossKind::Ce
}

fn default_beta() -> f64 {
    1.0
}

impl TrainSpec {
    pub fn new(method: Method, learning_rate: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            method,
            loss: LossKind::Ce,
            beta: 1.0,
            learning_rate,
            batch_size,
            epochs,
            attack: AttackSpec::identity(),
            seed: 0,
            std_model_path: None,
            freeze_backbone: false,
            report_attack: None,
        }
    }

    /// Toggles backbone updates in NPGD.
    pub fn freeze_backbone_option(mut self, frozen: bool) -> Self {
        self.freeze_backbone = frozen;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!("β must be finite and nonnegative, got {}", self.beta)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.attack.validate()?;
        if let Some(a) = &self.report_attack {
            a.validate()?;
        }
        Ok(())
    }

    /// As [`validate`](Self::validate), plus the std-model path NPDA/NPGD need.
    pub fn validate_with_paths(&self) -> Result<()> {
        self.validate()?;
        if self.method.needs_std_model() && self.std_model_path.is_none() {
            return Err(Error::MissingStdModel(self.method.name().into()));
        }
        Ok(())
    }

    fn report_attack(&self) -> AttackSpec {
        self.report_attack.unwrap_or(self.attack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub clean_error: f64,
    pub robust_error: f64,
    pub mean_clean_loss: f64,
    pub mean_adv_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub method: Method,
    pub loss: LossKind,
    pub beta: f64,
    pub update_steps: usize,
    pub epochs: Vec<EpochStats>,
    pub projector: Option<ProjectorInfo>,
    /// Seed used for the robust-error evaluation of the final epoch.
    pub final_eval_seed: u64,
    /// NPDA: largest `‖M_std·g‖_∞ / ‖M_std‖_max` over every generated direction.
    pub direction_residual: Option<f64>,
    /// NPGD: `‖M_std·(M_final − M_std)ᵀ‖_max / ‖M_std‖_max`.
    pub last_layer_residual: Option<f64>,
    #[serde(skip)]
    pub model: NetworkModel,
}

impl TrainReport {
    pub fn final_epoch(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// `θ ← θ − lr · ∇θ`.
pub fn sgd_step(model: &mut NetworkModel, grads: &ModelGrads, learning_rate: f64) -> Result<()> {
    apply_update(model, grads, learning_rate, &UpdateRule::Full)
}

enum UpdateRule<'a> {
    Full,
    /// Last-layer weight step `G·P`, frozen last-layer bias.
    NullProjected {
        projector: &'a NullProjector,
        freeze_backbone: bool,
    },
}

fn apply_update(model: &mut NetworkModel, grads: &ModelGrads, lr: f64, rule: &UpdateRule<'_>) -> Result<()> {
    let (backbone, last) = model.layers_mut();
    if grads.backbone.len() != backbone.len() {
        return Err(Error::Shape(format!(
            "{} gradient layers for {} backbone layers",
            grads.backbone.len(),
            backbone.len()
        )));
    }
    let update_backbone = !matches!(rule, UpdateRule::NullProjected { freeze_backbone: true, .. });
    if update_backbone {
        for (layer, g) in backbone.iter_mut().zip(&grads.backbone) {
            layer.weight.add_scaled(&g.weight, -lr)?;
            if g.bias.len() != layer.bias.len() {
                return Err(Error::Shape("bias gradient length mismatch".into()));
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }
    match rule {
        UpdateRule::Full => {
            last.weight.add_scaled(&grads.last_layer.weight, -lr)?;
            for (b, gb) in last.bias.iter_mut().zip(&grads.last_layer.bias) {
                *b -= lr * gb;
            }
        }
        UpdateRule::NullProjected { projector, .. } => {
            let projected = projector.project_rows(&grads.last_layer.weight)?;
            last.weight.add_scaled(&projected, -lr)?;
        }
    }
    Ok(())
}

enum Generator<'a> {
    Clean,
    Pgd,
    Npda {
        projector: &'a NullProjector,
        std_weight: &'a Matrix,
    },
}

struct Plan<'a> {
    generator: Generator<'a>,
    update: UpdateRule<'a>,
    /// Loss used both to train and to drive the inner attack.
    loss: LossKind,
    projector: Option<ProjectorInfo>,
    /// Last-layer weight of the standard model, for the residual audits.
    std_weight: Option<&'a Matrix>,
}

const EVAL_STREAM: u64 = 0xE7A1;

fn run(data: &Dataset, spec: &TrainSpec, mut model: NetworkModel, plan: Plan<'_>) -> Result<TrainReport> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            data.dim(),
            model.input_dim()
        )));
    }
    let trades_off = plan.loss == LossKind::Trades && spec.beta == 0.0;
    let mut epochs = Vec::with_capacity(spec.epochs);
    let mut update_steps = 0;
    let mut direction_residual: Option<f64> = None;
    let mut final_eval_seed = derive_seed(spec.seed, &[EVAL_STREAM, 0]);
    for epoch in 0..spec.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(spec.seed, &[1, epoch as u64])));
        let mut clean_loss_sum = 0.0;
        let mut adv_loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(spec.batch_size).enumerate() {
            let (xb, yb) = data.batch(idx);
            let attack_seed = derive_seed(spec.seed, &[2, epoch as u64, b as u64]);
            let adv = if trades_off {
                None
            } else {
                match plan.generator {
                    Generator::Clean => None,
                    Generator::Pgd => Some(pgd_attack(&model, &xb, &yb, &spec.attack, plan.loss, attack_seed)?),
                    Generator::Npda { projector, std_weight } => {
                        let (adv, residual) = npda_generate_audited(
                            &model,
                            projector,
                            std_weight,
                            &xb,
                            &yb,
                            &spec.attack,
                            plan.loss,
                            attack_seed,
                        )?;
                        direction_residual = Some(direction_residual.unwrap_or(0.0).max(residual));
                        Some(adv)
                    }
                }
            };
            let (grads, clean_loss, adv_loss) = batch_gradients(&model, &xb, adv.as_ref(), &yb, plan.loss, spec.beta)?;
            clean_loss_sum += clean_loss;
            adv_loss_sum += adv_loss;
            batches += 1;
            apply_update(&mut model, &grads, spec.learning_rate, &plan.update)?;
            update_steps += 1;
        }
        final_eval_seed = derive_seed(spec.seed, &[EVAL_STREAM, epoch as u64]);
        let eval = evaluate(&model, data, &spec.report_attack(), final_eval_seed)?;
        epochs.push(EpochStats {
            epoch,
            clean_error: eval.clean_error,
            robust_error: eval.pgd_error,
            mean_clean_loss: clean_loss_sum / batches as f64,
            mean_adv_loss: adv_loss_sum / batches as f64,
        });
        log::debug!(
            "{} epoch {epoch}: clean {:.4} robust {:.4}",
            spec.method.name(),
            eval.clean_error,
            eval.pgd_error
        );
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters after training"));
    }
    let last_layer_residual = match (&plan.update, plan.std_weight) {
        (UpdateRule::NullProjected { .. }, Some(m)) => {
            Some(null_residual(m, &model.last_weight().sub(m)?)?)
        }
        _ => None,
    };
    Ok(TrainReport {
        method: spec.method,
        loss: plan.loss,
        beta: spec.beta,
        update_steps,
        epochs,
        projector: plan.projector,
        final_eval_seed,
        direction_residual,
        last_layer_residual,
        model,
    })
}

/// Returns parameter gradients, the clean-batch loss and the adversarial-batch loss.
fn batch_gradients(
    model: &NetworkModel,
    xb: &Matrix,
    adv: Option<&Matrix>,
    yb: &[usize],
    loss: LossKind,
    beta: f64,
) -> Result<(ModelGrads, f64, f64)> {
    let clean_trace = model.forward(xb)?;
    match (loss, adv) {
        (LossKind::Trades, Some(adv)) => {
            let adv_trace = model.forward(adv)?;
            let l = trades_loss(&clean_trace.logits, &adv_trace.logits, yb, beta)?;
            let mut grads = model.backward_params(&clean_trace, &l.clean_grad)?;
            grads.accumulate(&model.backward_params(&adv_trace, &l.adv_grad)?)?;
            let clean = classification_loss(LossKind::Ce, &clean_trace.logits, yb)?.value;
            Ok((grads, clean, l.value))
        }
        (LossKind::Trades, None) => {
            let l = classification_loss(LossKind::Ce, &clean_trace.logits, yb)?;
            let grads = model.backward_params(&clean_trace, &l.logit_grad)?;
            Ok((grads, l.value, l.value))
        }
        (kind, Some(adv)) => {
            let adv_trace = model.forward(adv)?;
            let l = classification_loss(kind, &adv_trace.logits, yb)?;
            let grads = model.backward_params(&adv_trace, &l.logit_grad)?;
            let clean = classification_loss(kind, &clean_trace.logits, yb)?.value;
            Ok((grads, clean, l.value))
        }
        (kind, None) => {
            let l = classification_loss(kind, &clean_trace.logits, yb)?;
            let grads = model.backward_params(&clean_trace, &l.logit_grad)?;
            Ok((grads, l.value, l.value))
        }
    }
}

fn build_projector(std_model: &NetworkModel) -> Result<NullProjector> {
    let p = null_projector_svd(std_model.last_weight(), 0.0)?;
    if p.is_trivial() {
        return Err(Error::TrivialNullSpace {
            rank: p.source_rank(),
            hidden: p.dim(),
        });
    }
    Ok(p)
}

/// Clean training on the selected loss (`Trades` falls back to cross-entropy).
pub fn train_standard(data: &Dataset, spec: &TrainSpec, init: NetworkModel) -> Result<TrainReport> {
    let loss = if spec.loss == LossKind::Trades { LossKind::Ce } else { spec.loss };
    run(
        data,
        spec,
        init,
        Plan {
            generator: Generator::Clean,
            update: UpdateRule::Full,
            loss,
            projector: None,
            std_weight: None,
        },
    )
}

/// Madry-style training on PGD samples generated against the current model.
pub fn train_pgd_at(data: &Dataset, spec: &TrainSpec, init: NetworkModel) -> Result<TrainReport> {
    run(
        data,
        spec,
        init,
        Plan {
            generator: Generator::Pgd,
            update: UpdateRule::Full,
            loss: spec.loss,
            projector: None,
            std_weight: None,
        },
    )
}

/// TRADES: KL-maximizing PGD samples and the `CE + β·KL` objective.
pub fn train_trades(data: &Dataset, spec: &TrainSpec, init: NetworkModel) -> Result<TrainReport> {
    run(
        data,
        spec,
        init,
        Plan {
            generator: Generator::Pgd,
            update: UpdateRule::Full,
            loss: LossKind::Trades,
            projector: None,
            std_weight: None,
        },
    )
}

/// NPDA training from `θ_std`: samples come from [`crate::attacks::npda_generate`] with a
/// projector built once from the standard model's last layer.
pub fn train_npda(data: &Dataset, spec: &TrainSpec, std_model: &NetworkModel) -> Result<TrainReport> {
    let projector = build_projector(std_model)?;
    run(
        data,
        spec,
        std_model.clone(),
        Plan {
            generator: Generator::Npda {
                projector: &projector,
                std_weight: std_model.last_weight(),
            },
            update: UpdateRule::Full,
            loss: spec.loss,
            projector: Some(projector.info()),
            std_weight: Some(std_model.last_weight()),
        },
    )
}

/// NPGD training from `θ_std`: PGD samples, last-layer weight steps projected
/// into the null space of the standard last layer, last-layer bias frozen.
pub fn train_npgd(data: &Dataset, spec: &TrainSpec, std_model: &NetworkModel) -> Result<TrainReport> {
    let projector = build_projector(std_model)?;
    run(
        data,
        spec,
        std_model.clone(),
        Plan {
            generator: Generator::Pgd,
            update: UpdateRule::NullProjected {
                projector: &projector,
                freeze_backbone: spec.freeze_backbone,
            },
            loss: spec.loss,
            projector: Some(projector.info()),
            std_weight: Some(std_model.last_weight()),
        },
    )
}

/// Dispatches on `spec.method`. For NPDA and NPGD `init` is the standard model.
pub fn train(data: &Dataset, spec: &TrainSpec, init: NetworkModel) -> Result<TrainReport> {
    match spec.method {
        Method::Standard => train_standard(data, spec, init),
        Method::PgdAt => train_pgd_at(data, spec, init),
        Method::Trades => train_trades(data, spec, init),
        Method::Npda => train_npda(data, spec, &init),
        Method::Npgd => train_npgd(data, spec, &init),
    }
}

/// Loads the standard model named by `spec.std_model_path`.
pub fn load_std_model(spec: &TrainSpec) -> Result<NetworkModel> {
    let path = spec
        .std_model_path
        .as_ref()
        .ok_or_else(|| Error::MissingStdModel(spec.method.name().into()))?;
    load_model(path)
}
