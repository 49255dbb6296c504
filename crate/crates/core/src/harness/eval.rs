use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack, AttackSpec};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::NetworkModel;

use super::data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassErrors {
    pub class: usize,
    pub count: usize,
    pub clean_error: f64,
    pub pgd_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_error: f64,
    pub pgd_error: f64,
    pub attack: AttackSpec,
    pub per_class: Vec<ClassErrors>,
    pub samples: usize,
    pub seed: u64,
}

fn fraction(wrong: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}

/// Clean error from argmax logits and robust error under a CE PGD attack.
pub fn evaluate(model: &NetworkModel, data: &Dataset, attack: &AttackSpec, seed: u64) -> Result<EvalReport> {
    if data.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            data.dim(),
            model.input_dim()
        )));
    }
    let clean_pred = model.predict(&data.inputs)?.argmax_rows();
    let adv = pgd_attack(model, &data.inputs, &data.labels, attack, LossKind::Ce, seed)?;
    let adv_pred = model.predict(&adv)?.argmax_rows();

    let classes = data.classes.max(model.class_count());
    let mut count = vec![0usize; classes];
    let mut clean_wrong = vec![0usize; classes];
    let mut adv_wrong = vec![0usize; classes];
    for ((&y, &c), &a) in data.labels.iter().zip(&clean_pred).zip(&adv_pred) {
        count[y] += 1;
        clean_wrong[y] += usize::from(c != y);
        adv_wrong[y] += usize::from(a != y);
    }
    let per_class = (0..classes)
        .map(|k| ClassErrors {
            class: k,
            count: count[k],
            clean_error: fraction(clean_wrong[k], count[k]),
            pgd_error: fraction(adv_wrong[k], count[k]),
        })
        .collect();
    Ok(EvalReport {
        clean_error: fraction(clean_wrong.iter().sum(), data.len()),
        pgd_error: fraction(adv_wrong.iter().sum(), data.len()),
        attack: *attack,
        per_class,
        samples: data.len(),
        seed,
    })
}

/// Fraction of argmax mismatches on clean inputs.
pub fn clean_error(model: &NetworkModel, data: &Dataset) -> Result<f64> {
    let pred = model.predict(&data.inputs)?.argmax_rows();
    let wrong = pred.iter().zip(&data.labels).filter(|(p, y)| p != y).count();
    Ok(fraction(wrong, data.len()))
}
