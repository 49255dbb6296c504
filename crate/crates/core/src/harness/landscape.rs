//! Loss surface around one sample along two ±1 input directions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::model::NetworkModel;
use crate::numerics::{derive_seed, rng_from_seed, Matrix};

pub const DEFAULT_RESOLUTION: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeMode {
    /// First axis is the sign of the input loss gradient.
    Adversarial,
    /// Both axes are random sign vectors.
    Random,
}

impl LandscapeMode {
    pub fn name(self) -> &'static str {
        match self {
            LandscapeMode::Adversarial => "adversarial",
            LandscapeMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub mode: LandscapeMode,
    pub direction_a: Vec<f64>,
    pub direction_b: Vec<f64>,
    pub extent: f64,
    pub resolution: usize,
    /// Step offsets along each axis, `-extent ..= extent`; the middle one is exactly 0.
    pub offsets: Vec<f64>,
    /// `values[i][j]` is the loss at `anchor + offsets[i]·a + offsets[j]·b`.
    pub values: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn origin_value(&self) -> f64 {
        let mid = self.resolution / 2;
        self.values[mid][mid]
    }
}

fn random_signs(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Cross-entropy surface on a `resolution × resolution` grid over `[−extent, extent]²`.
pub fn landscape(
    model: &NetworkModel,
    anchor: &[f64],
    label: usize,
    mode: LandscapeMode,
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeGrid> {
    if resolution < 3 || resolution % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "landscape resolution must be odd and at least 3, got {resolution}"
        )));
    }
    if !(extent >= 0.0) {
        return Err(Error::InvalidArgument(format!("extent must be nonnegative, got {extent}")));
    }
    let d = anchor.len();
    let x = Matrix::row_vector(anchor);
    let direction_a = match mode {
        LandscapeMode::Adversarial => {
            let trace = model.forward(&x)?;
            let ce = cross_entropy(&trace.logits, &[label])?;
            let g = model.input_grad(&trace, &ce.logit_grad)?;
            g.data()
                .iter()
                .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
                .collect()
        }
        LandscapeMode::Random => random_signs(d, derive_seed(seed, &[1])),
    };
    let direction_b = random_signs(d, derive_seed(seed, &[2]));

    let mid = resolution / 2;
    let offsets: Vec<f64> = (0..resolution)
        .map(|i| extent * (i as f64 - mid as f64) / mid as f64)
        .collect();

    let points = Matrix::from_fn(resolution * resolution, d, |r, c| {
        let (i, j) = (r / resolution, r % resolution);
        anchor[c] + offsets[i] * direction_a[c] + offsets[j] * direction_b[c]
    });
    let logits = model.predict(&points)?;
    let mut values = vec![vec![0.0; resolution]; resolution];
    for (r, row) in (0..logits.rows()).map(|r| (r, logits.row(r))) {
        let v = cross_entropy(&Matrix::row_vector(row), &[label])?.value;
        values[r / resolution][r % resolution] = v;
    }
    Ok(LandscapeGrid {
        mode,
        direction_a,
        direction_b,
        extent,
        resolution,
        offsets,
        values,
    })
}
