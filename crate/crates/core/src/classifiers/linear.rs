//! Logistic regression on aggregated count vectors, fitted by full-batch
//! gradient descent. Deterministic: no randomness is involved at all.

use serde::{Deserialize, Serialize};

use super::{AggregatedDataset, PredictionError, TrainingError};
use crate::encoding::AggregatedVector;

/// Hyperparameters for [`LogisticRegression`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the weights (the intercept is not penalized).
    pub l2: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { learning_rate: 0.1, epochs: 500, l2: 1e-4 }
    }
}

/// A fitted logistic-regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub fn predict_proba(&self, x: &AggregatedVector) -> Result<f64, PredictionError> {
        if x.counts.len() != self.weights.len() {
            return Err(PredictionError::FeatureDimension {
                got: x.counts.len(),
                expected: self.weights.len(),
            });
        }
        let logit = self.bias
            + self
                .weights
                .iter()
                .zip(x.counts.iter())
                .map(|(&w, &c)| w * c as f64)
                .sum::<f64>();
        Ok(sigmoid(logit))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn train(
    data: &AggregatedDataset,
    params: &LinearParams,
) -> Result<LogisticRegression, TrainingError> {
    if params.learning_rate <= 0.0 || params.epochs == 0 {
        return Err(TrainingError::InvalidHyperparams {
            reason: "learning_rate must be positive and epochs nonzero".into(),
        });
    }
    let n = data.features.len();
    let dim = data.features[0].counts.len();
    if data.features.iter().any(|f| f.counts.len() != dim) {
        return Err(TrainingError::InvalidHyperparams {
            reason: "feature vectors have inconsistent dimensions".into(),
        });
    }
    let mut weights = vec![0.0f64; dim];
    let mut bias = 0.0f64;
    let mut grad_w = vec![0.0f64; dim];
    for epoch in 0..params.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0f64;
        for (features, &label) in data.features.iter().zip(data.labels.iter()) {
            let logit = bias
                + weights
                    .iter()
                    .zip(features.counts.iter())
                    .map(|(&w, &c)| w * c as f64)
                    .sum::<f64>();
            let error = sigmoid(logit) - label.index() as f64;
            for (g, &c) in grad_w.iter_mut().zip(features.counts.iter()) {
                *g += error * c as f64;
            }
            grad_b += error;
        }
        let scale = 1.0 / n as f64;
        for (w, g) in weights.iter_mut().zip(grad_w.iter()) {
            *w -= params.learning_rate * (g * scale + params.l2 * *w);
            if !w.is_finite() {
                return Err(TrainingError::Diverged { epoch });
            }
        }
        bias -= params.learning_rate * grad_b * scale;
    }
    Ok(LogisticRegression { weights, bias })
}
