use serde::{Deserialize, Serialize};

use super::mlp::{design_matrix, loss_and_gradient, require_two_classes, MlpParams};
use super::{LabeledCase, N_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 2000,
            learning_rate: 0.5,
        }
    }
}

/// Multinomial softmax regression by full-batch gradient descent on
/// `CE + l2/2 |W|^2`, starting from zero weights. Returns the model (a
/// network without hidden layers) and the per-epoch objective.
pub fn logistic_train(train: &[LabeledCase], cfg: &LogisticConfig) -> Result<(MlpParams, Vec<f64>)> {
    if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0 && cfg.epochs > 0) {
        return Err(Error::invalid(
            "logistic regression needs lr > 0, l2 >= 0 and epochs > 0",
        ));
    }
    let (x, y) = design_matrix(train)?;
    require_two_classes(&y)?;
    let mut params = MlpParams::zeros(&[x.ncols(), N_CLASSES])?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, mut grads, _) = loss_and_gradient(&params, x.view(), &y, None)?;
        let objective = loss + 0.5 * cfg.l2 * params.weights[0].iter().map(|v| v * v).sum::<f64>();
        let diverging = history.last().is_some_and(|&prev: &f64| objective > 2.0 * prev + 1.0);
        if !objective.is_finite() || diverging {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(objective);
        grads.weights[0].zip_mut_with(&params.weights[0], |g, &w| *g += cfg.l2 * w);
        let lr = cfg.learning_rate;
        params.apply_gradients(&grads, |p, g| *p -= lr * g);
    }
    Ok((params, history))
}
