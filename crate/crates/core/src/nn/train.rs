use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::gcn::{gcn_backward, gcn_forward_propagated, GnnModel, PropagatedInput};
use super::loss::{bce_with_logits, cross_entropy_masked, inverse_frequency_weights};
use super::mlp::Mlp;
use super::optim::{Adam, OptimizerKind};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Full-batch training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Seeds parameter initialization.
    pub seed: u64,
    /// Weight classes inversely to their frequency in the training labels.
    pub class_weighting: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn shapes(params: &[&ndarray::Array2<f64>]) -> Vec<(usize, usize)> {
    params.iter().map(|p| p.dim()).collect()
}

fn check_loss(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            message: format!("loss is {loss}"),
        })
    }
}

/// Trains the GCN classifier on the masked nodes. Returns the per-epoch loss
/// recorded before each update.
pub fn train_gnn(
    model: &mut GnnModel,
    adj: &NormalizedAdjacency,
    h0: ArrayView2<f64>,
    labels: &[usize],
    mask: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let classes = model.fc_weight.ncols();
    let weights = if config.class_weighting {
        inverse_frequency_weights(labels, classes)
    } else {
        vec![1.0; classes]
    };
    let input = PropagatedInput::new(adj, h0)?;
    let mut optimizer = Adam::new(config.optimizer, config.learning_rate, &shapes(&model.params()));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let forward = gcn_forward_propagated(adj, &input, model)?;
        let (loss, dlogits) = cross_entropy_masked(forward.logits.view(), labels, mask, &weights)?;
        check_loss(epoch, loss)?;
        history.push(loss);
        let grads = gcn_backward(adj, model, &forward, &dlogits)?.into_vec();
        optimizer.step(model.params_mut(), &grads)?;
    }
    Ok(history)
}

/// Trains a single-output MLP with binary cross-entropy against 0/1 targets.
pub fn train_mlp_binary(
    model: &mut Mlp,
    x: ArrayView2<f64>,
    targets: &[f64],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if model.output_dim() != 1 {
        return Err(Error::Dimension("binary MLP must have one output".into()));
    }
    let weights = if config.class_weighting {
        let labels: Vec<usize> = targets.iter().map(|&t| usize::from(t > 0.5)).collect();
        let w = inverse_frequency_weights(&labels, 2);
        (w[0], w[1])
    } else {
        (1.0, 1.0)
    };
    let mut optimizer = Adam::new(config.optimizer, config.learning_rate, &shapes(&model.params()));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let forward = model.forward(x)?;
        let (loss, grad) = bce_with_logits(forward.output.view(), targets, weights)?;
        check_loss(epoch, loss)?;
        history.push(loss);
        let grads = model.backward(&forward, &grad)?;
        optimizer.step(model.params_mut(), &grads)?;
    }
    Ok(history)
}

/// Trains a multi-class MLP with softmax cross-entropy on every row.
pub fn train_mlp_classifier(
    model: &mut Mlp,
    x: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let classes = model.output_dim();
    let weights = if config.class_weighting {
        inverse_frequency_weights(labels, classes)
    } else {
        vec![1.0; classes]
    };
    let mask: Vec<usize> = (0..labels.len()).collect();
    let mut optimizer = Adam::new(config.optimizer, config.learning_rate, &shapes(&model.params()));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let forward = model.forward(x)?;
        let (loss, grad) = cross_entropy_masked(forward.output.view(), labels, &mask, &weights)?;
        check_loss(epoch, loss)?;
        history.push(loss);
        let grads = model.backward(&forward, &grad)?;
        optimizer.step(model.params_mut(), &grads)?;
    }
    Ok(history)
}

/// Writes a loss history as `epoch,loss` CSV text.
pub fn render_loss_history(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    out
}
