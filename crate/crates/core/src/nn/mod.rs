//! Small dense neural-network engine for the fixed GCN and MLP computation
//! graphs: forward passes, hand-written reverse-mode gradients, Adam, and a
//! finite-difference checker.

pub mod checkpoint;
pub mod gcn;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gcn::{gcn_backward, gcn_forward, GcnForward, GnnGrads, GnnModel, PropagatedInput};
pub use loss::{bce_with_logits, cross_entropy_masked, inverse_frequency_weights, sigmoid};
pub use mlp::{Dense, Mlp, MlpForward};
pub use optim::{Adam, OptimizerKind};
pub use train::{train_gnn, train_mlp_binary, train_mlp_classifier, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Linear pass-through, used to check gradients against closed forms.
    Identity,
}

impl Activation {
    pub fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiplies `upstream` by the activation derivative at `z`.
    pub fn backprop(self, z: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => {
                let mut out = upstream.clone();
                Zip::from(&mut out).and(z).for_each(|g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                });
                out
            }
            Activation::Identity => upstream.clone(),
        }
    }
}

/// Glorot-uniform initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Column sums as a `1 x cols` matrix.
pub(crate) fn column_sums(m: &Array2<f64>) -> Array2<f64> {
    let sums = m.sum_axis(ndarray::Axis(0));
    sums.insert_axis(ndarray::Axis(0))
}
