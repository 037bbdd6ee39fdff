use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{column_sums, glorot, Activation};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Graph convolution stack `H^{l+1} = act(A H^l W_l)` followed by a dense
/// classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub layers: Vec<Array2<f64>>,
    pub fc_weight: Array2<f64>,
    /// `1 x classes`
    pub fc_bias: Array2<f64>,
    pub activation: Activation,
}

impl GnnModel {
    /// Glorot-initialized model with layer widths `input_dim -> hidden[0] -> ... -> classes`.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("GNN needs at least one layer".into()));
        }
        if input_dim == 0 || classes == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("GNN layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &width in hidden {
            layers.push(glorot(prev, width, &mut rng));
            prev = width;
        }
        let fc_weight = glorot(prev, classes, &mut rng);
        Ok(GnnModel {
            layers,
            fc_weight,
            fc_bias: Array2::zeros((1, classes)),
            activation: Activation::Relu,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc_weight.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("GNN has no layers".into()));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} columns but layer {} expects {}",
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows()
                )));
            }
        }
        let last = self.layers.last().expect("nonempty").ncols();
        if self.fc_weight.nrows() != last || self.fc_bias.dim() != (1, self.fc_weight.ncols()) {
            return Err(Error::Dimension("GNN head does not match last layer".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut out: Vec<&Array2<f64>> = self.layers.iter().collect();
        out.push(&self.fc_weight);
        out.push(&self.fc_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = self.layers.iter_mut().collect();
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.layers.len()).map(|l| format!("gcn.layer{l}")).collect();
        out.push("gcn.fc_weight".into());
        out.push("gcn.fc_bias".into());
        out
    }
}

/// `A H^0`, which is constant across training epochs.
#[derive(Debug, Clone)]
pub struct PropagatedInput(pub Array2<f64>);

impl PropagatedInput {
    pub fn new(adj: &NormalizedAdjacency, h0: ArrayView2<f64>) -> Result<Self> {
        Ok(PropagatedInput(adj.matmul(h0)?))
    }
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct GcnForward {
    /// `A H^l` for each layer input.
    pub propagated: Vec<Array2<f64>>,
    /// Pre-activation `A H^l W_l`.
    pub pre_activations: Vec<Array2<f64>>,
    /// `H^1 .. H^M`.
    pub hidden: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl GcnForward {
    /// Final hidden representation `H^M`.
    pub fn representation(&self) -> &Array2<f64> {
        self.hidden.last().expect("at least one layer")
    }
}

pub fn gcn_forward(adj: &NormalizedAdjacency, h0: ArrayView2<f64>, model: &GnnModel) -> Result<GcnForward> {
    let input = PropagatedInput::new(adj, h0)?;
    gcn_forward_propagated(adj, &input, model)
}

/// Forward pass starting from a cached `A H^0`.
pub fn gcn_forward_propagated(
    adj: &NormalizedAdjacency,
    input: &PropagatedInput,
    model: &GnnModel,
) -> Result<GcnForward> {
    model.validate()?;
    if input.0.ncols() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "node features have {} columns, model expects {}",
            input.0.ncols(),
            model.input_dim()
        )));
    }
    let m = model.layers.len();
    let mut propagated = Vec::with_capacity(m);
    let mut pre_activations = Vec::with_capacity(m);
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(m);
    for (l, weight) in model.layers.iter().enumerate() {
        let s = if l == 0 {
            input.0.clone()
        } else {
            adj.matmul(hidden[l - 1].view())?
        };
        let z = s.dot(weight);
        hidden.push(model.activation.apply(&z));
        propagated.push(s);
        pre_activations.push(z);
    }
    let logits = hidden[m - 1].dot(&model.fc_weight) + &model.fc_bias;
    Ok(GcnForward {
        propagated,
        pre_activations,
        hidden,
        logits,
    })
}

/// Gradients in the same order as [`GnnModel::params`].
#[derive(Debug, Clone)]
pub struct GnnGrads {
    pub layers: Vec<Array2<f64>>,
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array2<f64>,
}

impl GnnGrads {
    pub fn into_vec(self) -> Vec<Array2<f64>> {
        let mut out = self.layers;
        out.push(self.fc_weight);
        out.push(self.fc_bias);
        out
    }
}

/// Reverse-mode pass given `dLoss/dlogits`. The adjacency is symmetric, so
/// `A^T = A`.
pub fn gcn_backward(
    adj: &NormalizedAdjacency,
    model: &GnnModel,
    forward: &GcnForward,
    dlogits: &Array2<f64>,
) -> Result<GnnGrads> {
    if dlogits.dim() != forward.logits.dim() {
        return Err(Error::Dimension("logit gradient shape differs from logits".into()));
    }
    let m = model.layers.len();
    let last = &forward.hidden[m - 1];
    let fc_weight = last.t().dot(dlogits);
    let fc_bias = column_sums(dlogits);
    let mut upstream = dlogits.dot(&model.fc_weight.t());
    let mut layers = vec![Array2::zeros((0, 0)); m];
    for l in (0..m).rev() {
        let dz = model.activation.backprop(&forward.pre_activations[l], &upstream);
        layers[l] = forward.propagated[l].t().dot(&dz);
        if l > 0 {
            let ds = dz.dot(&model.layers[l].t());
            upstream = adj.matmul(ds.view())?;
        }
    }
    Ok(GnnGrads {
        layers,
        fc_weight,
        fc_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalize_edges;
    use ndarray::arr2;

    #[test]
    fn zero_weights_give_bias_logits() {
        let adj = normalize_edges(3, &[(0, 1, 2.0), (1, 0, 2.0)]);
        let mut model = GnnModel::new(2, &[4, 4], 2, 1).unwrap();
        for w in &mut model.layers {
            w.fill(0.0);
        }
        model.fc_bias = arr2(&[[0.3, -0.2]]);
        let h0 = arr2(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]);
        let fwd = gcn_forward(&adj, h0.view(), &model).unwrap();
        assert!(fwd.hidden.iter().all(|h| h.iter().all(|&v| v == 0.0)));
        for row in fwd.logits.rows() {
            assert_eq!(row.to_vec(), vec![0.3, -0.2]);
        }
    }

    #[test]
    fn single_node_identity_graph_is_relu() {
        let adj = NormalizedAdjacency::identity(1);
        let mut model = GnnModel::new(1, &[1], 2, 0).unwrap();
        model.layers[0] = arr2(&[[1.0]]);
        for x in [-2.0, 0.0, 1.5] {
            let fwd = gcn_forward(&adj, arr2(&[[x]]).view(), &model).unwrap();
            assert_eq!(fwd.hidden[0][[0, 0]], f64::max(x, 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let adj = NormalizedAdjacency::identity(2);
        let model = GnnModel::new(3, &[4], 2, 0).unwrap();
        let h0 = Array2::zeros((2, 2));
        assert!(gcn_forward(&adj, h0.view(), &model).is_err());
        assert!(GnnModel::new(3, &[], 2, 0).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = GnnModel::new(3, &[32, 32], 2, 9).unwrap();
        let b = GnnModel::new(3, &[32, 32], 2, 9).unwrap();
        let c = GnnModel::new(3, &[32, 32], 2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
