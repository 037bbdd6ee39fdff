use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{column_sums, glorot, Activation};
use crate::error::{Error, Result};

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    /// `1 x out`
    pub bias: Array2<f64>,
}

/// Multilayer perceptron; the activation is applied after every layer except
/// the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct MlpForward {
    /// Input to each layer (post-activation, post-dropout for hidden layers).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout scale masks applied to hidden activations, if any.
    pub dropout_masks: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

impl MlpForward {
    /// Post-activation values of hidden layer `l` (before dropout).
    pub fn hidden_activation(&self, l: usize, activation: Activation) -> Array2<f64> {
        activation.apply(&self.pre_activations[l])
    }
}

impl Mlp {
    /// Glorot-initialized network with widths `input -> hidden... -> output`.
    pub fn new(input: usize, hidden: &[usize], output: usize, seed: u64) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("MLP layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &width in hidden.iter().chain(std::iter::once(&output)) {
            layers.push(Dense {
                weight: glorot(prev, width, &mut rng),
                bias: Array2::zeros((1, width)),
            });
            prev = width;
        }
        Ok(Mlp {
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpForward> {
        self.forward_impl(x, None::<(&mut ChaCha8Rng, f64)>)
    }

    /// Forward pass with inverted dropout on every hidden activation.
    pub fn forward_dropout(&self, x: ArrayView2<f64>, rate: f64, rng: &mut impl Rng) -> Result<MlpForward> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.forward_impl(x, Some((rng, rate)))
    }

    fn forward_impl<R: Rng>(&self, x: ArrayView2<f64>, mut dropout: Option<(&mut R, f64)>) -> Result<MlpForward> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre_activations = Vec::with_capacity(depth);
        let mut dropout_masks = Vec::with_capacity(depth);
        let mut current = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weight) + &layer.bias;
            inputs.push(current);
            if l + 1 == depth {
                current = z.clone();
                pre_activations.push(z);
                break;
            }
            let mut h = self.activation.apply(&z);
            let mask = match dropout.as_mut() {
                Some((rng, rate)) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let mask =
                        Array2::from_shape_fn(h.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    h *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            dropout_masks.push(mask);
            pre_activations.push(z);
            current = h;
        }
        dropout_masks.push(None);
        Ok(MlpForward {
            inputs,
            pre_activations,
            dropout_masks,
            output: current,
        })
    }

    /// Gradients ordered `[W_0, b_0, W_1, b_1, ...]`, matching [`Mlp::params`].
    pub fn backward(&self, forward: &MlpForward, doutput: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        if doutput.dim() != forward.output.dim() {
            return Err(Error::Dimension("output gradient shape differs from output".into()));
        }
        let depth = self.layers.len();
        let mut grads = vec![Array2::zeros((0, 0)); 2 * depth];
        let mut dz = doutput.clone();
        for l in (0..depth).rev() {
            grads[2 * l] = forward.inputs[l].t().dot(&dz);
            grads[2 * l + 1] = column_sums(&dz);
            if l > 0 {
                let mut dh = dz.dot(&self.layers[l].weight.t());
                if let Some(mask) = &forward.dropout_masks[l - 1] {
                    dh *= mask;
                }
                dz = self.activation.backprop(&forward.pre_activations[l - 1], &dh);
            }
        }
        Ok(grads)
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|d| [&d.weight, &d.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("{prefix}.layer{l}.weight"), format!("{prefix}.layer{l}.bias")])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn shapes_and_determinism() {
        let mlp = Mlp::new(5, &[32], 1, 3).unwrap();
        let x = Array2::from_shape_fn((7, 5), |(i, j)| (i as f64 - j as f64) * 0.1);
        let a = mlp.forward(x.view()).unwrap();
        let b = mlp.forward(x.view()).unwrap();
        assert_eq!(a.output.dim(), (7, 1));
        assert_eq!(a.output, b.output);
        assert!(mlp.forward(Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn zero_dropout_matches_deterministic_pass() {
        let mlp = Mlp::new(2, &[8], 3, 1).unwrap();
        let x = arr2(&[[0.5, -1.0], [2.0, 0.1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let det = mlp.forward(x.view()).unwrap();
        let drop = mlp.forward_dropout(x.view(), 0.0, &mut rng).unwrap();
        assert_eq!(det.output, drop.output);
        assert!(mlp.forward_dropout(x.view(), 1.0, &mut rng).is_err());
    }
}
