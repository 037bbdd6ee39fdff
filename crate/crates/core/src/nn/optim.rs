use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    kind: OptimizerKind,
    learning_rate: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(kind: OptimizerKind, learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            kind,
            learning_rate,
            step: 0,
            first: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = arr2(&[[1.0, -2.0]]);
        let mut opt = Adam::new(OptimizerKind::default(), 0.1, &[(1, 2)]);
        opt.step(vec![&mut p], &[arr2(&[[3.0, -0.5]])]).unwrap();
        assert!((p[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = arr2(&[[5.0]]);
        let mut opt = Adam::new(OptimizerKind::default(), 0.1, &[(1, 1)]);
        for _ in 0..500 {
            let g = p.mapv(|v| 2.0 * v);
            opt.step(vec![&mut p], &[g]).unwrap();
        }
        assert!(p[[0, 0]].abs() < 1e-2);
    }
}
