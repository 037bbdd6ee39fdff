//! Central finite-difference verification of the hand-written gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gcn::{gcn_backward, gcn_forward, GnnModel};
use super::loss::{bce_with_logits, cross_entropy_masked};
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::graph::{build_knn_exact, normalize, NormalizedAdjacency};

pub const FD_STEP: f64 = 1e-4;

/// Denominator floor for the relative error of near-zero gradients.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradCheckKind {
    /// Two-layer GCN with a classification head on a random kNN graph.
    Gcn,
    /// One-hidden-layer MLP with a sigmoid/BCE output.
    Mlp,
    /// The sigmoid + binary cross-entropy head on its own.
    SigmoidBce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Loss value plus the sign pattern of every ReLU input, used to detect
/// perturbations that cross a non-differentiable point.
type Evaluation = (f64, Vec<bool>);

fn compare(
    params: &[Array2<f64>],
    analytic: &[Array2<f64>],
    mut evaluate: impl FnMut(&[Array2<f64>]) -> Result<Evaluation>,
) -> Result<GradCheckReport> {
    let (_, base_pattern) = evaluate(params)?;
    let params: Vec<Array2<f64>> = params.iter().map(|p| p.as_standard_layout().into_owned()).collect();
    let analytic: Vec<Array2<f64>> = analytic.iter().map(|a| a.as_standard_layout().into_owned()).collect();
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for t in 0..params.len() {
        for idx in 0..params[t].len() {
            let original = params[t].as_slice().expect("contiguous")[idx];
            work[t].as_slice_mut().expect("contiguous")[idx] = original + FD_STEP;
            let (plus, plus_pattern) = evaluate(&work)?;
            work[t].as_slice_mut().expect("contiguous")[idx] = original - FD_STEP;
            let (minus, minus_pattern) = evaluate(&work)?;
            work[t].as_slice_mut().expect("contiguous")[idx] = original;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[t].as_slice().expect("contiguous")[idx];
            report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}

fn relu_pattern<'a>(pre: impl Iterator<Item = &'a Array2<f64>>) -> Vec<bool> {
    pre.flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect()
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// A random GCN problem: graph, node features, labels and mask.
pub struct GcnProblem {
    pub adj: NormalizedAdjacency,
    pub h0: Array2<f64>,
    pub model: GnnModel,
    pub labels: Vec<usize>,
    pub mask: Vec<usize>,
    pub class_weights: Vec<f64>,
}

impl GcnProblem {
    pub fn random(nodes: usize, seed: u64) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidArgument("GCN check needs at least 2 nodes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = normal_matrix(nodes, 3, &mut rng);
        let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let graph = build_knn_exact(&refs, 0, 2.min(nodes - 1))?;
        let adj = normalize(&graph);
        let h0 = normal_matrix(nodes, 3, &mut rng);
        let mut model = GnnModel::new(3, &[5, 4], 2, rng.random())?;
        model.fc_bias = normal_matrix(1, 2, &mut rng);
        let mut mask: Vec<usize> = (0..nodes).filter(|_| rng.random_bool(0.7)).collect();
        if mask.is_empty() {
            mask.push(0);
        }
        let labels = mask.iter().map(|_| rng.random_range(0..2)).collect();
        Ok(GcnProblem {
            adj,
            h0,
            model,
            labels,
            mask,
            class_weights: vec![1.0, 1.7],
        })
    }

    fn with_params(&self, params: &[Array2<f64>]) -> GnnModel {
        let mut model = self.model.clone();
        for (dst, src) in model.params_mut().into_iter().zip(params) {
            dst.assign(src);
        }
        model
    }

    pub fn loss(&self, model: &GnnModel) -> Result<Evaluation> {
        let fwd = gcn_forward(&self.adj, self.h0.view(), model)?;
        let (loss, _) = cross_entropy_masked(fwd.logits.view(), &self.labels, &self.mask, &self.class_weights)?;
        Ok((loss, relu_pattern(fwd.pre_activations.iter())))
    }

    pub fn analytic(&self, model: &GnnModel) -> Result<Vec<Array2<f64>>> {
        let fwd = gcn_forward(&self.adj, self.h0.view(), model)?;
        let (_, dlogits) = cross_entropy_masked(fwd.logits.view(), &self.labels, &self.mask, &self.class_weights)?;
        Ok(gcn_backward(&self.adj, model, &fwd, &dlogits)?.into_vec())
    }

    pub fn check(&self) -> Result<GradCheckReport> {
        let params: Vec<Array2<f64>> = self.model.params().into_iter().cloned().collect();
        let analytic = self.analytic(&self.model)?;
        compare(&params, &analytic, |p| self.loss(&self.with_params(p)))
    }
}

/// A random binary MLP problem.
pub struct MlpProblem {
    pub model: Mlp,
    pub x: Array2<f64>,
    pub targets: Vec<f64>,
    pub weights: (f64, f64),
}

impl MlpProblem {
    pub fn random(inputs: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Mlp::new(inputs, &[6], 1, rng.random())?;
        for layer in &mut model.layers {
            layer.bias = normal_matrix(1, layer.bias.ncols(), &mut rng) * 0.5;
        }
        let x = normal_matrix(7, inputs, &mut rng);
        let targets = (0..7).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        Ok(MlpProblem {
            model,
            x,
            targets,
            weights: (1.0, 1.3),
        })
    }

    fn with_params(&self, params: &[Array2<f64>]) -> Mlp {
        let mut model = self.model.clone();
        for (dst, src) in model.params_mut().into_iter().zip(params) {
            dst.assign(src);
        }
        model
    }

    fn loss(&self, model: &Mlp) -> Result<Evaluation> {
        let fwd = model.forward(self.x.view())?;
        let (loss, _) = bce_with_logits(fwd.output.view(), &self.targets, self.weights)?;
        let hidden = fwd.pre_activations.len() - 1;
        Ok((loss, relu_pattern(fwd.pre_activations[..hidden].iter())))
    }

    pub fn check(&self) -> Result<GradCheckReport> {
        let fwd = self.model.forward(self.x.view())?;
        let (_, grad) = bce_with_logits(fwd.output.view(), &self.targets, self.weights)?;
        let analytic = self.model.backward(&fwd, &grad)?;
        let params: Vec<Array2<f64>> = self.model.params().into_iter().cloned().collect();
        compare(&params, &analytic, |p| self.loss(&self.with_params(p)))
    }
}

fn check_sigmoid_bce(size: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = normal_matrix(size, 1, &mut rng) * 2.0;
    let targets: Vec<f64> = (0..size).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    let weights = (0.8, 1.9);
    let (_, analytic) = bce_with_logits(scores.view(), &targets, weights)?;
    compare(&[scores], &[analytic], |p| {
        Ok((bce_with_logits(p[0].view(), &targets, weights)?.0, Vec::new()))
    })
}

/// Runs a finite-difference check on a random instance. `size` is the node
/// count for [`GradCheckKind::Gcn`], the input width for
/// [`GradCheckKind::Mlp`] and the batch size for [`GradCheckKind::SigmoidBce`].
pub fn fd_check(kind: GradCheckKind, size: usize, seed: u64) -> Result<GradCheckReport> {
    if size == 0 {
        return Err(Error::InvalidArgument("instance size must be positive".into()));
    }
    match kind {
        GradCheckKind::Gcn => GcnProblem::random(size, seed)?.check(),
        GradCheckKind::Mlp => MlpProblem::random(size, seed)?.check(),
        GradCheckKind::SigmoidBce => check_sigmoid_bce(size, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn gcn_eight_nodes() {
        let report = fd_check(GradCheckKind::Gcn, 8, 1).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        // 3x5 + 5x4 + 4x2 + 2 parameters
        assert_eq!(report.checked + report.skipped, 45);
    }

    #[test]
    fn mlp_five_inputs() {
        let report = fd_check(GradCheckKind::Mlp, 5, 2).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn sigmoid_bce_head() {
        let report = fd_check(GradCheckKind::SigmoidBce, 6, 3).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let mut problem = GcnProblem::random(6, 5).unwrap();
        // push the head far into the correct class for every masked node
        for w in &mut problem.model.layers {
            w.fill(0.0);
        }
        problem.labels = vec![1; problem.mask.len()];
        problem.model.fc_bias = ndarray::arr2(&[[-20.0, 20.0]]);
        let grads = problem.analytic(&problem.model).unwrap();
        assert!(grads.iter().flat_map(|g| g.iter()).all(|g| g.abs() <= 1e-8));
    }

    #[test]
    fn linear_gcn_matches_closed_form() {
        // With identity activation and one layer:
        //   logits = (A H0) W0 Wfc + b, dW0 = (A H0)^T G Wfc^T, dWfc = (A H0 W0)^T G
        let mut problem = GcnProblem::random(7, 8).unwrap();
        problem.model = GnnModel::new(3, &[4], 2, 21).unwrap();
        problem.model.activation = Activation::Identity;
        let model = &problem.model;
        let dense = problem.adj.to_dense();
        let s = dense.dot(&problem.h0);
        let logits = s.dot(&model.layers[0]).dot(&model.fc_weight) + &model.fc_bias;
        let (_, g) =
            cross_entropy_masked(logits.view(), &problem.labels, &problem.mask, &problem.class_weights).unwrap();
        let d_w0 = s.t().dot(&g.dot(&model.fc_weight.t()));
        let d_fc = s.dot(&model.layers[0]).t().dot(&g);
        let grads = problem.analytic(model).unwrap();
        for (got, want) in [(&grads[0], &d_w0), (&grads[1], &d_fc)] {
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
