use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{Sample, SyntheticData, SyntheticSpec};
use crate::data::{argmax, Instance, LabeledPool, PoolDims, UnlabeledPool};
use crate::error::{Error, Result};
use crate::nn::{train_mlp_classifier, Mlp, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// Dropout-enabled forward passes recorded per instance.
    pub stochastic_passes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            hidden_dim: 8,
            epochs: 500,
            learning_rate: 0.02,
            dropout_rate: 0.5,
            stochastic_passes: 100,
            seed: 0,
        }
    }
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("target hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One-hidden-layer classifier over raw 2-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTargetModel {
    pub mlp: Mlp,
    pub dropout_rate: f64,
}

fn points(samples: &[Sample]) -> Array2<f64> {
    Array2::from_shape_fn((samples.len(), 2), |(i, c)| samples[i].point[c])
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl ToyTargetModel {
    /// Deterministic (eval-mode) logits and hidden-layer traces.
    pub fn infer(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let fwd = self.mlp.forward(x)?;
        let trace = fwd.hidden_activation(0, self.mlp.activation);
        Ok((fwd.output, trace))
    }

    /// `passes` dropout-enabled logit samples per row, reproducible per seed.
    pub fn stochastic_logits(&self, x: ArrayView2<f64>, passes: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![Vec::with_capacity(passes); x.nrows()];
        for _ in 0..passes {
            let fwd = self.mlp.forward_dropout(x, self.dropout_rate, &mut rng)?;
            for (dst, row) in out.iter_mut().zip(fwd.output.rows()) {
                dst.push(row.to_vec());
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let (logits, _) = self.infer(x)?;
        Ok(logits.rows().into_iter().map(|r| argmax(&r.to_vec())).collect())
    }

    /// Fraction of samples whose class is predicted correctly.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("accuracy of an empty set".into()));
        }
        let pred = self.predict(points(samples).view())?;
        let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.class).count();
        Ok(hits as f64 / samples.len() as f64)
    }
}

/// Trains the toy classifier on the training split.
pub fn fit_target(train: &[Sample], classes: usize, config: &TargetConfig) -> Result<ToyTargetModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("target training set is empty".into()));
    }
    let x = points(train);
    let labels: Vec<usize> = train.iter().map(|s| s.class).collect();
    let mut mlp = Mlp::new(2, &[config.hidden_dim], classes, config.seed)?;
    let train_config = TrainConfig {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        optimizer: OptimizerKind::default(),
        seed: config.seed,
        class_weighting: false,
    };
    train_mlp_classifier(&mut mlp, x.view(), &labels, &train_config)?;
    Ok(ToyTargetModel {
        mlp,
        dropout_rate: config.dropout_rate,
    })
}

/// Pools handed to the prioritizers, plus the sets kept away from them.
#[derive(Debug, Clone)]
pub struct HarnessPools {
    /// The target model's training set.
    pub train: LabeledPool,
    /// Training set followed by the labeled part of the debugging pool.
    pub labeled: LabeledPool,
    /// Carries withheld ground truth for evaluation.
    pub unlabeled: UnlabeledPool,
    pub holdout: LabeledPool,
}

fn annotate(
    samples: &[Sample],
    spec: &SyntheticSpec,
    model: &ToyTargetModel,
    config: &TargetConfig,
    seed: u64,
) -> Result<Vec<Instance>> {
    let x = points(samples);
    let (logits, trace) = model.infer(x.view())?;
    let stochastic = if config.stochastic_passes > 0 {
        Some(model.stochastic_logits(x.view(), config.stochastic_passes, seed)?)
    } else {
        None
    };
    let (logits, trace) = (rows(&logits), rows(&trace));
    Ok(samples
        .iter()
        .enumerate()
        .map(|(i, s)| Instance {
            id: s.id,
            feature: spec.feature(s),
            logits: logits[i].clone(),
            trace: Some(trace[i].clone()),
            stochastic_logits: stochastic.as_ref().map(|st| st[i].clone()),
        })
        .collect())
}

/// Runs the trained target over every split and assembles the pools.
pub fn build_pools(
    data: &SyntheticData,
    spec: &SyntheticSpec,
    model: &ToyTargetModel,
    config: &TargetConfig,
) -> Result<HarnessPools> {
    let dims = PoolDims {
        classes: spec.n_classes,
        feature_dim: spec.feature_dim(),
    };
    let classes = |s: &[Sample]| s.iter().map(|s| s.class).collect::<Vec<_>>();
    // distinct dropout streams per split
    let train = annotate(&data.train, spec, model, config, config.seed ^ 0x7472)?;
    let debug_labeled = annotate(&data.labeled, spec, model, config, config.seed ^ 0x6c62)?;
    let unlabeled = annotate(&data.unlabeled, spec, model, config, config.seed ^ 0x756e)?;
    let holdout = annotate(&data.holdout, spec, model, config, config.seed ^ 0x686f)?;

    let train_pool = LabeledPool::new(dims, train, classes(&data.train))?;
    let labeled_part = LabeledPool::new(dims, debug_labeled, classes(&data.labeled))?;
    Ok(HarnessPools {
        labeled: train_pool.clone().concat(labeled_part)?,
        train: train_pool,
        unlabeled: UnlabeledPool::new(dims, unlabeled)?.with_hidden_ground_truth(classes(&data.unlabeled))?,
        holdout: LabeledPool::new(dims, holdout, classes(&data.holdout))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate, ClusterRole, ClusterSpec};

    fn two_blobs(remote: Option<usize>) -> SyntheticSpec {
        let mut clusters = vec![
            ClusterSpec {
                center: [-2.0, 0.0],
                stdev: 0.5,
                class: 0,
                count: 300,
                role: ClusterRole::Normal,
            },
            ClusterSpec {
                center: [2.0, 0.0],
                stdev: 0.5,
                class: 1,
                count: 300,
                role: ClusterRole::Normal,
            },
        ];
        if let Some(count) = remote {
            clusters.push(ClusterSpec {
                center: [6.0, 0.0],
                stdev: 0.5,
                class: 0,
                count,
                role: ClusterRole::RemoteBugSource,
            });
        }
        SyntheticSpec {
            n_classes: 2,
            clusters,
            labeled_fraction: 0.2,
            train_fraction: 0.5,
            holdout_fraction: 0.2,
            feature_lift: 3.0,
            nuisance_dims: 0,
            nuisance_stdev: 0.0,
            seed: 5,
        }
    }

    fn small_config() -> TargetConfig {
        TargetConfig {
            stochastic_passes: 4,
            ..TargetConfig::default()
        }
    }

    #[test]
    fn separable_data_is_fit() {
        let spec = two_blobs(None);
        let data = generate(&spec).unwrap();
        let model = fit_target(&data.train, 2, &small_config()).unwrap();
        assert_eq!(model.accuracy(&data.train).unwrap(), 1.0);
        assert!(model.accuracy(&data.holdout).unwrap() > 0.95);
    }

    #[test]
    fn remote_cluster_is_misclassified() {
        let spec = two_blobs(Some(50));
        let data = generate(&spec).unwrap();
        let model = fit_target(&data.train, 2, &small_config()).unwrap();
        let remote: Vec<Sample> = data.all().filter(|s| s.cluster == 2).copied().collect();
        assert_eq!(remote.len(), 50);
        assert!(model.accuracy(&remote).unwrap() <= 0.2);
    }

    #[test]
    fn zero_dropout_passes_match_eval_mode() {
        let spec = two_blobs(None);
        let data = generate(&spec).unwrap();
        let config = TargetConfig {
            dropout_rate: 0.0,
            ..small_config()
        };
        let model = fit_target(&data.train, 2, &config).unwrap();
        let pools = build_pools(&data, &spec, &model, &config).unwrap();
        for inst in pools.unlabeled.instances() {
            for pass in inst.stochastic_logits.as_ref().unwrap() {
                assert_eq!(pass, &inst.logits);
            }
        }
    }

    #[test]
    fn flags_follow_predictions() {
        let spec = two_blobs(Some(20));
        let data = generate(&spec).unwrap();
        let model = fit_target(&data.train, 2, &small_config()).unwrap();
        let pools = build_pools(&data, &spec, &model, &small_config()).unwrap();
        for ((inst, &flag), &gt) in pools
            .labeled
            .instances()
            .iter()
            .zip(pools.labeled.binary_flags())
            .zip(pools.labeled.ground_truth_class())
        {
            assert_eq!(flag == 1, inst.predicted_class() == gt);
        }
        assert_eq!(pools.labeled.len(), data.train.len() + data.labeled.len());
    }
}
