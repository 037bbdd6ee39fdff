//! Comparison prioritizers: random order, DeepGini, multiple-boundary
//! clustering (MCP), distance-based surprise adequacy (DSA) and dropout
//! uncertainty.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{softmax, Budget, LabeledPool, UnlabeledPool};
use crate::error::{Error, Result};
use crate::testrank::{rank_with_ids, Ranking};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Random,
    DeepGini,
    Mcp,
    Dsa,
    Uncertainty,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [
        BaselineMethod::Random,
        BaselineMethod::DeepGini,
        BaselineMethod::Mcp,
        BaselineMethod::Dsa,
        BaselineMethod::Uncertainty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Random => "random",
            BaselineMethod::DeepGini => "deepgini",
            BaselineMethod::Mcp => "mcp",
            BaselineMethod::Dsa => "dsa",
            BaselineMethod::Uncertainty => "uncertainty",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline method {s:?}")))
    }
}

/// A baseline's output: either per-instance scores (ranked descending) or a
/// direct ordering of pool positions.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineScore {
    Scores(Vec<f64>),
    Ordering(Vec<usize>),
}

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Validation(format!("not a probability vector: {p:?}")));
    }
    Ok(())
}

/// `1 - sum_i p_i^2` per instance; larger means less confident.
pub fn score_deepgini(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    probs
        .iter()
        .map(|p| {
            check_distribution(p)?;
            Ok(1.0 - p.iter().map(|v| v * v).sum::<f64>())
        })
        .collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Entropy of the mean softmax over repeated stochastic forward passes.
pub fn score_uncertainty(samples: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, passes)| {
            if passes.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "instance {i} has {} stochastic passes, need at least 2",
                    passes.len()
                )));
            }
            let classes = passes[0].len();
            let mut mean = vec![0.0; classes];
            for logits in passes {
                if logits.len() != classes {
                    return Err(Error::Dimension("stochastic logits of differing length".into()));
                }
                for (m, p) in mean.iter_mut().zip(softmax(logits)?) {
                    *m += p;
                }
            }
            let t = passes.len() as f64;
            mean.iter_mut().for_each(|m| *m /= t);
            Ok(entropy(&mean))
        })
        .collect()
}

/// Which trace `dist_b` is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DsaVariant {
    /// From the nearest same-class reference trace `x_a`.
    #[default]
    Paper,
    /// From the test trace `x` itself.
    Original,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest reference trace satisfying `keep`; lowest index wins ties.
fn nearest(query: &[f64], refs: &[Vec<f64>], classes: &[usize], keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (r, &c)) in refs.iter().zip(classes).enumerate() {
        if !keep(c) {
            continue;
        }
        let d = euclidean(query, r);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

/// Distance-based surprise adequacy `dist_a / dist_b` of each test trace
/// against reference (training) traces. Zero `dist_b` yields `+inf`.
pub fn score_dsa(
    test_traces: &[Vec<f64>],
    test_classes: &[usize],
    train_traces: &[Vec<f64>],
    train_classes: &[usize],
    variant: DsaVariant,
) -> Result<Vec<f64>> {
    if test_traces.len() != test_classes.len() || train_traces.len() != train_classes.len() {
        return Err(Error::Dimension("traces and predicted classes differ in length".into()));
    }
    let distinct: std::collections::BTreeSet<usize> = train_classes.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Validation(
            "surprise adequacy needs at least two predicted classes among reference traces".into(),
        ));
    }
    let mut warned = false;
    test_traces
        .iter()
        .zip(test_classes)
        .map(|(trace, &cx)| {
            let (a, dist_a) = nearest(trace, train_traces, train_classes, |c| c == cx)
                .ok_or_else(|| Error::Validation(format!("predicted class {cx} has no reference traces")))?;
            let anchor: &[f64] = match variant {
                DsaVariant::Paper => &train_traces[a],
                DsaVariant::Original => trace,
            };
            let (_, dist_b) =
                nearest(anchor, train_traces, train_classes, |c| c != cx).expect("two classes checked above");
            if dist_b == 0.0 {
                if !warned {
                    log::warn!("surprise adequacy with dist_b = 0; scoring +inf");
                    warned = true;
                }
                return Ok(f64::INFINITY);
            }
            Ok(dist_a / dist_b)
        })
        .collect()
}

/// Multiple-boundary clustering and prioritization order.
///
/// Instances are grouped by their ordered (top-1, top-2) class pair and
/// ranked within a group by `p_top2 / p_top1`. Groups are then drained
/// round-robin; within each round the picks are ordered by priority.
pub fn mcp_order(probs: &[Vec<f64>], ids: &[u64]) -> Result<Vec<usize>> {
    if probs.len() != ids.len() {
        return Err(Error::Dimension("probabilities and ids differ in length".into()));
    }
    let mut clusters: BTreeMap<(usize, usize), Vec<(f64, usize)>> = BTreeMap::new();
    for (pos, p) in probs.iter().enumerate() {
        check_distribution(p)?;
        if p.len() < 2 {
            return Err(Error::Validation("MCP needs at least two classes".into()));
        }
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let (top1, top2) = (idx[0], idx[1]);
        let priority = p[top2] / p[top1];
        clusters.entry((top1, top2)).or_default().push((priority, pos));
    }
    let by_priority = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(ids[a.1].cmp(&ids[b.1]));
    for members in clusters.values_mut() {
        members.sort_by(by_priority);
    }
    let mut order = Vec::with_capacity(probs.len());
    let mut round = 0;
    loop {
        let mut picks: Vec<(f64, usize)> = clusters.values().filter_map(|m| m.get(round).copied()).collect();
        if picks.is_empty() {
            break;
        }
        picks.sort_by(by_priority);
        order.extend(picks.into_iter().map(|(_, pos)| pos));
        round += 1;
    }
    Ok(order)
}

/// The first `b` positions of the MCP order.
pub fn score_mcp(probs: &[Vec<f64>], ids: &[u64], budget: Budget) -> Result<Vec<usize>> {
    let mut order = mcp_order(probs, ids)?;
    order.truncate(budget.get());
    Ok(order)
}

/// Uniform random permutation of `0..n`, deterministic per seed.
pub fn score_random(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("random ordering of an empty pool".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub dsa_variant: DsaVariant,
    #[serde(default)]
    pub random_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            dsa_variant: DsaVariant::Paper,
            random_seed: 0,
        }
    }
}

fn probabilities(unlabeled: &UnlabeledPool) -> Result<Vec<Vec<f64>>> {
    unlabeled.instances().iter().map(|i| softmax(&i.logits)).collect()
}

/// Scores the unlabeled pool with one baseline. `reference` supplies the
/// training traces needed by DSA.
pub fn run_baseline(
    method: BaselineMethod,
    unlabeled: &UnlabeledPool,
    reference: Option<&LabeledPool>,
    config: &BaselineConfig,
) -> Result<BaselineScore> {
    let ids: Vec<u64> = unlabeled.instances().iter().map(|i| i.id).collect();
    match method {
        BaselineMethod::Random => Ok(BaselineScore::Ordering(score_random(
            unlabeled.len(),
            config.random_seed,
        )?)),
        BaselineMethod::DeepGini => Ok(BaselineScore::Scores(score_deepgini(&probabilities(unlabeled)?)?)),
        BaselineMethod::Mcp => Ok(BaselineScore::Ordering(mcp_order(&probabilities(unlabeled)?, &ids)?)),
        BaselineMethod::Uncertainty => {
            let samples = unlabeled
                .instances()
                .iter()
                .map(|i| {
                    i.stochastic_logits.clone().ok_or_else(|| Error::InstanceValidation {
                        id: i.id,
                        message: "missing stochastic_logits".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BaselineScore::Scores(score_uncertainty(&samples)?))
        }
        BaselineMethod::Dsa => {
            let reference =
                reference.ok_or_else(|| Error::InvalidArgument("DSA needs reference training traces".into()))?;
            let traces = |insts: &[crate::data::Instance]| -> Result<Vec<Vec<f64>>> {
                insts
                    .iter()
                    .map(|i| {
                        i.trace.clone().ok_or_else(|| Error::InstanceValidation {
                            id: i.id,
                            message: "missing activation trace".into(),
                        })
                    })
                    .collect()
            };
            let test_traces = traces(unlabeled.instances())?;
            let train_traces = traces(reference.instances())?;
            let test_classes: Vec<usize> = unlabeled.instances().iter().map(|i| i.predicted_class()).collect();
            let train_classes: Vec<usize> = reference.instances().iter().map(|i| i.predicted_class()).collect();
            Ok(BaselineScore::Scores(score_dsa(
                &test_traces,
                &test_classes,
                &train_traces,
                &train_classes,
                config.dsa_variant,
            )?))
        }
    }
}

/// Turns a baseline output into a ranking of the unlabeled pool.
pub fn baseline_ranking(score: BaselineScore, unlabeled: &UnlabeledPool) -> Result<Ranking> {
    let ids: Vec<u64> = unlabeled.instances().iter().map(|i| i.id).collect();
    match score {
        BaselineScore::Scores(s) => rank_with_ids(&s, &ids),
        BaselineScore::Ordering(o) => Ranking::from_order(o, ids),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deepgini_examples() {
        let s = score_deepgini(&[vec![0.1; 10], vec![0.0, 1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!((s[0] - 0.9).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert_eq!(s[2], 0.5);
        assert!(score_deepgini(&[vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let confident = vec![vec![50.0, -50.0]; 3];
        assert!(score_uncertainty(&[confident]).unwrap()[0] < 1e-12);
        let balanced = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        assert!((score_uncertainty(&[balanced]).unwrap()[0] - 2f64.ln()).abs() < 1e-12);
        assert!(score_uncertainty(&[vec![vec![0.0, 1.0]]]).is_err());
    }

    #[test]
    fn uncertainty_three_hand_samples() {
        // softmax of (0,0), (ln 3, 0), (0, ln 3) = (1/2,1/2), (3/4,1/4), (1/4,3/4)
        // mean = (1/2, 1/2) -> ln 2
        let samples = vec![vec![0.0, 0.0], vec![3f64.ln(), 0.0], vec![0.0, 3f64.ln()]];
        assert!((score_uncertainty(&[samples]).unwrap()[0] - 2f64.ln()).abs() < 1e-12);
        // (ln 3, 0) twice and (0, 0): mean = (2/3, 1/3)
        let samples = vec![vec![3f64.ln(), 0.0], vec![3f64.ln(), 0.0], vec![0.0, 0.0]];
        let expected = -(2.0 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        assert!((score_uncertainty(&[samples]).unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn dsa_hand_example() {
        let train = vec![vec![0.0], vec![2.0]];
        let s = score_dsa(&[vec![0.5]], &[0], &train, &[0, 1], DsaVariant::Paper).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-15);
        let s = score_dsa(&[vec![0.0]], &[0], &train, &[0, 1], DsaVariant::Paper).unwrap();
        assert_eq!(s[0], 0.0);
        // measured from the test trace: 0.5 / 1.5
        let s = score_dsa(&[vec![0.5]], &[0], &train, &[0, 1], DsaVariant::Original).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dsa_errors() {
        let train = vec![vec![0.0], vec![2.0]];
        assert!(score_dsa(&[vec![0.5]], &[2], &train, &[0, 1], DsaVariant::Paper).is_err());
        assert!(score_dsa(&[vec![0.5]], &[0], &train, &[0, 0], DsaVariant::Paper).is_err());
        let s = score_dsa(&[vec![1.0]], &[0], &[vec![1.0], vec![1.0]], &[0, 1], DsaVariant::Paper).unwrap();
        assert_eq!(s[0], f64::INFINITY);
    }

    #[test]
    fn mcp_uniform_is_max_priority() {
        // uniform probabilities give ratio 1, ahead of any confident instance in the same cluster
        let probs = vec![vec![0.9, 0.1], vec![0.5, 0.5], vec![0.7, 0.3]];
        assert_eq!(mcp_order(&probs, &[0, 1, 2]).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn mcp_round_robin_two_clusters() {
        // cluster (0,1) has three members, cluster (2,0) one
        let probs = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.5, 0.4, 0.1],
            vec![0.8, 0.15, 0.05],
            vec![0.2, 0.1, 0.7],
        ];
        let picked = score_mcp(&probs, &[0, 1, 2, 3], Budget::new(2, 4).unwrap()).unwrap();
        assert_eq!(picked.len(), 2);
        assert!(picked.contains(&3));
        assert!(picked.contains(&1));
        assert_eq!(mcp_order(&probs, &[0, 1, 2, 3]).unwrap(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn random_examples() {
        assert_eq!(score_random(1, 4).unwrap(), vec![0]);
        assert_eq!(score_random(50, 7).unwrap(), score_random(50, 7).unwrap());
        assert_ne!(score_random(50, 7).unwrap(), score_random(50, 8).unwrap());
        assert!(score_random(0, 1).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in BaselineMethod::ALL {
            assert_eq!(m.name().parse::<BaselineMethod>().unwrap(), m);
        }
        assert!("lsa".parse::<BaselineMethod>().is_err());
    }
}
