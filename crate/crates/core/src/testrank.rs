//! The prioritization pipeline: intrinsic attributes from the target model's
//! logits, contextual attributes from a GCN over the kNN similarity graph,
//! and an MLP that fuses both into a bug-revealing probability.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{softmax, validate_run, Budget, Instance, LabeledPool, UnlabeledPool};
use crate::error::{Error, Result};
use crate::graph::{build_knn_approx, build_knn_exact, normalize, SimilarityGraph};
use crate::nn::gcn::gcn_forward;
use crate::nn::loss::sigmoid;
use crate::nn::{train_gnn, train_mlp_binary, GnnModel, Mlp, OptimizerKind, TrainConfig};

/// Target-model logits of the unlabeled pool, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicAttrs(pub Array2<f64>);

fn logit_matrix(instances: &[Instance]) -> Array2<f64> {
    let classes = instances.first().map_or(0, |i| i.logits.len());
    Array2::from_shape_fn((instances.len(), classes), |(i, c)| instances[i].logits[c])
}

fn feature_matrix(instances: &[Instance]) -> Array2<f64> {
    let dim = instances.first().map_or(0, |i| i.feature.len());
    Array2::from_shape_fn((instances.len(), dim), |(i, c)| instances[i].feature[c])
}

pub fn extract_intrinsic(unlabeled: &UnlabeledPool) -> Result<IntrinsicAttrs> {
    if unlabeled.is_empty() {
        return Err(Error::InvalidArgument("unlabeled pool is empty".into()));
    }
    Ok(IntrinsicAttrs(logit_matrix(unlabeled.instances())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    /// Neighbors per node in the similarity graph.
    pub k: usize,
    /// Skip unlabeled-unlabeled candidate pairs when building the graph.
    pub approx: bool,
    pub layers: usize,
    pub hidden_dim: usize,
    pub train: TrainConfig,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            k: 100,
            approx: true,
            layers: 2,
            hidden_dim: 32,
            train: TrainConfig {
                epochs: 600,
                learning_rate: 0.01,
                optimizer: OptimizerKind::default(),
                seed: 0,
                class_weighting: true,
            },
        }
    }
}

/// GCN representations for both pools plus training diagnostics.
#[derive(Debug, Clone)]
pub struct ContextualAttrs {
    /// `|X_U| x hidden_dim`
    pub unlabeled: Array2<f64>,
    /// `|X_L| x hidden_dim`
    pub labeled: Array2<f64>,
    /// Classification-head probability that each unlabeled node is
    /// predicted correctly (flag 1).
    pub head_correct_probability: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub graph: SimilarityGraph,
    pub model: GnnModel,
}

/// Builds the similarity graph, trains the GCN on the labeled flags and
/// returns the final hidden representations.
pub fn extract_contextual(
    labeled: &LabeledPool,
    unlabeled: &UnlabeledPool,
    config: &GnnConfig,
) -> Result<ContextualAttrs> {
    validate_run(labeled, unlabeled)?;
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if config.layers == 0 || config.hidden_dim == 0 {
        return Err(Error::InvalidArgument(
            "GNN needs at least one layer of positive width".into(),
        ));
    }
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::InvalidArgument("both pools must be nonempty".into()));
    }
    let p = labeled.len();
    let lab: Vec<&[f64]> = labeled.instances().iter().map(|i| i.feature.as_slice()).collect();
    let unl: Vec<&[f64]> = unlabeled.instances().iter().map(|i| i.feature.as_slice()).collect();
    let graph = if config.approx {
        build_knn_approx(&lab, &unl, config.k)?
    } else {
        let all: Vec<&[f64]> = lab.iter().chain(&unl).copied().collect();
        build_knn_exact(&all, p, config.k)?
    };
    let adj = normalize(&graph);
    let h0 = concatenate(
        Axis(0),
        &[
            feature_matrix(labeled.instances()).view(),
            feature_matrix(unlabeled.instances()).view(),
        ],
    )
    .map_err(|e| Error::Dimension(e.to_string()))?;

    let hidden = vec![config.hidden_dim; config.layers];
    let mut model = GnnModel::new(h0.ncols(), &hidden, 2, config.train.seed)?;
    let labels: Vec<usize> = labeled.binary_flags().iter().map(|&f| usize::from(f)).collect();
    let mask: Vec<usize> = (0..p).collect();
    let loss_history = train_gnn(&mut model, &adj, h0.view(), &labels, &mask, &config.train)?;

    let forward = gcn_forward(&adj, h0.view(), &model)?;
    let repr = forward.representation();
    let head_correct_probability = forward
        .logits
        .slice(s![p.., ..])
        .rows()
        .into_iter()
        .map(|row| softmax(&row.to_vec()).map(|pr| pr[1]))
        .collect::<Result<Vec<f64>>>()?;
    let out = ContextualAttrs {
        unlabeled: repr.slice(s![p.., ..]).to_owned(),
        labeled: repr.slice(s![..p, ..]).to_owned(),
        head_correct_probability,
        loss_history,
        graph,
        model,
    };
    if out.unlabeled.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite contextual attributes".into()));
    }
    Ok(out)
}

/// How the target model's outputs enter the combiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IntrinsicMode {
    /// Raw pre-softmax logits.
    #[default]
    Logits,
    /// Softmax probabilities.
    Probabilities,
}

/// Whether and how to drop the intrinsic attributes from the combiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeSet {
    /// Contextual and intrinsic attributes.
    #[default]
    Both,
    /// Intrinsic block set to zero after standardization.
    ContextualZeroed,
    /// Combiner trained on the contextual block alone.
    ContextualNarrow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_dim: usize,
    /// z-score every input column with labeled-pool statistics.
    pub standardize: bool,
    pub train: TrainConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_dim: 32,
            standardize: true,
            train: TrainConfig {
                epochs: 300,
                learning_rate: 0.001,
                optimizer: OptimizerKind::default(),
                seed: 0,
                class_weighting: true,
            },
        }
    }
}

/// Per-column mean and standard deviation of the labeled rows.
fn standardize(labeled: &mut Array2<f64>, unlabeled: &mut Array2<f64>) {
    for c in 0..labeled.ncols() {
        let col = labeled.column(c);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        labeled.column_mut(c).mapv_inplace(|v| (v - mean) / sd);
        unlabeled.column_mut(c).mapv_inplace(|v| (v - mean) / sd);
    }
}

/// Trains the combiner MLP on the labeled attributes (positive class = bug,
/// i.e. flag 0) and returns `sigmoid(output)` for every unlabeled row.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bug_probability(
    em_labeled: ArrayView2<f64>,
    ec_labeled: ArrayView2<f64>,
    flags: &[u8],
    em_unlabeled: ArrayView2<f64>,
    ec_unlabeled: ArrayView2<f64>,
    attributes: AttributeSet,
    config: &MlpConfig,
) -> Result<Vec<f64>> {
    if em_labeled.nrows() != ec_labeled.nrows() || em_labeled.nrows() != flags.len() {
        return Err(Error::Dimension(format!(
            "labeled blocks have {} and {} rows for {} flags",
            em_labeled.nrows(),
            ec_labeled.nrows(),
            flags.len()
        )));
    }
    if em_unlabeled.nrows() != ec_unlabeled.nrows()
        || em_labeled.ncols() != em_unlabeled.ncols()
        || ec_labeled.ncols() != ec_unlabeled.ncols()
    {
        return Err(Error::Dimension(
            "labeled and unlabeled attribute blocks disagree".into(),
        ));
    }
    if flags.is_empty() {
        return Err(Error::InvalidArgument("no labeled rows to train on".into()));
    }
    let join = |ec: ArrayView2<f64>, em: ArrayView2<f64>| -> Result<Array2<f64>> {
        match attributes {
            AttributeSet::ContextualNarrow => Ok(ec.to_owned()),
            _ => concatenate(Axis(1), &[ec, em]).map_err(|e| Error::Dimension(e.to_string())),
        }
    };
    let mut x_l = join(ec_labeled, em_labeled)?;
    let mut x_u = join(ec_unlabeled, em_unlabeled)?;
    if config.standardize {
        standardize(&mut x_l, &mut x_u);
    }
    if attributes == AttributeSet::ContextualZeroed {
        let from = ec_labeled.ncols();
        x_l.slice_mut(s![.., from..]).fill(0.0);
        x_u.slice_mut(s![.., from..]).fill(0.0);
    }
    let targets: Vec<f64> = flags.iter().map(|&f| 1.0 - f64::from(f)).collect();
    let mut mlp = Mlp::new(x_l.ncols(), &[config.hidden_dim], 1, config.train.seed)?;
    train_mlp_binary(&mut mlp, x_l.view(), &targets, &config.train)?;
    let out = mlp.forward(x_u.view())?;
    Ok(out.output.column(0).iter().map(|&t| sigmoid(t)).collect())
}

/// Unlabeled instances in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Pool positions, highest score first.
    pub order: Vec<usize>,
    /// Score per pool position.
    pub scores: Vec<f64>,
    /// Instance id per pool position.
    pub ids: Vec<u64>,
}

impl Ranking {
    /// Ordering given directly (no scores), e.g. from random or MCP selection.
    pub fn from_order(order: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        check_permutation(&order, ids.len())?;
        let n = ids.len();
        // positional pseudo-score so the CSV remains informative
        let mut scores = vec![0.0; n];
        for (r, &pos) in order.iter().enumerate() {
            scores[pos] = (n - r) as f64 / n as f64;
        }
        Ok(Ranking { order, scores, ids })
    }

    pub fn ordered_ids(&self) -> Vec<u64> {
        self.order.iter().map(|&p| self.ids[p]).collect()
    }

    /// `rank,id,score` CSV text, rank starting at 1.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("rank,id,score\n");
        for (r, &pos) in self.order.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", r + 1, self.ids[pos], self.scores[pos]);
        }
        out
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::Validation(format!(
            "ordering has {} entries for {n} instances",
            order.len()
        )));
    }
    for &p in order {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Validation(format!("ordering is not a permutation (entry {p})")));
        }
    }
    Ok(())
}

/// Stable descending sort of scores; equal scores go to the lower id.
pub fn rank_with_ids(scores: &[f64], ids: &[u64]) -> Result<Ranking> {
    if scores.len() != ids.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} ids",
            scores.len(),
            ids.len()
        )));
    }
    if let Some(pos) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score of instance {} is NaN", ids[pos])));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(Ordering::Equal) | None => ids[a].cmp(&ids[b]),
        Some(o) => o,
    });
    Ok(Ranking {
        order,
        scores: scores.to_vec(),
        ids: ids.to_vec(),
    })
}

/// [`rank_with_ids`] with ids equal to positions.
pub fn rank(scores: &[f64]) -> Result<Ranking> {
    let ids: Vec<u64> = (0..scores.len() as u64).collect();
    rank_with_ids(scores, &ids)
}

/// The first `b` ids of the ranking.
pub fn select(ranking: &Ranking, budget: Budget) -> Result<Vec<u64>> {
    if budget.get() > ranking.order.len() {
        return Err(Error::InvalidArgument(format!(
            "budget {} exceeds pool size {}",
            budget.get(),
            ranking.order.len()
        )));
    }
    Ok(ranking.order[..budget.get()].iter().map(|&p| ranking.ids[p]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TestRankConfig {
    #[serde(default)]
    pub gnn: GnnConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub intrinsic: IntrinsicMode,
    #[serde(default)]
    pub attributes: AttributeSet,
}

#[derive(Debug, Clone)]
pub struct TestRankOutput {
    pub ranking: Ranking,
    pub contextual: ContextualAttrs,
}

fn intrinsic_block(instances: &[Instance], mode: IntrinsicMode) -> Result<Array2<f64>> {
    let logits = logit_matrix(instances);
    match mode {
        IntrinsicMode::Logits => Ok(logits),
        IntrinsicMode::Probabilities => {
            let mut out = logits.clone();
            for (mut row, src) in out.rows_mut().into_iter().zip(logits.rows()) {
                let p = softmax(&src.to_vec())?;
                row.assign(&ndarray::Array1::from(p));
            }
            Ok(out)
        }
    }
}

/// Fuses precomputed contextual attributes with the intrinsic attributes and
/// ranks the unlabeled pool.
pub fn rank_with_contextual(
    labeled: &LabeledPool,
    unlabeled: &UnlabeledPool,
    contextual: &ContextualAttrs,
    config: &TestRankConfig,
) -> Result<Ranking> {
    let em_u = intrinsic_block(unlabeled.instances(), config.intrinsic)?;
    let em_l = intrinsic_block(labeled.instances(), config.intrinsic)?;
    let scores = estimate_bug_probability(
        em_l.view(),
        contextual.labeled.view(),
        labeled.binary_flags(),
        em_u.view(),
        contextual.unlabeled.view(),
        config.attributes,
        &config.mlp,
    )?;
    let ids: Vec<u64> = unlabeled.instances().iter().map(|i| i.id).collect();
    rank_with_ids(&scores, &ids)
}

/// Runs the whole pipeline on validated pools.
pub fn run_testrank(
    labeled: &LabeledPool,
    unlabeled: &UnlabeledPool,
    config: &TestRankConfig,
) -> Result<TestRankOutput> {
    extract_intrinsic(unlabeled)?;
    let contextual = extract_contextual(labeled, unlabeled, &config.gnn)?;
    let ranking = rank_with_contextual(labeled, unlabeled, &contextual, config)?;
    Ok(TestRankOutput { ranking, contextual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PoolDims;
    use ndarray::arr2;

    #[test]
    fn intrinsic_is_a_passthrough() {
        let dims = PoolDims {
            classes: 2,
            feature_dim: 1,
        };
        let pool = UnlabeledPool::new(dims, vec![Instance::new(4, vec![1.0], vec![2.0, -1.0])]).unwrap();
        assert_eq!(extract_intrinsic(&pool).unwrap().0, arr2(&[[2.0, -1.0]]));
        let empty = UnlabeledPool::new(dims, vec![]).unwrap();
        assert!(extract_intrinsic(&empty).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&[0.1, 0.9, 0.5]).unwrap().order, vec![1, 2, 0]);
        assert_eq!(rank(&[0.3; 5]).unwrap().order, vec![0, 1, 2, 3, 4]);
        assert!(rank(&[0.3, f64::NAN]).is_err());
        let r = rank_with_ids(&[0.5, 0.5, 0.7], &[9, 3, 5]).unwrap();
        assert_eq!(r.ordered_ids(), vec![5, 3, 9]);
    }

    #[test]
    fn select_examples() {
        let r = rank(&[0.1, 0.9, 0.5]).unwrap();
        assert_eq!(select(&r, Budget::new(3, 3).unwrap()).unwrap(), vec![1, 2, 0]);
        assert_eq!(select(&r, Budget::new(1, 3).unwrap()).unwrap(), vec![1]);
        assert!(Budget::new(4, 3).is_err());
    }

    #[test]
    fn ranking_csv() {
        let r = rank_with_ids(&[0.25, 0.75], &[10, 11]).unwrap();
        assert_eq!(r.render_csv(), "rank,id,score\n1,11,0.75\n2,10,0.25\n");
    }

    #[test]
    fn from_order_rejects_non_permutations() {
        assert!(Ranking::from_order(vec![0, 0], vec![1, 2]).is_err());
        assert!(Ranking::from_order(vec![1, 0], vec![1, 2]).is_ok());
    }
}
