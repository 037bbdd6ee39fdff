//! Test-prioritization effectiveness: TPF at a budget, TPF curves over a
//! budget grid, their average (ATPF), and the report/curve CSV artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::UnlabeledPool;
use crate::error::{Error, Result};
use crate::testrank::{check_permutation, Ranking};

/// Whether each unlabeled instance is misclassified by the target model.
///
/// This is the only consumer of the pool's withheld ground truth; it runs
/// after every prioritizer has produced its ranking.
pub fn bug_flags(unlabeled: &UnlabeledPool) -> Result<Vec<bool>> {
    let truth = unlabeled
        .hidden_ground_truth()
        .ok_or_else(|| Error::Validation("unlabeled pool carries no ground truth for evaluation".into()))?;
    Ok(unlabeled
        .instances()
        .iter()
        .zip(truth)
        .map(|(inst, &gt)| inst.predicted_class() != gt)
        .collect())
}

/// Fraction of the attainable bugs found: `detected / min(b, total_bugs)`.
pub fn tpf(detected: usize, budget: usize, total_bugs: usize) -> Result<f64> {
    if total_bugs == 0 {
        return Err(Error::Validation("TPF is undefined for a pool without bugs".into()));
    }
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    if detected > budget.min(total_bugs) {
        return Err(Error::InvalidArgument(format!(
            "{detected} detections exceed min(budget {budget}, bugs {total_bugs})"
        )));
    }
    Ok(detected as f64 / budget.min(total_bugs) as f64)
}

/// `points` budgets at `ceil(i / points * n)` for `i = 1..=points`,
/// deduplicated and ascending.
pub fn budget_grid(pool_size: usize, points: usize) -> Result<Vec<usize>> {
    if pool_size == 0 || points == 0 {
        return Err(Error::InvalidArgument(
            "budget grid needs a nonempty pool and at least one point".into(),
        ));
    }
    let mut grid: Vec<usize> = (1..=points).map(|i| (i * pool_size).div_ceil(points).max(1)).collect();
    grid.dedup();
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpfCurve {
    pub budgets: Vec<usize>,
    pub tpf: Vec<f64>,
    pub total_bugs: usize,
    pub pool_size: usize,
}

impl TpfCurve {
    /// `budget_pct,budget_abs,tpf` CSV text.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("budget_pct,budget_abs,tpf\n");
        for (&b, &t) in self.budgets.iter().zip(&self.tpf) {
            let pct = 100.0 * b as f64 / self.pool_size as f64;
            let _ = writeln!(out, "{pct},{b},{t}");
        }
        out
    }
}

/// TPF of an ordering (pool positions, best first) at each grid budget.
pub fn tpf_curve(order: &[usize], bugs: &[bool], grid: &[usize]) -> Result<TpfCurve> {
    check_permutation(order, bugs.len())?;
    let total_bugs = bugs.iter().filter(|&&b| b).count();
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.last().is_some_and(|&b| b > bugs.len()) {
        return Err(Error::InvalidArgument(
            "budget grid must be strictly ascending within the pool".into(),
        ));
    }
    let mut found = Vec::with_capacity(order.len() + 1);
    found.push(0usize);
    for &p in order {
        found.push(found.last().unwrap() + usize::from(bugs[p]));
    }
    let tpf = grid
        .iter()
        .map(|&b| tpf(found[b], b, total_bugs))
        .collect::<Result<Vec<f64>>>()?;
    Ok(TpfCurve {
        budgets: grid.to_vec(),
        tpf,
        total_bugs,
        pool_size: bugs.len(),
    })
}

/// Mean TPF over the grid budgets not exceeding the number of bugs.
pub fn atpf(curve: &TpfCurve) -> Result<f64> {
    let values: Vec<f64> = curve
        .budgets
        .iter()
        .zip(&curve.tpf)
        .filter(|(&b, _)| b <= curve.total_bugs)
        .map(|(_, &t)| t)
        .collect();
    if values.is_empty() {
        return Err(Error::Validation(format!(
            "no grid budget is within the {} bugs of the pool",
            curve.total_bugs
        )));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    pub seed: u64,
    pub atpf: f64,
    pub curve: TpfCurve,
}

/// Scores one ranking against the pool's bug flags.
pub fn evaluate(method: &str, seed: u64, ranking: &Ranking, bugs: &[bool], grid: &[usize]) -> Result<MethodResult> {
    let curve = tpf_curve(&ranking.order, bugs, grid)?;
    Ok(MethodResult {
        method: method.to_string(),
        seed,
        atpf: atpf(&curve)?,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub stdev: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MethodResult>,
    pub summary: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// `method,ATPF,seed` CSV text, one row per method and seed.
    pub fn render_report_csv(&self) -> String {
        let mut out = String::from("method,ATPF,seed\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.method, r.atpf, r.seed);
        }
        out
    }

    /// `method,mean,stdev,runs` CSV text.
    pub fn render_summary_csv(&self) -> String {
        let mut out = String::from("method,mean,stdev,runs\n");
        for s in &self.summary {
            let _ = writeln!(out, "{},{},{},{}", s.method, s.mean, s.stdev, s.runs);
        }
        out
    }
}

/// Aggregates per-seed results. Every method evaluated on a seed must use
/// the same budget grid and pool.
pub fn compare(rows: Vec<MethodResult>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    }
    let mut per_seed: BTreeMap<u64, &TpfCurve> = BTreeMap::new();
    for r in &rows {
        let reference = per_seed.entry(r.seed).or_insert(&r.curve);
        if reference.budgets != r.curve.budgets
            || reference.pool_size != r.curve.pool_size
            || reference.total_bugs != r.curve.total_bugs
        {
            return Err(Error::Validation(format!(
                "method {} on seed {} was evaluated on a different pool or grid",
                r.method, r.seed
            )));
        }
    }
    let mut order: Vec<&str> = Vec::new();
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        if !values.contains_key(r.method.as_str()) {
            order.push(&r.method);
        }
        values.entry(&r.method).or_default().push(r.atpf);
    }
    let summary = order
        .iter()
        .map(|m| {
            let v = &values[m];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let stdev = if v.len() > 1 {
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            MethodSummary {
                method: m.to_string(),
                mean,
                stdev,
                runs: v.len(),
            }
        })
        .collect();
    Ok(EvalReport { rows, summary })
}
