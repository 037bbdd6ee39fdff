use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::{generate, SyntheticSpec};
use super::target::{build_pools, fit_target, HarnessPools, TargetConfig};
use crate::baselines::{baseline_ranking, run_baseline, score_deepgini, BaselineConfig, BaselineMethod};
use crate::data::{softmax, write_pool, Pool};
use crate::error::{Error, Result};
use crate::eval::{budget_grid, bug_flags, compare, evaluate, EvalReport, MethodResult};
use crate::nn::train::render_loss_history;
use crate::testrank::{extract_contextual, rank_with_contextual, AttributeSet, Ranking, TestRankConfig};

pub const TESTRANK: &str = "testrank";
pub const CONTEXTUAL_ONLY: &str = "contextual-only";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Budgets at 1/points .. 100% of the unlabeled pool.
    pub grid_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { grid_points: 100 }
    }
}

/// Extra TestRank variants run alongside the main comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Also rank with the exact (all-pairs) similarity graph.
    #[serde(default)]
    pub exact_graph: bool,
    /// Additional neighbor counts to rank with.
    #[serde(default)]
    pub k_values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write the generated pools next to the rankings.
    #[serde(default)]
    pub write_pools: bool,
    #[serde(default)]
    pub scenario: SyntheticSpec,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub testrank: TestRankConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs"),
            write_pools: false,
            scenario: SyntheticSpec::default(),
            target: TargetConfig::default(),
            testrank: TestRankConfig::default(),
            baselines: BaselineConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name {:?}", self.name)));
        }
        self.scenario.validate()?;
        self.target.validate()?;
        self.testrank.gnn.train.validate()?;
        self.testrank.mlp.train.validate()?;
        if self.testrank.gnn.k == 0 || self.ablation.k_values.contains(&0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.eval.grid_points == 0 {
            return Err(Error::Config("grid_points must be positive".into()));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON encoding.
    /// The output directory does not contribute.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-{}", self.name, self.hash()))
    }
}

/// Independent per-stage seed drawn from the run seed. Seeds written in the
/// config are XORed onto these, so zero leaves them unchanged.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Per-seed facts about the scenario, for reporting and sanity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedDiagnostics {
    pub seed: u64,
    pub pool_size: usize,
    pub labeled_size: usize,
    pub total_bugs: usize,
    pub holdout_accuracy: f64,
    /// Share of unlabeled bugs whose DeepGini score is below the pool median.
    pub confident_bug_fraction: f64,
    pub distance_evaluations: u64,
    /// Wall time from scenario generation through TestRank, contextual-only
    /// and the five baselines; ablation variants are not included.
    pub comparison_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub results: Vec<MethodResult>,
    pub rankings: Vec<(String, Ranking)>,
    /// Per unlabeled instance, whether the target misclassifies it.
    pub bugs: Vec<bool>,
    pub diagnostics: SeedDiagnostics,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn confident_bug_fraction(pools: &HarnessPools, bugs: &[bool]) -> Result<f64> {
    let probs = pools
        .unlabeled
        .instances()
        .iter()
        .map(|i| softmax(&i.logits))
        .collect::<Result<Vec<_>>>()?;
    let gini = score_deepgini(&probs)?;
    let med = median(&gini);
    let total = bugs.iter().filter(|&&b| b).count();
    let confident = gini.iter().zip(bugs).filter(|(&g, &b)| b && g < med).count();
    Ok(if total == 0 {
        0.0
    } else {
        confident as f64 / total as f64
    })
}

fn seeded_testrank(config: &ExperimentConfig, seed: u64) -> TestRankConfig {
    let mut tr = config.testrank.clone();
    tr.gnn.train.seed ^= derive_seed(seed, 3);
    tr.mlp.train.seed ^= derive_seed(seed, 4);
    tr
}

/// Generates the scenario for one seed, fits the target and runs every
/// method. Nothing is written to disk.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(SeedOutcome, HarnessPools, Vec<f64>)> {
    let started = Instant::now();
    let spec = SyntheticSpec {
        seed: config.scenario.seed ^ derive_seed(seed, 1),
        ..config.scenario.clone()
    };
    let target_config = TargetConfig {
        seed: config.target.seed ^ derive_seed(seed, 2),
        ..config.target.clone()
    };
    let data = generate(&spec).map_err(Error::stage("generate"))?;
    let model = fit_target(&data.train, spec.n_classes, &target_config).map_err(Error::stage("fit_target"))?;
    let holdout_accuracy = if data.holdout.is_empty() {
        f64::NAN
    } else {
        model.accuracy(&data.holdout)?
    };
    let pools = build_pools(&data, &spec, &model, &target_config).map_err(Error::stage("fit_target"))?;

    let tr = seeded_testrank(config, seed);
    let mut rankings: Vec<(String, Ranking)> = Vec::new();
    let contextual =
        extract_contextual(&pools.labeled, &pools.unlabeled, &tr.gnn).map_err(Error::stage("contextual"))?;
    let loss_history = contextual.loss_history.clone();
    let ranking =
        rank_with_contextual(&pools.labeled, &pools.unlabeled, &contextual, &tr).map_err(Error::stage("testrank"))?;
    rankings.push((TESTRANK.into(), ranking));
    let ctx_only = TestRankConfig {
        attributes: match tr.attributes {
            AttributeSet::Both => AttributeSet::ContextualZeroed,
            other => other,
        },
        ..tr.clone()
    };
    let ranking = rank_with_contextual(&pools.labeled, &pools.unlabeled, &contextual, &ctx_only)
        .map_err(Error::stage("testrank"))?;
    rankings.push((CONTEXTUAL_ONLY.into(), ranking));

    let baseline_config = BaselineConfig {
        random_seed: config.baselines.random_seed ^ derive_seed(seed, 5),
        ..config.baselines.clone()
    };
    for method in BaselineMethod::ALL {
        let score = run_baseline(method, &pools.unlabeled, Some(&pools.train), &baseline_config)
            .map_err(Error::stage("baseline"))?;
        rankings.push((method.name().into(), baseline_ranking(score, &pools.unlabeled)?));
    }
    let comparison_seconds = started.elapsed().as_secs_f64();

    let mut variants: Vec<(String, TestRankConfig)> = Vec::new();
    if config.ablation.exact_graph {
        let mut v = tr.clone();
        v.gnn.approx = !tr.gnn.approx;
        let name = if tr.gnn.approx {
            "testrank-exact"
        } else {
            "testrank-approx"
        };
        variants.push((name.into(), v));
    }
    for &k in &config.ablation.k_values {
        if k == tr.gnn.k {
            continue;
        }
        let mut v = tr.clone();
        v.gnn.k = k;
        variants.push((format!("testrank-k{k}"), v));
    }
    for (name, v) in variants {
        let ctx = extract_contextual(&pools.labeled, &pools.unlabeled, &v.gnn).map_err(Error::stage("contextual"))?;
        let ranking =
            rank_with_contextual(&pools.labeled, &pools.unlabeled, &ctx, &v).map_err(Error::stage("testrank"))?;
        rankings.push((name, ranking));
    }

    let bugs = bug_flags(&pools.unlabeled).map_err(Error::stage("eval"))?;
    let grid = budget_grid(pools.unlabeled.len(), config.eval.grid_points)?;
    let results = rankings
        .iter()
        .map(|(name, r)| evaluate(name, seed, r, &bugs, &grid))
        .collect::<Result<Vec<_>>>()
        .map_err(Error::stage("eval"))?;
    let diagnostics = SeedDiagnostics {
        seed,
        pool_size: pools.unlabeled.len(),
        labeled_size: pools.labeled.len(),
        total_bugs: bugs.iter().filter(|&&b| b).count(),
        holdout_accuracy,
        confident_bug_fraction: confident_bug_fraction(&pools, &bugs)?,
        distance_evaluations: contextual.graph.distance_evaluations(),
        comparison_seconds,
    };
    Ok((
        SeedOutcome {
            results,
            rankings,
            bugs,
            diagnostics,
        },
        pools,
        loss_history,
    ))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub run_dir: PathBuf,
    pub seeds: Vec<SeedOutcome>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every seed, writes rankings, curves and the report under the run
/// directory, and returns the aggregated report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let run_dir = config.run_dir();
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write(&run_dir.join("config.toml"), &config.to_toml()?)?;
    let mut seeds = Vec::new();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        log::info!("seed {seed}: starting");
        let (outcome, pools, loss_history) = run_seed(config, seed)?;
        let dir = run_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for ((name, ranking), result) in outcome.rankings.iter().zip(&outcome.results) {
            write(&dir.join(format!("ranking_{name}.csv")), &ranking.render_csv())?;
            write(&dir.join(format!("curve_{name}.csv")), &result.curve.render_csv())?;
        }
        write(&dir.join("loss_gnn.csv"), &render_loss_history(&loss_history))?;
        if config.write_pools {
            write_pool(dir.join("train.jsonl"), &Pool::Labeled(pools.train))?;
            write_pool(dir.join("labeled.jsonl"), &Pool::Labeled(pools.labeled))?;
            write_pool(dir.join("unlabeled.jsonl"), &Pool::Unlabeled(pools.unlabeled))?;
            write_pool(dir.join("holdout.jsonl"), &Pool::Labeled(pools.holdout))?;
        }
        let d = &outcome.diagnostics;
        log::info!(
            "seed {seed}: {} unlabeled, {} bugs, hold-out accuracy {:.3}, comparison {:.1}s",
            d.pool_size,
            d.total_bugs,
            d.holdout_accuracy,
            d.comparison_seconds
        );
        rows.extend(outcome.results.iter().cloned());
        seeds.push(outcome);
    }
    let report = compare(rows).map_err(Error::stage("eval"))?;
    write(&run_dir.join("report.csv"), &report.render_report_csv())?;
    write(&run_dir.join("summary.csv"), &report.render_summary_csv())?;
    Ok(ExperimentOutcome { report, run_dir, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = ExperimentConfig::default();
        let text = config.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), config);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let config = ExperimentConfig::from_toml("name = \"x\"\nseeds = [3]\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(config.testrank.gnn.k, 100);
        assert_eq!(config.target.stochastic_passes, 100);
        assert_eq!(config.eval.grid_points, 100);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("name = \"x\"\nseeds = [1]\noutput_dir = \"o\"\nfoo = 1\n").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_but_not_parameters() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: PathBuf::from("elsewhere"),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.testrank.gnn.k = 7;
        assert_ne!(a.hash(), c.hash());
        assert!(a.run_dir().ends_with(format!("default-{}", a.hash())));
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_eq!(derive_seed(4, 3), derive_seed(4, 3));
    }
}
