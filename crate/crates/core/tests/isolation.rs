use std::fs;
use std::path::{Path, PathBuf};

use testrank::baselines::score_deepgini;
use testrank::data::softmax;
use testrank::eval::bug_flags;
use testrank::harness::{build_pools, fit_target, generate, SyntheticSpec, TargetConfig};

fn rust_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            rust_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

#[test]
fn only_evaluation_reads_withheld_ground_truth() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut files = Vec::new();
    rust_files(&root.join("src"), &mut files);
    rust_files(&root.join("../cli/src"), &mut files);
    assert!(files.len() > 10);
    let readers: Vec<&PathBuf> = files
        .iter()
        .filter(|f| fs::read_to_string(f).unwrap().contains(".hidden_ground_truth()"))
        .collect();
    assert_eq!(readers.len(), 1, "readers: {readers:?}");
    assert!(readers[0].ends_with("src/eval.rs"));
}

fn small_target() -> TargetConfig {
    TargetConfig {
        stochastic_passes: 2,
        ..TargetConfig::default()
    }
}

#[test]
fn holdout_never_reaches_a_ranking_pool() {
    let spec = SyntheticSpec {
        seed: 3,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).unwrap();
    let model = fit_target(&data.train, 2, &small_target()).unwrap();
    let pools = build_pools(&data, &spec, &model, &small_target()).unwrap();
    let holdout: std::collections::HashSet<u64> = pools.holdout.instances().iter().map(|i| i.id).collect();
    assert_eq!(holdout.len(), data.holdout.len());
    let ranked = pools.labeled.instances().iter().chain(pools.unlabeled.instances());
    assert!(ranked.map(|i| i.id).all(|id| !holdout.contains(&id)));
}

#[test]
fn default_scenario_contains_confident_bugs() {
    for seed in [1, 2] {
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).unwrap();
        let model = fit_target(&data.train, 2, &small_target()).unwrap();
        let pools = build_pools(&data, &spec, &model, &small_target()).unwrap();
        let bugs = bug_flags(&pools.unlabeled).unwrap();
        let probs: Vec<Vec<f64>> = pools
            .unlabeled
            .instances()
            .iter()
            .map(|i| softmax(&i.logits).unwrap())
            .collect();
        let gini = score_deepgini(&probs).unwrap();
        let mut sorted = gini.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let total = bugs.iter().filter(|&&b| b).count();
        let confident = gini.iter().zip(&bugs).filter(|(&g, &b)| b && g < median).count();
        assert!(confident as f64 >= 0.3 * total as f64, "{confident} of {total}");
    }
}

#[test]
fn remote_cluster_is_mostly_misclassified() {
    let spec = SyntheticSpec::default();
    let data = generate(&spec).unwrap();
    let model = fit_target(&data.train, 2, &small_target()).unwrap();
    let remote: Vec<_> = data.all().filter(|s| s.cluster == 4).copied().collect();
    assert!(model.accuracy(&remote).unwrap() <= 0.2);
}

#[test]
fn same_seed_gives_identical_pool_files() {
    let render = || {
        let spec = SyntheticSpec {
            seed: 11,
            nuisance_dims: 4,
            nuisance_stdev: 1.0,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).unwrap();
        let model = fit_target(&data.train, 2, &small_target()).unwrap();
        let pools = build_pools(&data, &spec, &model, &small_target()).unwrap();
        testrank::data::render_pool(&testrank::data::Pool::Unlabeled(pools.unlabeled))
    };
    assert_eq!(render(), render());
}
