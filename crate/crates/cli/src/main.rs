use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use testrank::baselines::{baseline_ranking, run_baseline, BaselineConfig, BaselineMethod, DsaVariant};
use testrank::data::{load_labeled, load_unlabeled, write_pool, Budget, Pool};
use testrank::eval::{budget_grid, bug_flags, compare, evaluate};
use testrank::harness::experiment::derive_seed;
use testrank::harness::{build_pools, fit_target, generate, run_experiment, ExperimentConfig, SyntheticData};
use testrank::nn::checkpoint::save_tensors;
use testrank::nn::train::render_loss_history;
use testrank::testrank::{run_testrank, select, AttributeSet, IntrinsicMode, TestRankConfig};

#[derive(Parser)]
#[command(
    name = "testrank",
    version,
    about = "Prioritize unlabeled test inputs by predicted bug-revealing capability"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the synthetic scenario and write its points as CSV.
    Gen(GenArgs),
    /// Train the toy target on generated samples and write the pools.
    Fit(FitArgs),
    /// Rank an unlabeled pool with TestRank.
    Rank(RankArgs),
    /// Rank an unlabeled pool with a baseline method.
    Baseline(BaselineArgs),
    /// Score rankings against the pool's ground truth.
    Eval(EvalArgs),
    /// Run the full multi-seed comparison from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Must match the seed given to `gen`.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    samples: PathBuf,
    /// Receives train/labeled/unlabeled/holdout pools and the target checkpoint.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Intrinsic {
    Logits,
    Probabilities,
}

#[derive(Clone, Copy, ValueEnum)]
enum Attributes {
    Both,
    ContextualZeroed,
    ContextualNarrow,
}

#[derive(Args)]
struct RankArgs {
    /// Experiment config whose `testrank` section supplies the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    unlabeled: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Build the graph over all pairs instead of the approximation.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    gnn_epochs: Option<usize>,
    #[arg(long)]
    mlp_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    intrinsic: Option<Intrinsic>,
    #[arg(long, value_enum)]
    attributes: Option<Attributes>,
    /// Print the first `budget` selected ids.
    #[arg(long)]
    budget: Option<usize>,
    /// Write the symmetric similarity graph as `i,j,weight` CSV.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Write the trained GNN parameters.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the per-epoch GNN loss as CSV.
    #[arg(long)]
    loss_history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dsa {
    Paper,
    Original,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    method: String,
    #[arg(long)]
    unlabeled: PathBuf,
    /// Training pool with activation traces (DSA only).
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    dsa_variant: Dsa,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Unlabeled pool carrying the withheld ground truth.
    #[arg(long)]
    unlabeled: PathBuf,
    /// `method=path` pairs of ranking CSVs.
    #[arg(long = "ranking", required = true)]
    rankings: Vec<String>,
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Recorded in the report's seed column.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn labeled(path: &Path) -> Result<testrank::data::LabeledPool> {
    load_labeled(path).with_context(|| format!("loading {}", path.display()))
}

fn unlabeled(path: &Path) -> Result<testrank::data::UnlabeledPool> {
    load_unlabeled(path).with_context(|| format!("loading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(args: GenArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let spec = testrank::harness::SyntheticSpec {
        seed: config.scenario.seed ^ derive_seed(args.seed, 1),
        ..config.scenario
    };
    let data = generate(&spec)?;
    write(&args.out, &data.render_csv())?;
    println!(
        "train {} holdout {} labeled {} unlabeled {}",
        data.train.len(),
        data.holdout.len(),
        data.labeled.len(),
        data.unlabeled.len()
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let spec = testrank::harness::SyntheticSpec {
        seed: config.scenario.seed ^ derive_seed(args.seed, 1),
        ..config.scenario
    };
    let target = testrank::harness::TargetConfig {
        seed: config.target.seed ^ derive_seed(args.seed, 2),
        ..config.target
    };
    let text = fs::read_to_string(&args.samples).with_context(|| format!("reading {}", args.samples.display()))?;
    let data = SyntheticData::parse_csv(&text)?;
    let model = fit_target(&data.train, spec.n_classes, &target)?;
    let pools = build_pools(&data, &spec, &model, &target)?;
    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    write_pool(dir.join("train.jsonl"), &Pool::Labeled(pools.train))?;
    write_pool(dir.join("labeled.jsonl"), &Pool::Labeled(pools.labeled))?;
    write_pool(dir.join("unlabeled.jsonl"), &Pool::Unlabeled(pools.unlabeled))?;
    if !data.holdout.is_empty() {
        write_pool(dir.join("holdout.jsonl"), &Pool::Labeled(pools.holdout))?;
        println!("hold-out accuracy {:.4}", model.accuracy(&data.holdout)?);
    }
    let names = model.mlp.param_names("target");
    let tensors: Vec<_> = names.into_iter().zip(model.mlp.params()).collect();
    save_tensors(dir.join("target.ckpt"), &tensors)?;
    Ok(())
}

fn rank(args: RankArgs) -> Result<()> {
    let mut config: TestRankConfig = load_config(args.config.as_deref())?.testrank;
    if let Some(k) = args.k {
        config.gnn.k = k;
    }
    if args.exact {
        config.gnn.approx = false;
    }
    if let Some(e) = args.gnn_epochs {
        config.gnn.train.epochs = e;
    }
    if let Some(e) = args.mlp_epochs {
        config.mlp.train.epochs = e;
    }
    if let Some(seed) = args.seed {
        config.gnn.train.seed = seed;
        config.mlp.train.seed = seed;
    }
    if let Some(i) = args.intrinsic {
        config.intrinsic = match i {
            Intrinsic::Logits => IntrinsicMode::Logits,
            Intrinsic::Probabilities => IntrinsicMode::Probabilities,
        };
    }
    if let Some(a) = args.attributes {
        config.attributes = match a {
            Attributes::Both => AttributeSet::Both,
            Attributes::ContextualZeroed => AttributeSet::ContextualZeroed,
            Attributes::ContextualNarrow => AttributeSet::ContextualNarrow,
        };
    }
    let labeled = labeled(&args.labeled)?;
    let unlabeled = unlabeled(&args.unlabeled)?;
    let out = run_testrank(&labeled, &unlabeled, &config)?;
    write(&args.out, &out.ranking.render_csv())?;
    if let Some(path) = &args.edges {
        write(path, &out.contextual.graph.render_edge_list())?;
    }
    if let Some(path) = &args.checkpoint {
        let model = &out.contextual.model;
        let tensors: Vec<_> = model.param_names().into_iter().zip(model.params()).collect();
        save_tensors(path, &tensors)?;
    }
    if let Some(path) = &args.loss_history {
        write(path, &render_loss_history(&out.contextual.loss_history))?;
    }
    if let Some(b) = args.budget {
        let ids = select(&out.ranking, Budget::new(b, unlabeled.len())?)?;
        let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
        println!("{}", ids.join(","));
    }
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let method: BaselineMethod = args.method.parse()?;
    let unlabeled = unlabeled(&args.unlabeled)?;
    let reference = args.reference.as_deref().map(labeled).transpose()?;
    let config = BaselineConfig {
        dsa_variant: match args.dsa_variant {
            Dsa::Paper => DsaVariant::Paper,
            Dsa::Original => DsaVariant::Original,
        },
        random_seed: args.seed,
    };
    let score = run_baseline(method, &unlabeled, reference.as_ref(), &config)?;
    write(&args.out, &baseline_ranking(score, &unlabeled)?.render_csv())?;
    Ok(())
}

/// Reads a `rank,id,score` CSV into pool positions, best first.
fn read_order(path: &Path, ids: &[u64]) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let position: std::collections::HashMap<u64, usize> = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let mut lines = text.lines();
    if lines.next() != Some("rank,id,score") {
        bail!("{}: expected header rank,id,score", path.display());
    }
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            bail!("{}:{}: expected 3 columns", path.display(), n + 2);
        }
        let rank: usize = cols[0]
            .parse()
            .with_context(|| format!("{}:{}", path.display(), n + 2))?;
        let id: u64 = cols[1]
            .parse()
            .with_context(|| format!("{}:{}", path.display(), n + 2))?;
        let pos = *position
            .get(&id)
            .with_context(|| format!("{}: id {id} is not in the unlabeled pool", path.display()))?;
        rows.push((rank, pos));
    }
    rows.sort_unstable();
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

fn eval(args: EvalArgs) -> Result<()> {
    let unlabeled = unlabeled(&args.unlabeled)?;
    let ids: Vec<u64> = unlabeled.instances().iter().map(|i| i.id).collect();
    let bugs = bug_flags(&unlabeled)?;
    let grid = budget_grid(unlabeled.len(), args.grid_points)?;
    let mut rows = Vec::new();
    for spec in &args.rankings {
        let (method, path) = spec
            .split_once('=')
            .with_context(|| format!("expected method=path, got {spec:?}"))?;
        let order = read_order(Path::new(path), &ids)?;
        let ranking = testrank::testrank::Ranking::from_order(order, ids.clone())?;
        let result = evaluate(method, args.seed, &ranking, &bugs, &grid)?;
        write(
            &args.out_dir.join(format!("curve_{method}.csv")),
            &result.curve.render_csv(),
        )?;
        rows.push(result);
    }
    let report = compare(rows)?;
    write(&args.out_dir.join("report.csv"), &report.render_report_csv())?;
    print!("{}", report.render_report_csv());
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    let outcome = run_experiment(&config)?;
    println!("run directory: {}", outcome.run_dir.display());
    print!("{}", outcome.report.render_summary_csv());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit(a),
        Command::Rank(a) => rank(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
    }
}
