use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterRole {
    #[default]
    Normal,
    /// Kept out of the target model's training data.
    RemoteBugSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub center: [f64; 2],
    pub stdev: f64,
    pub class: usize,
    pub count: usize,
    #[serde(default)]
    pub role: ClusterRole,
}

/// Gaussian-cluster scenario and how its samples are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub clusters: Vec<ClusterSpec>,
    /// Fraction of the debugging pool whose labels are known.
    pub labeled_fraction: f64,
    /// Fraction of normal-cluster samples used to train the target model.
    pub train_fraction: f64,
    /// Fraction of normal-cluster samples held out from every pool.
    pub holdout_fraction: f64,
    /// Constant third coordinate appended to each point before cosine
    /// similarity is taken. Zero keeps the raw 2-D coordinates.
    pub feature_lift: f64,
    /// Extra feature coordinates of independent Gaussian noise per sample,
    /// standing in for the nuisance dimensions of a learned embedding.
    #[serde(default)]
    pub nuisance_dims: usize,
    #[serde(default)]
    pub nuisance_stdev: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let cluster = |x: f64, y: f64, class| ClusterSpec {
            center: [x, y],
            stdev: 0.8,
            class,
            count: 1000,
            role: ClusterRole::Normal,
        };
        SyntheticSpec {
            n_classes: 2,
            clusters: vec![
                cluster(-1.0, 1.5, 0),
                cluster(-1.0, -1.5, 0),
                cluster(1.0, 1.5, 1),
                cluster(1.0, -1.5, 1),
                ClusterSpec {
                    center: [4.5, 0.0],
                    stdev: 0.5,
                    class: 0,
                    count: 400,
                    role: ClusterRole::RemoteBugSource,
                },
            ],
            labeled_fraction: 0.2,
            train_fraction: 0.3,
            holdout_fraction: 0.1,
            feature_lift: 3.0,
            nuisance_dims: 16,
            nuisance_stdev: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.count == 0 {
                return bad(format!("cluster {i} has no points"));
            }
            if !(c.stdev > 0.0 && c.stdev.is_finite()) || c.center.iter().any(|v| !v.is_finite()) {
                return bad(format!("cluster {i} has an invalid center or stdev"));
            }
            if c.class >= self.n_classes {
                return bad(format!(
                    "cluster {i} has class {} but n_classes = {}",
                    c.class, self.n_classes
                ));
            }
        }
        for class in 0..self.n_classes {
            if !self
                .clusters
                .iter()
                .any(|c| c.class == class && c.role == ClusterRole::Normal)
            {
                return bad(format!("class {class} has no normal cluster"));
            }
        }
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !frac(self.labeled_fraction) || !frac(self.train_fraction) {
            return bad("labeled_fraction and train_fraction must lie in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || self.train_fraction + self.holdout_fraction >= 1.0 {
            return bad("holdout_fraction must be in [0, 1) and leave room for a debugging pool".into());
        }
        if !self.feature_lift.is_finite() {
            return bad("feature_lift must be finite".into());
        }
        if !(self.nuisance_stdev >= 0.0 && self.nuisance_stdev.is_finite()) {
            return bad("nuisance_stdev must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        2 + usize::from(self.feature_lift != 0.0) + self.nuisance_dims
    }

    /// Feature vector the prioritizer sees for a sample. Nuisance
    /// coordinates are a pure function of the spec seed and the sample id.
    pub fn feature(&self, sample: &Sample) -> Vec<f64> {
        let mut f = sample.point.to_vec();
        if self.feature_lift != 0.0 {
            f.push(self.feature_lift);
        }
        if self.nuisance_dims > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e75_6973_616e_6365);
            rng.set_stream(sample.id);
            let noise = Normal::new(0.0, self.nuisance_stdev).expect("validated stdev");
            f.extend((0..self.nuisance_dims).map(|_| noise.sample(&mut rng)));
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Holdout,
    Labeled,
    Unlabeled,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub point: [f64; 2],
    pub class: usize,
    /// Index into the spec's cluster list.
    pub cluster: usize,
    pub split: Split,
}

/// Generated samples, grouped by split and ordered by id within each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<Sample>,
    pub holdout: Vec<Sample>,
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
}

impl SyntheticData {
    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train
            .iter()
            .chain(&self.holdout)
            .chain(&self.labeled)
            .chain(&self.unlabeled)
    }

    /// `id,split,cluster,class,x,y` CSV text.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("id,split,cluster,class,x,y\n");
        let mut all: Vec<&Sample> = self.all().collect();
        all.sort_by_key(|s| s.id);
        for s in all {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.id,
                s.split.as_str(),
                s.cluster,
                s.class,
                s.point[0],
                s.point[1]
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut data = SyntheticData {
            train: vec![],
            holdout: vec![],
            labeled: vec![],
            unlabeled: vec![],
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "id,split,cluster,class,x,y")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header id,split,cluster,class,x,y".into(),
                })
            }
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let int = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
            let split = match cols[1] {
                "train" => Split::Train,
                "holdout" => Split::Holdout,
                "labeled" => Split::Labeled,
                "unlabeled" => Split::Unlabeled,
                other => return Err(err(format!("unknown split {other:?}"))),
            };
            let sample = Sample {
                id: int(cols[0])?,
                split,
                cluster: int(cols[2])? as usize,
                class: int(cols[3])? as usize,
                point: [num(cols[4])?, num(cols[5])?],
            };
            match split {
                Split::Train => data.train.push(sample),
                Split::Holdout => data.holdout.push(sample),
                Split::Labeled => data.labeled.push(sample),
                Split::Unlabeled => data.unlabeled.push(sample),
            }
        }
        Ok(data)
    }
}

/// Samples every cluster, shuffles, assigns ids in shuffled order and splits
/// into train / hold-out / labeled / unlabeled. Remote-bug clusters go to the
/// debugging pool only.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw: Vec<([f64; 2], usize, usize)> = Vec::new();
    for (ci, c) in spec.clusters.iter().enumerate() {
        let noise = Normal::new(0.0, c.stdev).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..c.count {
            let p = [
                c.center[0] + noise.sample(&mut rng),
                c.center[1] + noise.sample(&mut rng),
            ];
            raw.push((p, c.class, ci));
        }
    }
    raw.shuffle(&mut rng);

    let is_remote = |ci: usize| spec.clusters[ci].role == ClusterRole::RemoteBugSource;
    let normal = raw.iter().filter(|r| !is_remote(r.2)).count();
    let n_train = ((spec.train_fraction * normal as f64).round() as usize).clamp(1, normal);
    let n_holdout = ((spec.holdout_fraction * normal as f64).round() as usize).min(normal - n_train);
    let debug = raw.len() - n_train - n_holdout;
    let n_labeled = ((spec.labeled_fraction * debug as f64).round() as usize).clamp(1, debug.saturating_sub(1));

    let mut data = SyntheticData {
        train: vec![],
        holdout: vec![],
        labeled: vec![],
        unlabeled: vec![],
    };
    let (mut seen_normal, mut seen_debug) = (0, 0);
    for (id, (point, class, cluster)) in raw.into_iter().enumerate() {
        let split = if !is_remote(cluster) && seen_normal < n_train + n_holdout {
            seen_normal += 1;
            if seen_normal <= n_train {
                Split::Train
            } else {
                Split::Holdout
            }
        } else {
            seen_debug += 1;
            if seen_debug <= n_labeled {
                Split::Labeled
            } else {
                Split::Unlabeled
            }
        };
        let s = Sample {
            id: id as u64,
            point,
            class,
            cluster,
            split,
        };
        match split {
            Split::Train => data.train.push(s),
            Split::Holdout => data.holdout.push(s),
            Split::Labeled => data.labeled.push(s),
            Split::Unlabeled => data.unlabeled.push(s),
        }
    }
    for class in 0..spec.n_classes {
        if !data.train.iter().any(|s| s.class == class) {
            return Err(Error::Validation(format!("class {class} has no training samples")));
        }
    }
    if data.unlabeled.is_empty() {
        return Err(Error::Validation("scenario leaves no unlabeled instances".into()));
    }
    Ok(data)
}
