//! Instance pools and the line-delimited dataset format.
//!
//! A pool file starts with one header line followed by one JSON record per
//! instance:
//!
//! ```text
//! {"format":"testrank-pool","version":1,"role":"labeled","classes":2,"feature_dim":3}
//! {"id":0,"feature":[0.1,0.2,1.0],"logits":[2.5,-1.0],"ground_truth_class":0,"binary_flag":1}
//! ```
//!
//! Floats are written in shortest round-trip form, so a written pool reloads
//! bit-for-bit.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "testrank-pool";
pub const FORMAT_VERSION: u32 = 1;

/// One classifier input as seen by the prioritizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    /// Output of the external feature extractor.
    pub feature: Vec<f64>,
    /// Pre-softmax outputs of the target model.
    pub logits: Vec<f64>,
    /// Hidden-layer activation trace, used by surprise adequacy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
    /// Logits from repeated dropout-enabled forward passes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic_logits: Option<Vec<Vec<f64>>>,
}

impl Instance {
    pub fn new(id: u64, feature: Vec<f64>, logits: Vec<f64>) -> Self {
        Instance {
            id,
            feature,
            logits,
            trace: None,
            stochastic_logits: None,
        }
    }

    /// Index of the largest logit; the lowest index wins ties.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Numeric("softmax of empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "softmax input has non-finite entries: {logits:?}"
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shape shared by every instance of a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolDims {
    pub classes: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolRole {
    Labeled,
    Unlabeled,
}

impl std::fmt::Display for PoolRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolRole::Labeled => f.write_str("labeled"),
            PoolRole::Unlabeled => f.write_str("unlabeled"),
        }
    }
}

/// Instances whose ground truth is known, with the target model's
/// correctness flag (1 = predicted correctly).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    dims: PoolDims,
    instances: Vec<Instance>,
    binary_flags: Vec<u8>,
    ground_truth_class: Vec<usize>,
}

impl LabeledPool {
    /// Builds a pool, deriving each flag from the logits and ground truth.
    pub fn new(dims: PoolDims, instances: Vec<Instance>, ground_truth_class: Vec<usize>) -> Result<Self> {
        if instances.len() != ground_truth_class.len() {
            return Err(Error::Validation(format!(
                "{} instances but {} ground-truth classes",
                instances.len(),
                ground_truth_class.len()
            )));
        }
        let binary_flags = instances
            .iter()
            .zip(&ground_truth_class)
            .map(|(inst, &gt)| u8::from(inst.predicted_class() == gt))
            .collect();
        Self::from_parts(dims, instances, binary_flags, ground_truth_class)
    }

    /// Builds a pool from explicit flags, rejecting any flag inconsistent
    /// with `argmax(logits) == ground_truth_class`.
    pub fn from_parts(
        dims: PoolDims,
        instances: Vec<Instance>,
        binary_flags: Vec<u8>,
        ground_truth_class: Vec<usize>,
    ) -> Result<Self> {
        if binary_flags.len() != instances.len() || ground_truth_class.len() != instances.len() {
            return Err(Error::Validation(format!(
                "labeled pool length mismatch: {} instances, {} flags, {} classes",
                instances.len(),
                binary_flags.len(),
                ground_truth_class.len()
            )));
        }
        validate_instances(dims, &instances)?;
        for ((inst, &flag), &gt) in instances.iter().zip(&binary_flags).zip(&ground_truth_class) {
            if gt >= dims.classes {
                return Err(Error::InstanceValidation {
                    id: inst.id,
                    message: format!("ground_truth_class {gt} out of range for C={}", dims.classes),
                });
            }
            if flag > 1 {
                return Err(Error::InstanceValidation {
                    id: inst.id,
                    message: format!("binary_flag must be 0 or 1, got {flag}"),
                });
            }
            let correct = u8::from(inst.predicted_class() == gt);
            if correct != flag {
                return Err(Error::InstanceValidation {
                    id: inst.id,
                    message: format!(
                        "binary_flag {flag} inconsistent with argmax(logits)={} and ground_truth_class={gt}",
                        inst.predicted_class()
                    ),
                });
            }
        }
        Ok(LabeledPool {
            dims,
            instances,
            binary_flags,
            ground_truth_class,
        })
    }

    pub fn dims(&self) -> PoolDims {
        self.dims
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn binary_flags(&self) -> &[u8] {
        &self.binary_flags
    }

    pub fn ground_truth_class(&self) -> &[usize] {
        &self.ground_truth_class
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Concatenates two labeled pools of identical shape.
    pub fn concat(mut self, other: LabeledPool) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "cannot concatenate pools with dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        self.instances.extend(other.instances);
        self.binary_flags.extend(other.binary_flags);
        self.ground_truth_class.extend(other.ground_truth_class);
        check_unique_ids(&self.instances)?;
        Ok(self)
    }
}

/// Candidate inputs to prioritize. The optional hidden ground truth is an
/// evaluation oracle and is only readable from the `eval` module.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    dims: PoolDims,
    instances: Vec<Instance>,
    hidden_ground_truth: Option<Vec<usize>>,
}

impl UnlabeledPool {
    pub fn new(dims: PoolDims, instances: Vec<Instance>) -> Result<Self> {
        validate_instances(dims, &instances)?;
        Ok(UnlabeledPool {
            dims,
            instances,
            hidden_ground_truth: None,
        })
    }

    pub fn with_hidden_ground_truth(mut self, classes: Vec<usize>) -> Result<Self> {
        if classes.len() != self.instances.len() {
            return Err(Error::Validation(format!(
                "{} instances but {} hidden ground-truth classes",
                self.instances.len(),
                classes.len()
            )));
        }
        if let Some((inst, gt)) = self
            .instances
            .iter()
            .zip(&classes)
            .find(|(_, &gt)| gt >= self.dims.classes)
        {
            return Err(Error::InstanceValidation {
                id: inst.id,
                message: format!("hidden_ground_truth {gt} out of range for C={}", self.dims.classes),
            });
        }
        self.hidden_ground_truth = Some(classes);
        Ok(self)
    }

    pub fn dims(&self) -> PoolDims {
        self.dims
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn has_hidden_ground_truth(&self) -> bool {
        self.hidden_ground_truth.is_some()
    }

    /// Oracle access for evaluation only.
    pub(crate) fn hidden_ground_truth(&self) -> Option<&[usize]> {
        self.hidden_ground_truth.as_deref()
    }
}

/// Either kind of pool, as returned by [`load_pool`].
#[derive(Debug, Clone, PartialEq)]
pub enum Pool {
    Labeled(LabeledPool),
    Unlabeled(UnlabeledPool),
}

impl Pool {
    pub fn into_labeled(self) -> Result<LabeledPool> {
        match self {
            Pool::Labeled(p) => Ok(p),
            Pool::Unlabeled(_) => Err(Error::Validation("expected a labeled pool".into())),
        }
    }

    pub fn into_unlabeled(self) -> Result<UnlabeledPool> {
        match self {
            Pool::Unlabeled(p) => Ok(p),
            Pool::Labeled(_) => Err(Error::Validation("expected an unlabeled pool".into())),
        }
    }
}

fn check_unique_ids(instances: &[Instance]) -> Result<()> {
    let mut seen = HashSet::with_capacity(instances.len());
    for inst in instances {
        if !seen.insert(inst.id) {
            return Err(Error::InstanceValidation {
                id: inst.id,
                message: "duplicate id".into(),
            });
        }
    }
    Ok(())
}

fn validate_instances(dims: PoolDims, instances: &[Instance]) -> Result<()> {
    if dims.classes < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 classes, got {}",
            dims.classes
        )));
    }
    check_unique_ids(instances)?;
    let trace_len = instances.first().and_then(|i| i.trace.as_ref().map(Vec::len));
    for inst in instances {
        let fail = |message: String| Error::InstanceValidation { id: inst.id, message };
        if inst.feature.len() != dims.feature_dim {
            return Err(fail(format!(
                "feature length {} differs from feature_dim {}",
                inst.feature.len(),
                dims.feature_dim
            )));
        }
        if inst.logits.len() != dims.classes {
            return Err(fail(format!(
                "logits length {} differs from C={}",
                inst.logits.len(),
                dims.classes
            )));
        }
        let all_finite = inst.feature.iter().chain(&inst.logits).all(|v| v.is_finite());
        if !all_finite {
            return Err(fail("non-finite feature or logit".into()));
        }
        match (&inst.trace, trace_len) {
            (Some(t), Some(len)) if t.len() == len => {
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(fail("non-finite trace".into()));
                }
            }
            (None, None) => {}
            (Some(t), Some(len)) => {
                return Err(fail(format!("trace length {} differs from {len}", t.len())));
            }
            _ => return Err(fail("trace must be present on all instances or none".into())),
        }
        if let Some(samples) = &inst.stochastic_logits {
            if samples.iter().any(|s| s.len() != dims.classes) {
                return Err(fail("stochastic_logits sample length differs from C".into()));
            }
        }
    }
    Ok(())
}

/// Checks that two pools can be used together in one run.
pub fn validate_run(labeled: &LabeledPool, unlabeled: &UnlabeledPool) -> Result<()> {
    if labeled.dims.classes != unlabeled.dims.classes {
        return Err(Error::Dimension(format!(
            "labeled pool has C={} but unlabeled pool has C={}",
            labeled.dims.classes, unlabeled.dims.classes
        )));
    }
    if labeled.dims.feature_dim != unlabeled.dims.feature_dim {
        return Err(Error::Dimension(format!(
            "labeled feature_dim {} differs from unlabeled feature_dim {}",
            labeled.dims.feature_dim, unlabeled.dims.feature_dim
        )));
    }
    let ids: HashSet<u64> = labeled.instances.iter().map(|i| i.id).collect();
    if let Some(dup) = unlabeled.instances.iter().find(|i| ids.contains(&i.id)) {
        return Err(Error::InstanceValidation {
            id: dup.id,
            message: "id present in both labeled and unlabeled pools".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    role: PoolRole,
    classes: usize,
    feature_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    feature: Vec<f64>,
    logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stochastic_logits: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    binary_flag: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_ground_truth: Option<usize>,
}

impl Record {
    fn into_instance(self) -> Instance {
        Instance {
            id: self.id,
            feature: self.feature,
            logits: self.logits,
            trace: self.trace,
            stochastic_logits: self.stochastic_logits,
        }
    }

    fn from_instance(inst: &Instance) -> Self {
        Record {
            id: inst.id,
            feature: inst.feature.clone(),
            logits: inst.logits.clone(),
            trace: inst.trace.clone(),
            stochastic_logits: inst.stochastic_logits.clone(),
            ground_truth_class: None,
            binary_flag: None,
            hidden_ground_truth: None,
        }
    }
}

/// Parses a pool from its text form. `expected` rejects a file of the other role.
pub fn parse_pool(text: &str, expected: Option<PoolRole>) -> Result<Pool> {
    parse_lines(text.lines().map(|l| Ok(l.to_owned())), expected)
}

/// Loads and validates a pool file.
pub fn load_pool(path: impl AsRef<Path>, role: PoolRole) -> Result<Pool> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(file).lines().map(|l| l.map_err(|e| Error::io(path, e)));
    parse_lines(lines, Some(role))
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<LabeledPool> {
    load_pool(path, PoolRole::Labeled)?.into_labeled()
}

pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<UnlabeledPool> {
    load_pool(path, PoolRole::Unlabeled)?.into_unlabeled()
}

fn parse_lines(lines: impl Iterator<Item = Result<String>>, expected: Option<PoolRole>) -> Result<Pool> {
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if header.is_none() {
            let h: Header = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad header: {e}"),
            })?;
            if h.format != FORMAT_NAME {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown format {:?}", h.format),
                });
            }
            if h.version != FORMAT_VERSION {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unsupported format version {}", h.version),
                });
            }
            if let Some(role) = expected {
                if role != h.role {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("expected a {role} pool, file declares {}", h.role),
                    });
                }
            }
            header = Some(h);
            continue;
        }
        let rec: Record = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, rec));
    }
    let header = header.ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let dims = PoolDims {
        classes: header.classes,
        feature_dim: header.feature_dim,
    };

    match header.role {
        PoolRole::Labeled => {
            let mut instances = Vec::with_capacity(records.len());
            let mut flags = Vec::with_capacity(records.len());
            let mut classes = Vec::with_capacity(records.len());
            for (line, rec) in records {
                let (Some(gt), Some(flag)) = (rec.ground_truth_class, rec.binary_flag) else {
                    return Err(Error::Parse {
                        line,
                        message: "labeled record needs ground_truth_class and binary_flag".into(),
                    });
                };
                if rec.hidden_ground_truth.is_some() {
                    return Err(Error::Parse {
                        line,
                        message: "hidden_ground_truth is only valid in unlabeled pools".into(),
                    });
                }
                classes.push(gt);
                flags.push(flag);
                instances.push(rec.into_instance());
            }
            Ok(Pool::Labeled(LabeledPool::from_parts(dims, instances, flags, classes)?))
        }
        PoolRole::Unlabeled => {
            let mut instances = Vec::with_capacity(records.len());
            let mut hidden = Vec::with_capacity(records.len());
            for (line, rec) in records {
                if rec.ground_truth_class.is_some() || rec.binary_flag.is_some() {
                    return Err(Error::Parse {
                        line,
                        message: "unlabeled record must not carry ground_truth_class or binary_flag".into(),
                    });
                }
                hidden.push(rec.hidden_ground_truth);
                instances.push(rec.into_instance());
            }
            let pool = UnlabeledPool::new(dims, instances)?;
            let present = hidden.iter().filter(|h| h.is_some()).count();
            if present == 0 {
                Ok(Pool::Unlabeled(pool))
            } else if present == hidden.len() {
                let classes = hidden.into_iter().flatten().collect();
                Ok(Pool::Unlabeled(pool.with_hidden_ground_truth(classes)?))
            } else {
                Err(Error::Validation(
                    "hidden_ground_truth must be present on all records or none".into(),
                ))
            }
        }
    }
}

fn header_line(role: PoolRole, dims: PoolDims) -> String {
    let header = Header {
        format: FORMAT_NAME.to_owned(),
        version: FORMAT_VERSION,
        role,
        classes: dims.classes,
        feature_dim: dims.feature_dim,
    };
    serde_json::to_string(&header).expect("header serializes")
}

/// Renders a pool in the canonical text form.
pub fn render_pool(pool: &Pool) -> String {
    fn push(out: &mut String, rec: &Record) {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    let mut out = String::new();
    match pool {
        Pool::Labeled(p) => {
            out.push_str(&header_line(PoolRole::Labeled, p.dims));
            out.push('\n');
            for ((inst, &flag), &gt) in p.instances.iter().zip(&p.binary_flags).zip(&p.ground_truth_class) {
                let mut rec = Record::from_instance(inst);
                rec.ground_truth_class = Some(gt);
                rec.binary_flag = Some(flag);
                push(&mut out, &rec);
            }
        }
        Pool::Unlabeled(p) => {
            out.push_str(&header_line(PoolRole::Unlabeled, p.dims));
            out.push('\n');
            for (i, inst) in p.instances.iter().enumerate() {
                let mut rec = Record::from_instance(inst);
                rec.hidden_ground_truth = p.hidden_ground_truth.as_ref().map(|h| h[i]);
                push(&mut out, &rec);
            }
        }
    }
    out
}

pub fn write_pool(path: impl AsRef<Path>, pool: &Pool) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(render_pool(pool).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// A budget of instances to select, `1 <= b <= pool size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget(usize);

impl Budget {
    pub fn new(b: usize, pool_size: usize) -> Result<Self> {
        if b == 0 || b > pool_size {
            return Err(Error::InvalidArgument(format!("budget {b} outside [1, {pool_size}]")));
        }
        Ok(Budget(b))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELED: &str = r#"{"format":"testrank-pool","version":1,"role":"labeled","classes":2,"feature_dim":2}
{"id":0,"feature":[1.0,0.0],"logits":[2.0,-1.0],"ground_truth_class":0,"binary_flag":1}
{"id":1,"feature":[0.0,1.0],"logits":[-1.0,3.0],"ground_truth_class":0,"binary_flag":0}
{"id":2,"feature":[0.5,0.5],"logits":[0.0,1.0],"ground_truth_class":1,"binary_flag":1}
"#;

    #[test]
    fn loads_minimal_labeled_pool() {
        let pool = parse_pool(LABELED, Some(PoolRole::Labeled))
            .unwrap()
            .into_labeled()
            .unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.binary_flags(), &[1, 0, 1]);
        assert_eq!(pool.ground_truth_class(), &[0, 0, 1]);
    }

    #[test]
    fn canonical_file_round_trips() {
        let pool = parse_pool(LABELED, None).unwrap();
        assert_eq!(render_pool(&pool), LABELED);
    }

    #[test]
    fn inconsistent_flag_is_rejected() {
        let text = LABELED.replace(
            r#""ground_truth_class":0,"binary_flag":0"#,
            r#""ground_truth_class":0,"binary_flag":1"#,
        );
        let err = parse_pool(&text, None).unwrap_err();
        assert!(matches!(err, Error::InstanceValidation { id: 1, .. }), "{err}");
    }

    #[test]
    fn mixed_feature_lengths_are_rejected() {
        let text = LABELED.replace(r#""feature":[0.5,0.5]"#, r#""feature":[0.5,0.5,0.5]"#);
        let err = parse_pool(&text, None).unwrap_err();
        assert!(matches!(err, Error::InstanceValidation { id: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = LABELED.replace(r#"{"id":1,"#, r#"{"id":1,,"#);
        match parse_pool(&text, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn role_mismatch_is_rejected() {
        assert!(parse_pool(LABELED, Some(PoolRole::Unlabeled)).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    fn unlabeled(classes: usize, ids: &[u64]) -> UnlabeledPool {
        let dims = PoolDims {
            classes,
            feature_dim: 2,
        };
        let instances = ids
            .iter()
            .map(|&id| Instance::new(id, vec![1.0, 2.0], vec![0.0; classes]))
            .collect();
        UnlabeledPool::new(dims, instances).unwrap()
    }

    fn labeled(classes: usize, ids: &[u64]) -> LabeledPool {
        let dims = PoolDims {
            classes,
            feature_dim: 2,
        };
        let instances = ids
            .iter()
            .map(|&id| Instance::new(id, vec![1.0, 2.0], vec![0.0; classes]))
            .collect();
        LabeledPool::new(dims, instances, vec![0; ids.len()]).unwrap()
    }

    #[test]
    fn validate_run_cases() {
        assert!(validate_run(&labeled(2, &[0, 1]), &unlabeled(2, &[2, 3])).is_ok());
        assert!(matches!(
            validate_run(&labeled(10, &[0, 1]), &unlabeled(2, &[2, 3])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            validate_run(&labeled(2, &[7, 1]), &unlabeled(2, &[7, 3])),
            Err(Error::InstanceValidation { id: 7, .. })
        ));
    }

    #[test]
    fn budget_bounds() {
        assert!(Budget::new(0, 5).is_err());
        assert!(Budget::new(6, 5).is_err());
        assert_eq!(Budget::new(5, 5).unwrap().get(), 5);
    }

    #[test]
    fn partial_traces_are_rejected() {
        let dims = PoolDims {
            classes: 2,
            feature_dim: 1,
        };
        let mut a = Instance::new(0, vec![1.0], vec![0.0, 1.0]);
        a.trace = Some(vec![0.5]);
        let b = Instance::new(1, vec![1.0], vec![0.0, 1.0]);
        assert!(UnlabeledPool::new(dims, vec![a, b]).is_err());
    }
}
