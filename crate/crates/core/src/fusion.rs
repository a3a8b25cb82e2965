//! Weighted fusion of several classifiers' posteriors.
//!
//! Each classifier contributes one row of a k×m decision matrix. The fused
//! score of class `l` is `sum_i w_i * p_il`; the decision is the class with
//! the largest fused score.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::gbdt::GbdtModel;
use crate::posterior::{argmax_class, PosteriorVector, POSTERIOR_SUM_TOLERANCE};

/// Rows of a posterior table may deviate this much from 1 before rejection;
/// accepted rows are renormalized.
pub const TABLE_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMatrix {
    classifier_ids: Vec<String>,
    rows: Vec<PosteriorVector>,
}

impl DecisionMatrix {
    pub fn new(classifier_ids: Vec<String>, rows: Vec<PosteriorVector>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidPosterior("decision matrix needs at least one row".into()));
        }
        if classifier_ids.len() != rows.len() {
            return Err(Error::ArityMismatch { expected: rows.len(), actual: classifier_ids.len() });
        }
        let m = rows[0].class_count();
        if let Some(bad) = rows.iter().find(|r| r.class_count() != m) {
            return Err(Error::ArityMismatch { expected: m, actual: bad.class_count() });
        }
        Ok(DecisionMatrix { classifier_ids, rows })
    }

    pub fn classifier_ids(&self) -> &[String] {
        &self.classifier_ids
    }

    pub fn rows(&self) -> &[PosteriorVector] {
        &self.rows
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn class_count(&self) -> usize {
        self.rows[0].class_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::Config(format!("fusion weights must be >= 0 and not all zero: {w:?}")));
        }
        Ok(FusionWeights(w))
    }

    /// The static average: `1/k` for every classifier.
    pub fn uniform(k: usize) -> Self {
        FusionWeights(vec![1.0 / k as f64; k.max(1)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for FusionWeights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        FusionWeights::new(w)
    }
}

impl From<FusionWeights> for Vec<f64> {
    fn from(w: FusionWeights) -> Self {
        w.0
    }
}

/// Class-wise weighted sum of the matrix rows.
pub fn fuse(dm: &DecisionMatrix, w: &FusionWeights) -> Result<Vec<f64>> {
    if w.len() != dm.k() {
        return Err(Error::ArityMismatch { expected: dm.k(), actual: w.len() });
    }
    let mut scores = vec![0.0; dm.class_count()];
    for (row, &wi) in dm.rows.iter().zip(&w.0) {
        for (s, &p) in scores.iter_mut().zip(row.probs()) {
            *s += wi * p;
        }
    }
    Ok(scores)
}

/// Highest fused score, lowest index on ties.
pub fn decide(scores: &[f64]) -> usize {
    argmax_class(scores)
}

/// One networked-classifier stand-in.
#[derive(Debug, Clone)]
pub enum ClassifierOracle {
    /// Precomputed posteriors keyed by sample id.
    Table { name: String, class_count: usize, rows: HashMap<String, PosteriorVector> },
    /// A model evaluated on the sample's features.
    Model { name: String, model: GbdtModel },
}

impl ClassifierOracle {
    pub fn name(&self) -> &str {
        match self {
            ClassifierOracle::Table { name, .. } | ClassifierOracle::Model { name, .. } => name,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            ClassifierOracle::Table { class_count, .. } => *class_count,
            ClassifierOracle::Model { model, .. } => model.class_count(),
        }
    }

    pub fn predict(&self, sample: &Sample) -> Result<PosteriorVector> {
        match self {
            ClassifierOracle::Table { name, rows, .. } => {
                rows.get(&sample.id).cloned().ok_or_else(|| Error::MissingPrediction {
                    id: sample.id.clone(),
                    oracle: name.clone(),
                })
            }
            ClassifierOracle::Model { model, .. } => model.predict_proba(sample),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub scores: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    oracles: Vec<ClassifierOracle>,
    weights: FusionWeights,
}

impl Ensemble {
    /// Uniform `1/k` weights.
    pub fn new(oracles: Vec<ClassifierOracle>) -> Result<Self> {
        let k = oracles.len();
        Ensemble::with_weights(oracles, FusionWeights::uniform(k))
    }

    pub fn with_weights(oracles: Vec<ClassifierOracle>, weights: FusionWeights) -> Result<Self> {
        if oracles.is_empty() {
            return Err(Error::Config("ensemble needs at least one oracle".into()));
        }
        if weights.len() != oracles.len() {
            return Err(Error::ArityMismatch { expected: oracles.len(), actual: weights.len() });
        }
        let m = oracles[0].class_count();
        if let Some(bad) = oracles.iter().find(|o| o.class_count() != m) {
            return Err(Error::ArityMismatch { expected: m, actual: bad.class_count() });
        }
        Ok(Ensemble { oracles, weights })
    }

    pub fn oracles(&self) -> &[ClassifierOracle] {
        &self.oracles
    }

    pub fn weights(&self) -> &FusionWeights {
        &self.weights
    }

    pub fn class_count(&self) -> usize {
        self.oracles[0].class_count()
    }

    pub fn decision_matrix(&self, sample: &Sample) -> Result<DecisionMatrix> {
        let rows = self.oracles.iter().map(|o| o.predict(sample)).collect::<Result<Vec<_>>>()?;
        let ids = self.oracles.iter().map(|o| o.name().to_string()).collect();
        DecisionMatrix::new(ids, rows)
    }

    pub fn predict(&self, sample: &Sample) -> Result<FusedPrediction> {
        let scores = fuse(&self.decision_matrix(sample)?, &self.weights)?;
        let class = decide(&scores);
        Ok(FusedPrediction { scores, class })
    }
}

pub fn ensemble_predict(e: &Ensemble, sample: &Sample) -> Result<FusedPrediction> {
    e.predict(sample)
}

/// Reads `id,model,p0,...,p{m-1}` and returns one table oracle per distinct
/// `model` value, in order of first appearance.
pub fn load_posterior_tables(path: impl AsRef<Path>) -> Result<Vec<ClassifierOracle>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| crate::data::csv_error(path, e))?;
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    let m = header.len().saturating_sub(2);
    if m < 1 || &header[0] != "id" || &header[1] != "model" || header.iter().skip(2).enumerate().any(|(j, h)| h != format!("p{j}")) {
        return Err(Error::MalformedRow { line: 1, reason: "header must be id,model,p0,...".into() });
    }

    let mut order: Vec<String> = Vec::new();
    let mut tables: HashMap<String, HashMap<String, PosteriorVector>> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::MalformedRow { line, reason: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let id = record[0].to_string();
        let model = record[1].to_string();
        let probs = record
            .iter()
            .skip(2)
            .map(|raw| {
                raw.parse::<f64>().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("probability `{raw}` is not numeric"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > TABLE_SUM_TOLERANCE || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::RowNotNormalized { id, sum });
        }
        let probs = if (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
            probs.into_iter().map(|p| p / sum).collect()
        } else {
            probs
        };
        let pv = PosteriorVector::new(probs)?;
        let table = tables.entry(model.clone()).or_insert_with(|| {
            order.push(model.clone());
            HashMap::new()
        });
        if table.insert(id.clone(), pv).is_some() {
            return Err(Error::DuplicateKey { id, model });
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let rows = tables.remove(&name).unwrap_or_default();
            ClassifierOracle::Table { name, class_count: m, rows }
        })
        .collect())
}

/// Loads a table file that holds exactly one classifier.
pub fn load_posterior_table(path: impl AsRef<Path>) -> Result<ClassifierOracle> {
    let mut oracles = load_posterior_tables(path.as_ref())?;
    match oracles.len() {
        1 => Ok(oracles.remove(0)),
        n => Err(Error::Config(format!(
            "{}: expected one classifier, found {n}",
            path.as_ref().display()
        ))),
    }
}

/// One posterior-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRow {
    pub id: String,
    pub model: String,
    pub probs: Vec<f64>,
}

pub fn save_posterior_table(path: impl AsRef<Path>, rows: &[PosteriorRow]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let m = rows.first().map_or(0, |r| r.probs.len());
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut header = String::from("id,model");
    for j in 0..m {
        header.push_str(&format!(",p{j}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for row in rows {
        if row.probs.len() != m {
            return Err(Error::ArityMismatch { expected: m, actual: row.probs.len() });
        }
        write!(out, "{},{}", row.id, row.model).map_err(io)?;
        for p in &row.probs {
            write!(out, ",{p:?}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Source of one ensemble member in an ensemble manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleSource {
    /// A posterior table; `model` selects one classifier from a multi-model file.
    Table { path: PathBuf, #[serde(default)] model: Option<String> },
    Model { path: PathBuf, #[serde(default)] name: Option<String> },
}

/// JSON description of an ensemble. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub oracles: Vec<OracleSource>,
    #[serde(default)]
    pub weights: Option<FusionWeights>,
}

impl EnsembleManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn build(&self, base_dir: &Path) -> Result<Ensemble> {
        let mut oracles = Vec::with_capacity(self.oracles.len());
        for source in &self.oracles {
            match source {
                OracleSource::Table { path, model } => {
                    let tables = load_posterior_tables(base_dir.join(path))?;
                    match model {
                        Some(model) => oracles.push(
                            tables.into_iter().find(|o| o.name() == model).ok_or_else(|| {
                                Error::Config(format!("{}: no classifier `{model}`", path.display()))
                            })?,
                        ),
                        None => oracles.extend(tables),
                    }
                }
                OracleSource::Model { path, name } => {
                    let model = GbdtModel::load(base_dir.join(path))?;
                    let name = name.clone().unwrap_or_else(|| path.display().to_string());
                    oracles.push(ClassifierOracle::Model { name, model });
                }
            }
        }
        match &self.weights {
            Some(w) => Ensemble::with_weights(oracles, w.clone()),
            None => Ensemble::new(oracles),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(p: &[f64]) -> PosteriorVector {
        PosteriorVector::new(p.to_vec()).unwrap()
    }

    fn table(name: &str, rows: &[(&str, &[f64])]) -> ClassifierOracle {
        ClassifierOracle::Table {
            name: name.into(),
            class_count: rows[0].1.len(),
            rows: rows.iter().map(|(id, p)| (id.to_string(), pv(p))).collect(),
        }
    }

    #[test]
    fn fuse_examples() {
        let dm = DecisionMatrix::new(vec!["a".into()], vec![pv(&[0.2, 0.8])]).unwrap();
        assert_eq!(fuse(&dm, &FusionWeights::new(vec![1.0]).unwrap()).unwrap(), vec![0.2, 0.8]);

        let dm = DecisionMatrix::new(vec!["a".into(), "b".into()], vec![pv(&[0.9, 0.1]), pv(&[0.5, 0.5])]).unwrap();
        let scores = fuse(&dm, &FusionWeights::uniform(2)).unwrap();
        assert!((scores[0] - 0.7).abs() < 1e-15 && (scores[1] - 0.3).abs() < 1e-15);
        assert_eq!(decide(&scores), 0);
        assert!(matches!(fuse(&dm, &FusionWeights::uniform(3)), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn decide_ties_go_low() {
        assert_eq!(decide(&[0.25; 4]), 0);
        assert_eq!(decide(&[0.7, 0.3]), 0);
    }

    #[test]
    fn weights_validation() {
        assert!(FusionWeights::new(vec![0.0, 0.0]).is_err());
        assert!(FusionWeights::new(vec![-1.0, 2.0]).is_err());
        assert!(FusionWeights::new(vec![0.0, 2.0]).is_ok());
    }

    #[test]
    fn disagreeing_pair_ties_to_lowest_class() {
        let e = Ensemble::new(vec![table("a", &[("s", &[1.0, 0.0])]), table("b", &[("s", &[0.0, 1.0])])]).unwrap();
        let out = e.predict(&Sample::new("s", vec![], None)).unwrap();
        assert_eq!(out.scores, vec![0.5, 0.5]);
        assert_eq!(out.class, 0);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let e = Ensemble::new(vec![table("a", &[("s", &[0.4, 0.6])])]).unwrap();
        let err = e.predict(&Sample::new("t", vec![], None)).unwrap_err();
        assert!(matches!(err, Error::MissingPrediction { ref id, ref oracle } if id == "t" && oracle == "a"));
    }

    #[test]
    fn mismatched_oracle_arity() {
        let a = table("a", &[("s", &[0.4, 0.6])]);
        let b = table("b", &[("s", &[0.2, 0.2, 0.6])]);
        assert!(Ensemble::new(vec![a, b]).is_err());
    }

    #[test]
    fn table_file_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "id,model,p0,p1\na,m,0.3,0.7\nb,m,0.5,0.5\nc,m,1,0\n").unwrap();
        let oracle = load_posterior_table(&path).unwrap();
        assert_eq!(oracle.predict(&Sample::new("c", vec![], None)).unwrap().probs(), &[1.0, 0.0]);

        std::fs::write(&path, "id,model,p0,p1\na,m,0.3,0.5\n").unwrap();
        assert!(matches!(load_posterior_table(&path), Err(Error::RowNotNormalized { .. })));
        std::fs::write(&path, "id,model,p0,p1\na,m,0.3,0.7\na,m,0.3,0.7\n").unwrap();
        assert!(matches!(load_posterior_table(&path), Err(Error::DuplicateKey { .. })));
        std::fs::write(&path, "id,model,p0,p1\na,m,0.3,0.7\na,n,0.3,0.7\n").unwrap();
        assert_eq!(load_posterior_tables(&path).unwrap().len(), 2);
        assert!(load_posterior_table(&path).is_err());
        // small deviations are renormalized
        std::fs::write(&path, "id,model,p0,p1\na,m,0.3,0.7001\n").unwrap();
        let p = load_posterior_table(&path).unwrap().predict(&Sample::new("a", vec![], None)).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn manifest_builds_weighted_ensemble() {
        let dir = tempfile::tempdir().unwrap();
        save_posterior_table(
            dir.path().join("t.csv"),
            &[
                PosteriorRow { id: "s".into(), model: "x".into(), probs: vec![0.9, 0.1] },
                PosteriorRow { id: "s".into(), model: "y".into(), probs: vec![0.2, 0.8] },
            ],
        )
        .unwrap();
        let manifest: EnsembleManifest = serde_json::from_str(
            r#"{"oracles":[{"kind":"table","path":"t.csv"}],"weights":[1.0,3.0]}"#,
        )
        .unwrap();
        let e = manifest.build(dir.path()).unwrap();
        let out = e.predict(&Sample::new("s", vec![], None)).unwrap();
        assert_eq!(out.class, 1);
        assert!((out.scores[1] - 2.5).abs() < 1e-12);
    }
}
