//! The routing decision unit.
//!
//! A sample's meta-information is the embedded model's soft prediction. A
//! meta sample is labeled "send" (1) when the embedded and networked models
//! disagree and the networked model is right; otherwise "keep" (0). A binary
//! boosted model is then trained on those labels with every positive's
//! gradient scaled by `epsilon`, so larger `epsilon` routes more traffic to
//! the server.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::fusion::Ensemble;
use crate::gbdt::{self, GbdtModel, Objective, TrainConfig};
use crate::posterior::PosteriorVector;

pub const KEEP: u8 = 0;
pub const SEND: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaRecord {
    pub id: String,
    pub meta: PosteriorVector,
    /// [`KEEP`] or [`SEND`] when known.
    pub routing_label: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    KeepOnClient,
    SendToServer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingDecision {
    pub route: Route,
    /// DU probability of the send class.
    pub du_score: f64,
}

impl RoutingDecision {
    pub fn is_send(&self) -> bool {
        self.route == Route::SendToServer
    }
}

/// Gaussian jitter on meta features, used to enlarge small meta sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaJitter {
    /// Extra jittered copies per record.
    pub copies: usize,
    #[serde(default = "MetaJitter::default_sigma")]
    pub sigma: f64,
}

impl MetaJitter {
    fn default_sigma() -> f64 {
        0.01
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuConfig {
    pub epsilon: f64,
    /// Send when the DU's send probability is at least this.
    pub threshold: f64,
    pub train: TrainConfig,
    pub jitter: Option<MetaJitter>,
}

impl Default for DuConfig {
    fn default() -> Self {
        DuConfig { epsilon: 1.0, threshold: 0.5, train: TrainConfig::default(), jitter: None }
    }
}

impl DuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        self.train.validate()
    }
}

/// 1 iff the two predictions differ and the networked one is correct.
pub fn label_rule(embedded_pred: usize, networked_pred: usize, true_label: usize) -> u8 {
    if embedded_pred != networked_pred && networked_pred == true_label {
        SEND
    } else {
        KEEP
    }
}

pub fn generate_meta(embedded: &GbdtModel, ensemble: &Ensemble, meta_ds: &Dataset) -> Result<Vec<MetaRecord>> {
    if embedded.class_count() != ensemble.class_count() {
        return Err(Error::ArityMismatch { expected: embedded.class_count(), actual: ensemble.class_count() });
    }
    meta_ds
        .samples()
        .iter()
        .map(|s| {
            let label = s.label.ok_or_else(|| Error::InvalidDataset(format!("meta sample `{}` is unlabeled", s.id)))?;
            let meta = embedded.predict_proba(s)?;
            let networked = ensemble.predict(s)?.class;
            let routing_label = label_rule(meta.argmax(), networked, label);
            Ok(MetaRecord { id: s.id.clone(), meta, routing_label: Some(routing_label) })
        })
        .collect()
}

/// Jittered copies appended after the originals; features are clamped at 0
/// and renormalized.
pub fn jitter_meta(records: &[MetaRecord], jitter: &MetaJitter, seed: u64) -> Result<Vec<MetaRecord>> {
    let noise = Normal::new(0.0, jitter.sigma).map_err(|e| Error::Config(format!("jitter sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = records.to_vec();
    for copy in 0..jitter.copies {
        for r in records {
            let mut probs: Vec<f64> = r.meta.probs().iter().map(|p| (p + noise.sample(&mut rng)).max(0.0)).collect();
            let sum: f64 = probs.iter().sum();
            if sum > 0.0 {
                probs.iter_mut().for_each(|p| *p /= sum);
            } else {
                probs = r.meta.probs().to_vec();
            }
            out.push(MetaRecord {
                id: format!("{}#jitter{copy}", r.id),
                meta: PosteriorVector::new(probs)?,
                routing_label: r.routing_label,
            });
        }
    }
    Ok(out)
}

fn meta_dataset(records: &[MetaRecord]) -> Result<Dataset> {
    let m = records
        .first()
        .map(|r| r.meta.class_count())
        .ok_or_else(|| Error::DegenerateLabels("no meta records".into()))?;
    let samples = records
        .iter()
        .map(|r| {
            let label = r
                .routing_label
                .ok_or_else(|| Error::DegenerateLabels(format!("meta record `{}` is unlabeled", r.id)))?;
            Ok(Sample::new(r.id.clone(), r.meta.probs().to_vec(), Some(label as usize)))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, 2, m)
}

/// Trains the binary DU with positive-class gradient scale `cfg.epsilon`.
pub fn train_du(records: &[MetaRecord], cfg: &DuConfig) -> Result<GbdtModel> {
    cfg.validate()?;
    let augmented;
    let records = match &cfg.jitter {
        Some(j) if j.copies > 0 => {
            augmented = jitter_meta(records, j, cfg.train.seed)?;
            &augmented[..]
        }
        _ => records,
    };
    let ds = meta_dataset(records)?;
    let positives = ds.samples().iter().filter(|s| s.label == Some(1)).count();
    if cfg.epsilon > 0.0 && (positives == 0 || positives == ds.len()) {
        return Err(Error::DegenerateLabels(format!(
            "{positives} of {} meta records labeled send",
            ds.len()
        )));
    }
    let train_cfg = TrainConfig { epsilon: cfg.epsilon, ..cfg.train.clone() };
    gbdt::fit(&ds, Objective::Logistic, &train_cfg)
}

/// Probability of the send class for a meta vector.
pub fn du_score(du: &GbdtModel, meta: &PosteriorVector) -> Result<f64> {
    if du.objective() != Objective::Logistic {
        return Err(Error::ObjectiveMismatch("decision unit must be binary".into()));
    }
    Ok(du.predict_features(meta.probs())?.probs()[1])
}

pub fn route(du: &GbdtModel, meta: &PosteriorVector, comm_available: bool, threshold: f64) -> Result<RoutingDecision> {
    let score = du_score(du, meta)?;
    let route = if comm_available && score >= threshold { Route::SendToServer } else { Route::KeepOnClient };
    Ok(RoutingDecision { route, du_score: score })
}

/// Ideal routing from known labels; an upper bound for any learned DU.
pub fn oracle_route(embedded_pred: usize, networked_pred: usize, true_label: usize) -> RoutingDecision {
    let label = label_rule(embedded_pred, networked_pred, true_label);
    let route = if label == SEND { Route::SendToServer } else { Route::KeepOnClient };
    RoutingDecision { route, du_score: f64::from(label) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
}

impl Confusion {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let pos = tp + fn_;
        let neg = tn + fp;
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateLabels(format!("{pos} send and {neg} keep records")));
        }
        Ok(Confusion {
            tp,
            fp,
            tn,
            fn_,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
            tnr: tn as f64 / neg as f64,
            fnr: fn_ as f64 / pos as f64,
        })
    }
}

/// Confusion of the DU's routing against the rule labels; send is positive.
pub fn du_confusion(du: &GbdtModel, records: &[MetaRecord], threshold: f64) -> Result<Confusion> {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for r in records {
        let label = r
            .routing_label
            .ok_or_else(|| Error::DegenerateLabels(format!("meta record `{}` is unlabeled", r.id)))?;
        let sent = route(du, &r.meta, true, threshold)?.is_send();
        match (label == SEND, sent) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    Confusion::from_counts(tp, fp, tn, fn_)
}

pub fn save_meta_csv(records: &[MetaRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let m = records.first().map_or(0, |r| r.meta.class_count());
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut header = String::from("id");
    for j in 0..m {
        header.push_str(&format!(",p{j}"));
    }
    writeln!(out, "{header},routing_label").map_err(io)?;
    for r in records {
        write!(out, "{}", r.id).map_err(io)?;
        for p in r.meta.probs() {
            write!(out, ",{p:?}").map_err(io)?;
        }
        match r.routing_label {
            Some(l) => writeln!(out, ",{l}"),
            None => writeln!(out, ","),
        }
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_meta_csv(path: impl AsRef<Path>) -> Result<Vec<MetaRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| crate::data::csv_error(path, e))?;
    let header = reader.headers().map_err(|e| Error::MalformedRow { line: 1, reason: e.to_string() })?.clone();
    let m = header.len().saturating_sub(2);
    let header_ok = m >= 1
        && &header[0] == "id"
        && &header[header.len() - 1] == "routing_label"
        && (0..m).all(|j| header[j + 1] == format!("p{j}"));
    if !header_ok {
        return Err(Error::MalformedRow { line: 1, reason: "header must be id,p0,...,routing_label".into() });
    }
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::MalformedRow { line, reason: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::MalformedRow { line, reason: format!("expected {} fields", header.len()) });
        }
        let probs = (1..=m)
            .map(|j| {
                record[j].parse::<f64>().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("`{}` is not numeric", &record[j]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let routing_label = match &record[m + 1] {
            "" => None,
            "0" => Some(KEEP),
            "1" => Some(SEND),
            other => {
                return Err(Error::MalformedRow { line, reason: format!("routing label `{other}` not 0/1") })
            }
        };
        if !seen.insert(record[0].to_string()) {
            return Err(Error::DuplicateId(record[0].to_string()));
        }
        records.push(MetaRecord { id: record[0].to_string(), meta: PosteriorVector::new(probs)?, routing_label });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::ClassifierOracle;

    fn pv(p: &[f64]) -> PosteriorVector {
        PosteriorVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn rule_examples() {
        assert_eq!(label_rule(2, 1, 1), SEND);
        assert_eq!(label_rule(1, 1, 1), KEEP);
        assert_eq!(label_rule(1, 1, 0), KEEP);
        assert_eq!(label_rule(0, 1, 2), KEEP);
    }

    #[test]
    fn oracle_route_keeps_when_embedded_correct() {
        for net in 0..3 {
            assert_eq!(oracle_route(1, net, 1).route, Route::KeepOnClient);
        }
        assert_eq!(oracle_route(0, 1, 1).route, Route::SendToServer);
    }

    fn constant_du(margin: f64) -> GbdtModel {
        use crate::gbdt::{ScaledTree, Tree};
        let round = vec![ScaledTree { tree: Tree::leaf(margin), scale: 1.0 }];
        GbdtModel::new(Objective::Logistic, 2, 0.0, 1.0, vec![round]).unwrap()
    }

    #[test]
    fn routing_threshold_and_comm() {
        let du = constant_du(2.197_224_577_336_219_6); // sigmoid = 0.9
        let meta = pv(&[0.3, 0.7]);
        let d = route(&du, &meta, true, 0.5).unwrap();
        assert_eq!(d.route, Route::SendToServer);
        assert!((d.du_score - 0.9).abs() < 1e-12);
        assert_eq!(route(&du, &meta, false, 0.5).unwrap().route, Route::KeepOnClient);
        assert_eq!(route(&du, &meta, true, 0.95).unwrap().route, Route::KeepOnClient);
    }

    #[test]
    fn never_sends_without_comm() {
        for step in 0..=40 {
            let margin = -10.0 + step as f64 * 0.5;
            let du = constant_du(margin);
            for t in [0.01, 0.5, 0.99] {
                assert!(!route(&du, &pv(&[0.5, 0.5]), false, t).unwrap().is_send());
            }
        }
    }

    #[test]
    fn confusion_edge_cases() {
        let records: Vec<MetaRecord> = (0..10)
            .map(|i| MetaRecord { id: format!("r{i}"), meta: pv(&[0.5, 0.5]), routing_label: Some((i % 2) as u8) })
            .collect();
        let always_send = constant_du(5.0);
        let c = du_confusion(&always_send, &records, 0.5).unwrap();
        assert_eq!((c.tpr, c.fpr), (1.0, 1.0));
        assert_eq!(c.tpr + c.fnr, 1.0);
        let never = constant_du(-5.0);
        let c = du_confusion(&never, &records, 0.5).unwrap();
        assert_eq!((c.tpr, c.fpr, c.tnr), (0.0, 0.0, 1.0));
        let one_class: Vec<MetaRecord> = records.iter().filter(|r| r.routing_label == Some(0)).cloned().collect();
        assert!(matches!(du_confusion(&never, &one_class, 0.5), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn perfect_du_has_unit_tpr() {
        // send-labeled records carry low embedded confidence
        let records: Vec<MetaRecord> = (0..40)
            .map(|i| {
                let send = i % 4 == 0;
                let p = if send { 0.4 + i as f64 * 1e-3 } else { 0.9 - i as f64 * 1e-3 };
                MetaRecord { id: format!("r{i}"), meta: pv(&[p, 1.0 - p]), routing_label: Some(send as u8) }
            })
            .collect();
        let cfg = DuConfig { train: TrainConfig { rounds: 20, ..TrainConfig::default() }, ..DuConfig::default() };
        let du = train_du(&records, &cfg).unwrap();
        let c = du_confusion(&du, &records, 0.5).unwrap();
        assert_eq!((c.tpr, c.fpr), (1.0, 0.0));
    }

    #[test]
    fn degenerate_labels_rejected_unless_eps_zero() {
        let records: Vec<MetaRecord> = (0..5)
            .map(|i| MetaRecord { id: format!("r{i}"), meta: pv(&[0.6, 0.4]), routing_label: Some(KEEP) })
            .collect();
        assert!(matches!(train_du(&records, &DuConfig::default()), Err(Error::DegenerateLabels(_))));
        let cfg = DuConfig { epsilon: 0.0, ..DuConfig::default() };
        let du = train_du(&records, &cfg).unwrap();
        assert!(!route(&du, &records[0].meta, true, 0.5).unwrap().is_send());
    }

    #[test]
    fn generate_meta_labels() {
        let samples = vec![
            Sample::new("agree", vec![0.0], Some(0)),
            Sample::new("fix", vec![1.0], Some(1)),
        ];
        let ds = Dataset::new(samples, 2, 1).unwrap();
        // embedded predicts class 0 everywhere
        let embedded = {
            use crate::gbdt::{ScaledTree, Tree};
            let round = vec![ScaledTree { tree: Tree::leaf(-1.0), scale: 1.0 }];
            GbdtModel::new(Objective::Logistic, 1, 0.0, 1.0, vec![round]).unwrap()
        };
        let table = ClassifierOracle::Table {
            name: "net".into(),
            class_count: 2,
            rows: [("agree".to_string(), pv(&[0.8, 0.2])), ("fix".to_string(), pv(&[0.1, 0.9]))].into(),
        };
        let ensemble = Ensemble::new(vec![table]).unwrap();
        let records = generate_meta(&embedded, &ensemble, &ds).unwrap();
        assert_eq!(records[0].routing_label, Some(KEEP));
        assert_eq!(records[1].routing_label, Some(SEND));
        assert_eq!(records[0].meta, embedded.predict_proba(&ds.samples()[0]).unwrap());
    }

    #[test]
    fn meta_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        let records = vec![
            MetaRecord { id: "a".into(), meta: pv(&[0.1, 0.2, 0.7]), routing_label: Some(SEND) },
            MetaRecord { id: "b".into(), meta: pv(&[1.0 / 3.0; 3]), routing_label: None },
        ];
        save_meta_csv(&records, &path).unwrap();
        assert_eq!(load_meta_csv(&path).unwrap(), records);
    }

    #[test]
    fn jitter_keeps_valid_posteriors() {
        let records = vec![MetaRecord { id: "a".into(), meta: pv(&[0.0, 1.0]), routing_label: Some(KEEP) }];
        let out = jitter_meta(&records, &MetaJitter { copies: 3, sigma: 0.01 }, 1).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|r| r.routing_label == Some(KEEP)));
    }
}
