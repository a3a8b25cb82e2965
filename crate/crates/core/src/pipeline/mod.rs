//! Operation phase: per-sample client/server split, accounting, ε sweeps
//! and baselines.

mod experiment;
mod report;
pub mod server;
pub mod wire;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::decision_unit::{self, DuConfig, Route, RoutingDecision};
use crate::error::{Error, Result};
use crate::fusion::{Ensemble, FusedPrediction};
use crate::gbdt::GbdtModel;
use crate::posterior::PosteriorVector;

pub use experiment::{load_sources, prepare, strong_posteriors, train_embedded, train_strong_models, BaselineConfig, Sources, DataSource, ExperimentConfig, NetworkedConfig, Prepared, SplitFractions};
pub use report::{parse_sweep_csv, summarize, write_sweep_csv, SWEEP_COLUMNS};
pub use server::{serve_ensemble, RemoteEnsemble, ServerHandle};

/// Seconds per sample on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub t_client: f64,
    pub t_server: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { t_client: 0.308, t_server: 2.51 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_client > 0.0 && self.t_server > 0.0) {
            return Err(Error::Config("cost model times must be positive".into()));
        }
        Ok(())
    }

    /// Expected seconds per sample when a fraction `f` is sent to the server.
    pub fn elapsed(&self, fraction_sent: f64) -> f64 {
        (1.0 - fraction_sent) * self.t_client + fraction_sent * self.t_server
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transport {
    InProcess,
    Socket { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub comm_available: bool,
    pub threshold: f64,
    pub cost: CostModel,
    pub seed: u64,
    pub transport: Transport,
    /// Keep a sample on the client when the server cannot be reached instead
    /// of invalidating the run.
    pub fallback_on_failure: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            comm_available: true,
            threshold: 0.5,
            cost: CostModel::default(),
            seed: 0,
            transport: Transport::InProcess,
            fallback_on_failure: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if let Transport::Socket { endpoint } = &self.transport {
            if endpoint.rsplit_once(':').and_then(|(_, port)| port.parse::<u16>().ok()).is_none() {
                return Err(Error::Config(format!("socket endpoint `{endpoint}` is not host:port")));
            }
        }
        Ok(())
    }
}

/// Metrics for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub fraction_sent: f64,
    pub accuracy: f64,
    /// Share of send-labeled samples the DU sent; NaN when not measurable.
    pub tpr: f64,
    /// Share of keep-labeled samples the DU sent; NaN when not measurable.
    pub fpr: f64,
    pub elapsed_per_sample: f64,
}

/// Where the networked AI lives from the client's point of view.
pub trait EnsembleEndpoint {
    fn predict(&mut self, sample: &Sample) -> Result<FusedPrediction>;
}

impl EnsembleEndpoint for &Ensemble {
    fn predict(&mut self, sample: &Sample) -> Result<FusedPrediction> {
        Ensemble::predict(self, sample)
    }
}

/// Per-sample keep/send policy.
pub trait Router {
    fn route(&self, meta: &PosteriorVector, comm_available: bool, threshold: f64) -> Result<RoutingDecision>;
}

impl Router for GbdtModel {
    fn route(&self, meta: &PosteriorVector, comm_available: bool, threshold: f64) -> Result<RoutingDecision> {
        decision_unit::route(self, meta, comm_available, threshold)
    }
}

/// Fixed policies for baselines and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedRouter {
    AlwaysKeep,
    AlwaysSend,
}

impl Router for FixedRouter {
    fn route(&self, _meta: &PosteriorVector, comm_available: bool, _threshold: f64) -> Result<RoutingDecision> {
        let send = comm_available && *self == FixedRouter::AlwaysSend;
        Ok(RoutingDecision {
            route: if send { Route::SendToServer } else { Route::KeepOnClient },
            du_score: if *self == FixedRouter::AlwaysSend { 1.0 } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub true_label: usize,
    pub embedded_class: usize,
    pub decision: RoutingDecision,
    /// Posterior (or fused scores) behind `final_class`.
    pub scores: Vec<f64>,
    pub final_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total: usize,
    pub sent: usize,
    pub fraction_sent: f64,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub elapsed_per_sample: f64,
}

impl RunSummary {
    pub fn record(&self, epsilon: f64) -> SweepRecord {
        SweepRecord {
            epsilon,
            fraction_sent: self.fraction_sent,
            accuracy: self.accuracy,
            tpr: self.tpr,
            fpr: self.fpr,
            elapsed_per_sample: self.elapsed_per_sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outcomes: Vec<Outcome>,
    pub summary: RunSummary,
    /// Set when a transport failure aborted the run; outcomes are partial.
    pub invalid: Option<String>,
}

impl RunReport {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }
}

/// Runs every test sample through embedded → DU → (client | server).
///
/// `networked_reference`, when given, holds the networked AI's class for
/// every test sample and is only used to score the DU's TPR/FPR; without it
/// those rates are NaN.
pub fn run_split(
    test: &Dataset,
    embedded: &GbdtModel,
    du: &dyn Router,
    endpoint: &mut dyn EnsembleEndpoint,
    cfg: &RunConfig,
    networked_reference: Option<&[usize]>,
) -> Result<RunReport> {
    cfg.validate()?;
    let labels = test.labels()?;
    if let Some(reference) = networked_reference {
        if reference.len() != test.len() {
            return Err(Error::ArityMismatch { expected: test.len(), actual: reference.len() });
        }
    }
    let mut outcomes = Vec::with_capacity(test.len());
    let mut invalid = None;
    for (sample, &label) in test.samples().iter().zip(&labels) {
        let meta = embedded.predict_proba(sample)?;
        let embedded_class = meta.argmax();
        let mut decision = du.route(&meta, cfg.comm_available, cfg.threshold)?;
        let (scores, final_class) = if decision.is_send() {
            match endpoint.predict(sample) {
                Ok(fused) => (fused.scores, fused.class),
                Err(Error::TransportFailure(_)) if cfg.fallback_on_failure => {
                    decision.route = Route::KeepOnClient;
                    (meta.into_inner(), embedded_class)
                }
                Err(Error::TransportFailure(msg)) => {
                    invalid = Some(format!("sample `{}`: {msg}", sample.id));
                    break;
                }
                Err(e) => return Err(e),
            }
        } else {
            (meta.into_inner(), embedded_class)
        };
        outcomes.push(Outcome {
            id: sample.id.clone(),
            true_label: label,
            embedded_class,
            decision,
            scores,
            final_class,
        });
    }
    let summary = summarize_outcomes(&outcomes, cfg, networked_reference);
    Ok(RunReport { outcomes, summary, invalid })
}

fn summarize_outcomes(outcomes: &[Outcome], cfg: &RunConfig, reference: Option<&[usize]>) -> RunSummary {
    let total = outcomes.len();
    let sent = outcomes.iter().filter(|o| o.decision.is_send()).count();
    let correct = outcomes.iter().filter(|o| o.final_class == o.true_label).count();
    let fraction_sent = if total > 0 { sent as f64 / total as f64 } else { 0.0 };
    let accuracy = if total > 0 { correct as f64 / total as f64 } else { f64::NAN };
    let (mut tpr, mut fpr) = (f64::NAN, f64::NAN);
    if let Some(reference) = reference {
        let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for (o, &net) in outcomes.iter().zip(reference) {
            let should_send = decision_unit::label_rule(o.embedded_class, net, o.true_label) == decision_unit::SEND;
            let sent = o.decision.is_send();
            if should_send {
                pos += 1;
                tp += sent as usize;
            } else {
                neg += 1;
                fp += sent as usize;
            }
        }
        if pos > 0 {
            tpr = tp as f64 / pos as f64;
        }
        if neg > 0 {
            fpr = fp as f64 / neg as f64;
        }
    }
    RunSummary {
        total,
        sent,
        fraction_sent,
        accuracy,
        tpr,
        fpr,
        elapsed_per_sample: cfg.cost.elapsed(fraction_sent),
    }
}

/// Networked-AI class for every sample, in order.
pub fn networked_classes(endpoint: &mut dyn EnsembleEndpoint, ds: &Dataset) -> Result<Vec<usize>> {
    ds.samples().iter().map(|s| endpoint.predict(s).map(|p| p.class)).collect()
}

/// Fraction of labeled samples a model classifies correctly.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Trains one DU per ε from the same meta records and runs the split on the
/// test set for each. Points run in parallel; results are in grid order and
/// identical to a sequential run.
pub fn epsilon_sweep(
    epsilons: &[f64],
    prepared: &Prepared,
    du_cfg: &DuConfig,
    run_cfg: &RunConfig,
) -> Result<Vec<SweepRecord>> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon grid is empty".into()));
    }
    let reference = networked_classes(&mut &prepared.ensemble, &prepared.split.test)?;
    epsilons
        .par_iter()
        .map(|&epsilon| {
            let cfg = DuConfig { epsilon, ..du_cfg.clone() };
            let du = decision_unit::train_du(&prepared.meta, &cfg)?;
            let report = run_split(
                &prepared.split.test,
                &prepared.embedded,
                &du,
                &mut &prepared.ensemble,
                run_cfg,
                Some(&reference),
            )?;
            Ok(report.summary.record(epsilon))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub fraction_sent: f64,
    pub mean_accuracy: f64,
    /// Population standard deviation over trials.
    pub std_accuracy: f64,
    pub trials: usize,
}

/// Random routing from per-sample correctness: each trial sends a uniformly
/// random subset of `round(f * n)` samples.
pub fn random_baseline_from_correctness(
    embedded_correct: &[bool],
    networked_correct: &[bool],
    fraction: f64,
    trials: usize,
    seed: u64,
) -> Result<BaselineResult> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction {fraction} outside [0, 1]")));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let n = embedded_correct.len();
    if networked_correct.len() != n {
        return Err(Error::ArityMismatch { expected: n, actual: networked_correct.len() });
    }
    let sent = (fraction * n as f64).round() as usize;
    let embedded_total = embedded_correct.iter().filter(|&&c| c).count() as i128;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let correct_counts: Vec<i128> = (0..trials)
        .map(|_| {
            let mut correct = embedded_total;
            for i in index::sample(&mut rng, n, sent) {
                correct += networked_correct[i] as i128 - embedded_correct[i] as i128;
            }
            correct
        })
        .collect();
    // integer moments keep constant trials exact
    let (t, n_f) = (trials as i128, n.max(1) as i128);
    let sum: i128 = correct_counts.iter().sum();
    let sum_sq: i128 = correct_counts.iter().map(|c| c * c).sum();
    let mean = sum as f64 / (t * n_f) as f64;
    let var = (t * sum_sq - sum * sum) as f64 / ((t * t) as f64 * (n_f * n_f) as f64);
    Ok(BaselineResult { fraction_sent: fraction, mean_accuracy: mean, std_accuracy: var.sqrt(), trials })
}

pub fn random_baseline(
    test: &Dataset,
    embedded: &GbdtModel,
    endpoint: &mut dyn EnsembleEndpoint,
    fraction: f64,
    trials: usize,
    seed: u64,
) -> Result<BaselineResult> {
    let labels = test.labels()?;
    let embedded_correct = test
        .samples()
        .iter()
        .zip(&labels)
        .map(|(s, &y)| Ok(embedded.predict_class(s)? == y))
        .collect::<Result<Vec<_>>>()?;
    let networked_correct: Vec<bool> =
        networked_classes(endpoint, test)?.into_iter().zip(&labels).map(|(p, &y)| p == y).collect();
    random_baseline_from_correctness(&embedded_correct, &networked_correct, fraction, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_model_endpoints() {
        let cost = CostModel::default();
        assert_eq!(cost.elapsed(0.0), 0.308);
        assert_eq!(cost.elapsed(1.0), 2.51);
        assert!((cost.elapsed(0.72) - 1.89344).abs() < 1e-12);
    }

    #[test]
    fn baseline_extremes() {
        let emb = [true, false, true, false];
        let net = [true, true, true, false];
        let keep = random_baseline_from_correctness(&emb, &net, 0.0, 10, 1).unwrap();
        assert_eq!((keep.mean_accuracy, keep.std_accuracy), (0.5, 0.0));
        let send = random_baseline_from_correctness(&emb, &net, 1.0, 10, 1).unwrap();
        assert_eq!((send.mean_accuracy, send.std_accuracy), (0.75, 0.0));
        assert!(random_baseline_from_correctness(&emb, &net, 1.5, 10, 1).is_err());
        assert!(random_baseline_from_correctness(&emb, &net, 0.5, 0, 1).is_err());
    }

    #[test]
    fn run_config_validation() {
        let bad = RunConfig { transport: Transport::Socket { endpoint: "localhost".into() }, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        let ok = RunConfig { transport: Transport::Socket { endpoint: "127.0.0.1:9000".into() }, ..RunConfig::default() };
        assert!(ok.validate().is_ok());
        let json = serde_json::to_string(&ok.transport).unwrap();
        assert_eq!(json, r#"{"kind":"socket","endpoint":"127.0.0.1:9000"}"#);
    }
}
