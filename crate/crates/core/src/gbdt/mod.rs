//! Gradient-boosted regression trees with logistic and softmax objectives.
//!
//! The logistic objective supports a positive-class weight: every sample with
//! label 1 has its gradient and hessian multiplied by `epsilon`, negatives by 1.
//! With `epsilon = 1` training is ordinary unweighted boosting; with
//! `epsilon = 0` positives contribute nothing and the model learns to predict
//! the negative class everywhere.
//!
//! [`train_dart`] adds per-round dropout of earlier rounds with the usual
//! DART normalization.

mod format;
pub mod objective;
pub mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::posterior::PosteriorVector;

pub use objective::{grad_hess_logistic, grad_hess_softmax, GradHess};
pub use tree::{FeatureMatrix, Tree, TreeNode, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "classes")]
pub enum Objective {
    /// Binary; predictions are returned as `[1 - p, p]`.
    Logistic,
    Softmax(usize),
}

impl Objective {
    /// Trees per boosting round.
    pub fn arity(&self) -> usize {
        match self {
            Objective::Logistic => 1,
            Objective::Softmax(m) => *m,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Objective::Logistic => 2,
            Objective::Softmax(m) => *m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub min_child_hessian: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum gain for a split.
    pub gamma: f64,
    pub learning_rate: f64,
    /// Positive-class gradient scale; logistic objective only.
    pub epsilon: f64,
    pub dart_drop_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 50,
            max_depth: 3,
            min_child_hessian: 1e-3,
            lambda: 1.0,
            gamma: 0.0,
            learning_rate: 0.3,
            epsilon: 1.0,
            dart_drop_rate: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) || !(self.min_child_hessian >= 0.0) {
            return bad("lambda, gamma and min_child_hessian must be >= 0");
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.dart_drop_rate) {
            return bad("dart_drop_rate must be in [0, 1)");
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_child_hessian: self.min_child_hessian,
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTree {
    pub tree: Tree,
    pub scale: f64,
}

/// Additive tree ensemble. Each round holds one tree per objective output.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    objective: Objective,
    feature_count: usize,
    base_score: f64,
    learning_rate: f64,
    rounds: Vec<Vec<ScaledTree>>,
}

impl GbdtModel {
    pub fn new(
        objective: Objective,
        feature_count: usize,
        base_score: f64,
        learning_rate: f64,
        rounds: Vec<Vec<ScaledTree>>,
    ) -> Result<Self> {
        if let Objective::Softmax(m) = objective {
            if m < 2 {
                return Err(Error::ObjectiveMismatch(format!("softmax needs >= 2 classes, got {m}")));
            }
        }
        for (r, round) in rounds.iter().enumerate() {
            if round.len() != objective.arity() {
                return Err(Error::ModelFormat(format!(
                    "round {r} has {} trees, objective needs {}",
                    round.len(),
                    objective.arity()
                )));
            }
            if round.iter().any(|t| !(t.scale > 0.0)) {
                return Err(Error::ModelFormat(format!("round {r} has a non-positive scale")));
            }
        }
        Ok(GbdtModel { objective, feature_count, base_score, learning_rate, rounds })
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn class_count(&self) -> usize {
        self.objective.class_count()
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn rounds(&self) -> &[Vec<ScaledTree>] {
        &self.rounds
    }

    /// Raw margins, one per objective output.
    pub fn margins(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_count {
            return Err(Error::ArityMismatch { expected: self.feature_count, actual: features.len() });
        }
        let mut margins = vec![self.base_score; self.objective.arity()];
        for round in &self.rounds {
            for (m, st) in margins.iter_mut().zip(round) {
                *m += st.scale * self.learning_rate * st.tree.predict(features);
            }
        }
        Ok(margins)
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<PosteriorVector> {
        let margins = self.margins(features)?;
        Ok(PosteriorVector::from_normalized(margins_to_probs(self.objective, &margins)))
    }

    pub fn predict_proba(&self, sample: &Sample) -> Result<PosteriorVector> {
        self.predict_features(&sample.features)
    }

    pub fn predict_batch(&self, samples: &[Sample]) -> Result<Vec<PosteriorVector>> {
        samples.iter().map(|s| self.predict_proba(s)).collect()
    }

    pub fn predict_class(&self, sample: &Sample) -> Result<usize> {
        Ok(self.predict_proba(sample)?.argmax())
    }

    /// Largest absolute leaf weight across all trees.
    pub fn max_leaf_magnitude(&self) -> f64 {
        self.rounds
            .iter()
            .flatten()
            .flat_map(|st| st.tree.leaf_weights())
            .fold(0.0, |acc, w| acc.max(w.abs()))
    }
}

fn margins_to_probs(objective: Objective, margins: &[f64]) -> Vec<f64> {
    match objective {
        Objective::Logistic => {
            let p = objective::sigmoid(margins[0]);
            vec![1.0 - p, p]
        }
        Objective::Softmax(_) => objective::softmax(margins),
    }
}

/// Training view shared by plain boosting and DART.
struct Problem {
    objective: Objective,
    x: FeatureMatrix,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

impl Problem {
    fn new(ds: &Dataset, objective: Objective, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let labels = ds.labels()?;
        if labels.is_empty() {
            return Err(Error::InvalidDataset("cannot train on an empty dataset".into()));
        }
        let classes = objective.class_count();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::ObjectiveMismatch(format!(
                "label {bad} exceeds {classes}-class objective"
            )));
        }
        if let Objective::Softmax(m) = objective {
            if m < 2 {
                return Err(Error::ObjectiveMismatch("softmax needs >= 2 classes".into()));
            }
        }
        let weights = match objective {
            Objective::Logistic => {
                labels.iter().map(|&y| if y == 1 { cfg.epsilon } else { 1.0 }).collect()
            }
            Objective::Softmax(_) => vec![1.0; labels.len()],
        };
        let rows: Vec<&[f64]> = ds.samples().iter().map(|s| s.features.as_slice()).collect();
        Ok(Problem { objective, x: FeatureMatrix::from_rows(&rows), labels, weights })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    /// Gradients per output: `result[k][i]` for output k, sample i.
    fn gradients(&self, margins: &[Vec<f64>]) -> Vec<Vec<GradHess>> {
        let arity = self.objective.arity();
        let mut out = vec![Vec::with_capacity(self.len()); arity];
        for i in 0..self.len() {
            match self.objective {
                Objective::Logistic => {
                    out[0].push(grad_hess_logistic(self.labels[i] == 1, margins[i][0], self.weights[i]));
                }
                Objective::Softmax(_) => {
                    for (k, gh) in grad_hess_softmax(self.labels[i], &margins[i]).into_iter().enumerate() {
                        out[k].push(gh);
                    }
                }
            }
        }
        out
    }

    /// Weighted training loss at the given margins.
    fn loss(&self, margins: &[Vec<f64>]) -> f64 {
        (0..self.len())
            .map(|i| match self.objective {
                Objective::Logistic => {
                    objective::logistic_loss(self.labels[i] == 1, margins[i][0], self.weights[i])
                }
                Objective::Softmax(_) => objective::softmax_loss(self.labels[i], &margins[i]),
            })
            .sum()
    }

    fn fit_round(&self, margins: &[Vec<f64>], cfg: &TrainConfig) -> Vec<Tree> {
        let rows: Vec<usize> = (0..self.len()).collect();
        let params = cfg.tree_params();
        self.gradients(margins)
            .iter()
            .map(|grads| tree::grow_tree(grads, &self.x, &rows, &params))
            .collect()
    }

    /// Unscaled outputs of one round's trees, per sample.
    fn round_outputs(&self, trees: &[Tree]) -> Vec<Vec<f64>> {
        let mut row = vec![0.0; self.x.feature_count()];
        (0..self.len())
            .map(|i| {
                for (f, v) in row.iter_mut().enumerate() {
                    *v = self.x.value(i, f);
                }
                trees.iter().map(|t| t.predict(&row)).collect()
            })
            .collect()
    }
}

/// Plain gradient boosting for `cfg.rounds` rounds.
pub fn train(ds: &Dataset, objective: Objective, cfg: &TrainConfig) -> Result<GbdtModel> {
    train_with_history(ds, objective, cfg).map(|(model, _)| model)
}

/// Plain boosting that also reports the weighted training loss before the
/// first round and after every round.
pub fn train_with_history(
    ds: &Dataset,
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<(GbdtModel, Vec<f64>)> {
    let problem = Problem::new(ds, objective, cfg)?;
    let base_score = 0.0;
    let mut margins = vec![vec![base_score; objective.arity()]; problem.len()];
    let mut history = vec![problem.loss(&margins)];
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let trees = problem.fit_round(&margins, cfg);
        for (m, out) in margins.iter_mut().zip(problem.round_outputs(&trees)) {
            for (mk, o) in m.iter_mut().zip(out) {
                *mk += cfg.learning_rate * o;
            }
        }
        history.push(problem.loss(&margins));
        rounds.push(trees.into_iter().map(|tree| ScaledTree { tree, scale: 1.0 }).collect());
    }
    let model = GbdtModel::new(objective, ds.feature_count(), base_score, cfg.learning_rate, rounds)?;
    Ok((model, history))
}

/// Seed for DART round `round`, independent of other rounds.
fn round_seed(seed: u64, round: usize) -> u64 {
    // splitmix64 finalizer over (seed, round)
    let mut z = seed ^ (round as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rounds dropped before fitting round `round` out of `prior` earlier rounds.
pub(crate) fn dart_dropout(seed: u64, round: usize, prior: usize, drop_rate: f64) -> Vec<usize> {
    if prior == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed(seed, round));
    let mut dropped: Vec<usize> = (0..prior).filter(|_| rng.random_bool(drop_rate)).collect();
    if dropped.is_empty() {
        dropped.push(rng.random_range(0..prior));
    }
    dropped
}

/// DART boosting. Falls back to [`train`] when `dart_drop_rate` is 0.
pub fn train_dart(ds: &Dataset, objective: Objective, cfg: &TrainConfig) -> Result<GbdtModel> {
    train_dart_traced(ds, objective, cfg, |_, _| {})
}

/// DART boosting with a callback receiving `(round, model so far)` after
/// each round's normalization.
pub fn train_dart_traced(
    ds: &Dataset,
    objective: Objective,
    cfg: &TrainConfig,
    mut on_round: impl FnMut(usize, &GbdtModel),
) -> Result<GbdtModel> {
    if cfg.dart_drop_rate == 0.0 {
        return train(ds, objective, cfg);
    }
    let problem = Problem::new(ds, objective, cfg)?;
    let arity = objective.arity();
    let base_score = 0.0;
    let mut rounds: Vec<Vec<ScaledTree>> = Vec::with_capacity(cfg.rounds);
    let mut outputs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.rounds);
    let mut scales: Vec<f64> = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let dropped = dart_dropout(cfg.seed, t, rounds.len(), cfg.dart_drop_rate);
        let mut is_dropped = vec![false; rounds.len()];
        for &r in &dropped {
            is_dropped[r] = true;
        }
        let margins: Vec<Vec<f64>> = (0..problem.len())
            .map(|i| {
                let mut m = vec![base_score; arity];
                for (r, out) in outputs.iter().enumerate() {
                    if is_dropped[r] {
                        continue;
                    }
                    for (mk, o) in m.iter_mut().zip(&out[i]) {
                        *mk += scales[r] * cfg.learning_rate * o;
                    }
                }
                m
            })
            .collect();

        let trees = problem.fit_round(&margins, cfg);
        let k = dropped.len() as f64;
        for &r in &dropped {
            scales[r] *= k / (k + 1.0);
        }
        outputs.push(problem.round_outputs(&trees));
        scales.push(1.0 / (k + 1.0));
        rounds.push(trees.into_iter().map(|tree| ScaledTree { tree, scale: 1.0 }).collect());
        for (round, &scale) in rounds.iter_mut().zip(&scales) {
            for st in round.iter_mut() {
                st.scale = scale;
            }
        }
        if t + 1 < cfg.rounds {
            let snapshot = GbdtModel::new(objective, ds.feature_count(), base_score, cfg.learning_rate, rounds.clone())?;
            on_round(t, &snapshot);
        }
    }
    let model = GbdtModel::new(objective, ds.feature_count(), base_score, cfg.learning_rate, rounds)?;
    if cfg.rounds > 0 {
        on_round(cfg.rounds - 1, &model);
    }
    Ok(model)
}

/// Dispatches to DART when a drop rate is configured.
pub fn fit(ds: &Dataset, objective: Objective, cfg: &TrainConfig) -> Result<GbdtModel> {
    if cfg.dart_drop_rate > 0.0 {
        train_dart(ds, objective, cfg)
    } else {
        train(ds, objective, cfg)
    }
}

/// Builds a single tree on a dataset given precomputed per-sample statistics.
pub fn build_tree(grads: &[GradHess], ds: &Dataset, cfg: &TrainConfig) -> Result<Tree> {
    if grads.len() != ds.len() {
        return Err(Error::ArityMismatch { expected: ds.len(), actual: grads.len() });
    }
    if ds.is_empty() {
        return Err(Error::InvalidDataset("cannot grow a tree on zero samples".into()));
    }
    let rows: Vec<&[f64]> = ds.samples().iter().map(|s| s.features.as_slice()).collect();
    let x = FeatureMatrix::from_rows(&rows);
    let all: Vec<usize> = (0..ds.len()).collect();
    Ok(tree::grow_tree(grads, &x, &all, &cfg.tree_params()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn two_point(eps: f64) -> (Dataset, TrainConfig) {
        let ds = Dataset::new(
            vec![Sample::new("p", vec![0.0], Some(1)), Sample::new("n", vec![0.0], Some(0))],
            2,
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            rounds: 1,
            max_depth: 0,
            lambda: 0.0,
            learning_rate: 1.0,
            min_child_hessian: 0.0,
            epsilon: eps,
            ..TrainConfig::default()
        };
        (ds, cfg)
    }

    fn only_leaf(model: &GbdtModel) -> f64 {
        match model.rounds()[0][0].tree.root() {
            TreeNode::Leaf { weight } => *weight,
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn weighted_single_leaf() {
        for (eps, expected) in [(1.0, 0.0), (3.0, 1.0), (0.0, -2.0)] {
            let (ds, cfg) = two_point(eps);
            let model = train(&ds, Objective::Logistic, &cfg).unwrap();
            assert!((only_leaf(&model) - expected).abs() < 1e-12, "eps {eps}");
        }
    }

    #[test]
    fn all_positive_leaf_and_prediction() {
        let samples = (0..8).map(|i| Sample::new(format!("s{i}"), vec![i as f64], Some(1))).collect();
        let ds = Dataset::new(samples, 2, 1).unwrap();
        let cfg = TrainConfig { rounds: 1, max_depth: 0, lambda: 0.0, learning_rate: 1.0, ..TrainConfig::default() };
        let model = train(&ds, Objective::Logistic, &cfg).unwrap();
        assert_eq!(only_leaf(&model), 2.0);
        let p = model.predict_proba(&ds.samples()[0]).unwrap();
        assert!((p.probs()[1] - 0.880_797_077_977_882_4).abs() < 1e-12);
    }

    #[test]
    fn empty_model_predicts_uniform() {
        let model = GbdtModel::new(Objective::Logistic, 2, 0.0, 0.3, vec![]).unwrap();
        let p = model.predict_features(&[1.0, 2.0]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        assert!(matches!(model.predict_features(&[1.0]), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn rejects_labels_beyond_objective() {
        let samples = vec![Sample::new("a", vec![0.0], Some(2)), Sample::new("b", vec![1.0], Some(0))];
        let ds = Dataset::new(samples, 3, 1).unwrap();
        let err = train(&ds, Objective::Logistic, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ObjectiveMismatch(_)));
        assert!(train(&ds, Objective::Softmax(3), &TrainConfig::default()).is_ok());
    }

    #[test]
    fn dart_dropout_never_empty_with_priors() {
        for round in 1..50 {
            let d = dart_dropout(3, round, round, 1e-9);
            assert_eq!(d.len(), 1);
            assert!(d[0] < round);
        }
        assert!(dart_dropout(3, 0, 0, 0.5).is_empty());
    }

    #[test]
    fn dart_scale_arithmetic_with_one_prior() {
        let samples = (0..20)
            .map(|i| Sample::new(format!("s{i}"), vec![i as f64], Some((i % 2) as usize)))
            .collect();
        let ds = Dataset::new(samples, 2, 1).unwrap();
        let cfg = TrainConfig { rounds: 2, dart_drop_rate: 1e-9, ..TrainConfig::default() };
        let model = train_dart(&ds, Objective::Logistic, &cfg).unwrap();
        assert_eq!(model.rounds()[0][0].scale, 0.5);
        assert_eq!(model.rounds()[1][0].scale, 0.5);
    }

    #[test]
    fn validate_config() {
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { dart_drop_rate: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { epsilon: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
