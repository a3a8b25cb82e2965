//! Preparation phase: data, embedded model, networked ensemble and meta records.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::data::{load_dataset_csv, split_dataset, Dataset, Split, SplitSpec};
use crate::decision_unit::{generate_meta, DuConfig, MetaRecord};
use crate::error::{Error, Result};
use crate::fusion::{ClassifierOracle, Ensemble, EnsembleManifest, FusionWeights, PosteriorRow};
use crate::gbdt::{self, GbdtModel, Objective, TrainConfig};
use crate::preprocess::PreprocessConfig;
use crate::synthetic::{make_synthetic, SyntheticConfig, SyntheticData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    /// A client-view dataset plus an ensemble manifest for the server side.
    Files { dataset: PathBuf, class_count: usize, ensemble: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub meta: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, meta: 0.2, test: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkedConfig {
    /// Training settings for in-framework server models (synthetic source).
    pub train: TrainConfig,
    pub weights: Option<FusionWeights>,
}

impl Default for NetworkedConfig {
    fn default() -> Self {
        NetworkedConfig { train: TrainConfig { rounds: 60, max_depth: 4, ..TrainConfig::default() }, weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub trials: usize,
    pub fractions: Vec<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { trials: 100, fractions: (0..=10).map(|i| i as f64 / 10.0).collect() }
    }
}

/// Everything needed to go from raw data to sweep curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Split and baseline seed.
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitFractions,
    pub embedded: TrainConfig,
    pub networked: NetworkedConfig,
    pub du: DuConfig,
    pub run: RunConfig,
    pub epsilons: Vec<f64>,
    pub baseline: BaselineConfig,
    /// Feature extraction for image inputs.
    pub preprocess: PreprocessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            data: DataSource::Synthetic(SyntheticConfig::default()),
            split: SplitFractions::default(),
            embedded: TrainConfig { rounds: 40, max_depth: 3, dart_drop_rate: 0.1, ..TrainConfig::default() },
            networked: NetworkedConfig::default(),
            du: DuConfig {
                train: TrainConfig { rounds: 30, max_depth: 2, min_child_hessian: 5.0, lambda: 5.0, ..TrainConfig::default() },
                ..DuConfig::default()
            },
            run: RunConfig::default(),
            epsilons: vec![0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 25.0, 50.0, 100.0],
            baseline: BaselineConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.split.train, self.split.meta, self.split.test, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec()?;
        self.embedded.validate()?;
        self.networked.train.validate()?;
        self.du.validate()?;
        self.run.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }
}

/// Outputs of the preparation phase.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Client-view partitions.
    pub split: Split,
    pub embedded: GbdtModel,
    pub ensemble: Ensemble,
    pub meta: Vec<MetaRecord>,
}

/// Client-view data and the server ensemble, before any client training.
#[derive(Debug, Clone)]
pub struct Sources {
    pub split: Split,
    pub ensemble: Ensemble,
}

/// One softmax model per strong view, each trained on that view's copy of
/// the training partition.
pub fn train_strong_models(data: &SyntheticData, split: &Split, cfg: &TrainConfig) -> Result<Vec<GbdtModel>> {
    let train_ids: HashSet<&str> = split.train.samples().iter().map(|s| s.id.as_str()).collect();
    data.strong
        .iter()
        .enumerate()
        .map(|(j, view)| {
            let cfg = TrainConfig { seed: cfg.seed.wrapping_add(j as u64), ..cfg.clone() };
            gbdt::fit(&view.select_ids(&train_ids), Objective::Softmax(view.class_count()), &cfg)
        })
        .collect()
}

/// Posterior rows of each strong model on its own view, for every sample not
/// in the training partition.
pub fn strong_posteriors(data: &SyntheticData, split: &Split, models: &[GbdtModel]) -> Result<Vec<Vec<PosteriorRow>>> {
    let held_out: HashSet<&str> = split
        .meta
        .samples()
        .iter()
        .chain(split.test.samples())
        .map(|s| s.id.as_str())
        .collect();
    data.strong
        .iter()
        .zip(models)
        .enumerate()
        .map(|(j, (view, model))| {
            view.select_ids(&held_out)
                .samples()
                .iter()
                .map(|s| {
                    Ok(PosteriorRow {
                        id: s.id.clone(),
                        model: format!("strong{j}"),
                        probs: model.predict_proba(s)?.into_inner(),
                    })
                })
                .collect()
        })
        .collect()
}

fn table_oracle(rows: Vec<PosteriorRow>, class_count: usize) -> Result<ClassifierOracle> {
    let name = rows.first().map(|r| r.model.clone()).unwrap_or_default();
    let rows = rows
        .into_iter()
        .map(|r| Ok((r.id, crate::posterior::PosteriorVector::new(r.probs)?)))
        .collect::<Result<HashMap<_, _>>>()?;
    Ok(ClassifierOracle::Table { name, class_count, rows })
}

pub fn load_sources(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Sources> {
    cfg.validate()?;
    let spec = cfg.split_spec()?;
    match &cfg.data {
        DataSource::Synthetic(syn) => {
            let data = make_synthetic(syn)?;
            let split = split_dataset(&data.weak, &spec)?;
            let models = train_strong_models(&data, &split, &cfg.networked.train)?;
            let oracles = strong_posteriors(&data, &split, &models)?
                .into_iter()
                .map(|rows| table_oracle(rows, syn.classes))
                .collect::<Result<Vec<_>>>()?;
            let ensemble = match &cfg.networked.weights {
                Some(w) => Ensemble::with_weights(oracles, w.clone())?,
                None => Ensemble::new(oracles)?,
            };
            Ok(Sources { split, ensemble })
        }
        DataSource::Files { dataset, class_count, ensemble } => {
            let ds: Dataset = load_dataset_csv(base_dir.join(dataset), *class_count)?;
            let split = split_dataset(&ds, &spec)?;
            let manifest_path = base_dir.join(ensemble);
            let manifest = EnsembleManifest::load(&manifest_path)?;
            let manifest_dir = manifest_path.parent().unwrap_or(Path::new("."));
            let mut ensemble = manifest.build(manifest_dir)?;
            if let Some(w) = &cfg.networked.weights {
                ensemble = Ensemble::with_weights(ensemble.oracles().to_vec(), w.clone())?;
            }
            if ensemble.class_count() != *class_count {
                return Err(Error::ArityMismatch { expected: *class_count, actual: ensemble.class_count() });
            }
            Ok(Sources { split, ensemble })
        }
    }
}

pub fn train_embedded(train: &Dataset, cfg: &TrainConfig) -> Result<GbdtModel> {
    gbdt::fit(train, Objective::Softmax(train.class_count()), cfg)
}

/// Full preparation: sources, embedded model, meta records.
pub fn prepare(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Prepared> {
    let Sources { split, ensemble } = load_sources(cfg, base_dir)?;
    let embedded = train_embedded(&split.train, &cfg.embedded)?;
    let meta = generate_meta(&embedded, &ensemble, &split.meta)?;
    Ok(Prepared { split, embedded, ensemble, meta })
}
