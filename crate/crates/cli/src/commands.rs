//! One function per subcommand. Every subcommand reads its inputs, writes
//! only under the output directory, and finishes with a manifest.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use saia_core::data::{load_dataset_csv, save_dataset_csv};
use saia_core::decision_unit::{du_confusion, generate_meta, load_meta_csv, save_meta_csv, train_du};
use saia_core::fusion::{Ensemble, EnsembleManifest, OracleSource, PosteriorRow};
use saia_core::gbdt::GbdtModel;
use saia_core::pipeline::{
    epsilon_sweep, networked_classes, parse_sweep_csv, prepare, random_baseline, run_split, serve_ensemble,
    strong_posteriors, summarize, train_embedded, train_strong_models, write_sweep_csv, DataSource,
    EnsembleEndpoint, RemoteEnsemble, RunReport, Transport,
};
use saia_core::preprocess::{extract_features, load_rgb, AugmentOp};
use saia_core::synthetic::{make_synthetic, SyntheticData};
use saia_core::{split_dataset, Dataset, Sample, Split};

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

/// Fixed artifact locations under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn at(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split_csv(&self, part: &str) -> PathBuf {
        self.at(&format!("data/{part}.csv"))
    }

    pub fn strong_csv(&self, view: usize) -> PathBuf {
        self.at(&format!("data/strong{view}.csv"))
    }

    pub fn features_csv(&self) -> PathBuf {
        self.at("data/features.csv")
    }

    pub fn augmented_csv(&self) -> PathBuf {
        self.at("data/augmented.csv")
    }

    pub fn posteriors(&self) -> PathBuf {
        self.at("ensemble/posteriors.csv")
    }

    pub fn ensemble(&self) -> PathBuf {
        self.at("ensemble/ensemble.json")
    }

    pub fn embedded_model(&self) -> PathBuf {
        self.at("models/embedded.model")
    }

    pub fn du_model(&self) -> PathBuf {
        self.at("models/du.model")
    }

    pub fn meta_records(&self) -> PathBuf {
        self.at("meta/records.csv")
    }

    pub fn run_summary(&self) -> PathBuf {
        self.at("run/summary.json")
    }

    pub fn run_outcomes(&self) -> PathBuf {
        self.at("run/outcomes.csv")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.at("sweep.csv")
    }

    pub fn baseline_csv(&self) -> PathBuf {
        self.at("baseline.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.at("report.txt")
    }
}

/// Shared state for one invocation.
pub struct Ctx {
    pub cfg: Loaded,
    pub layout: Layout,
    pub manifest: Manifest,
}

impl Ctx {
    pub fn new(subcommand: &str, cfg: Loaded, out: PathBuf) -> CliResult<Self> {
        let mut manifest = Manifest::new(subcommand, cfg.hash()?, cfg.config.seed);
        if let Some(src) = &cfg.source {
            manifest.input(&out, src)?;
        }
        Ok(Ctx { cfg, layout: Layout::new(out), manifest })
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.manifest.input(&self.layout.root, path)
    }

    fn output(&mut self, path: &Path) -> CliResult<()> {
        self.manifest.output(&self.layout.root, path)
    }

    fn load_dataset(&mut self, path: &Path) -> CliResult<Dataset> {
        let ds = load_dataset_csv(path, self.cfg.class_count())?;
        self.input(path)?;
        Ok(ds)
    }

    fn load_model(&mut self, path: &Path) -> CliResult<GbdtModel> {
        let model = GbdtModel::load(path)?;
        self.input(path)?;
        Ok(model)
    }

    fn load_split(&mut self) -> CliResult<Split> {
        Ok(Split {
            train: self.load_dataset(&self.layout.split_csv("train"))?,
            meta: self.load_dataset(&self.layout.split_csv("meta"))?,
            test: self.load_dataset(&self.layout.split_csv("test"))?,
        })
    }

    fn load_ensemble(&mut self) -> CliResult<Ensemble> {
        let path = self.layout.ensemble();
        let manifest = EnsembleManifest::load(&path)?;
        self.input(&path)?;
        for source in &manifest.oracles {
            let (OracleSource::Table { path: rel, .. } | OracleSource::Model { path: rel, .. }) = source;
            let member = path.parent().unwrap_or(Path::new(".")).join(rel);
            self.input(&member)?;
        }
        Ok(manifest.build(path.parent().unwrap_or(Path::new(".")))?)
    }

    fn write_text(&mut self, path: &Path, text: &str) -> CliResult<()> {
        ensure_parent(path)?;
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        self.output(path)
    }

    fn write_dataset(&mut self, ds: &Dataset, path: &Path) -> CliResult<()> {
        ensure_parent(path)?;
        save_dataset_csv(ds, path)?;
        self.output(path)
    }

    fn write_model(&mut self, model: &GbdtModel, path: &Path) -> CliResult<()> {
        ensure_parent(path)?;
        model.save(path)?;
        self.output(path)
    }

    pub fn finish(self) -> CliResult<()> {
        self.manifest.write(&self.layout.root)?;
        Ok(())
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn strong_view_count(ctx: &Ctx) -> CliResult<usize> {
    match &ctx.cfg.config.data {
        DataSource::Synthetic(s) => Ok(s.strong_views),
        DataSource::Files { .. } => Err(CliError::Config("data source has no strong views".into())),
    }
}

pub fn prepare_features(ctx: &mut Ctx, images: Option<&Path>, augment: bool) -> CliResult<()> {
    if let Some(dir) = images {
        return prepare_images(ctx, dir, augment);
    }
    if augment {
        return Err(CliError::Config("--augment requires --images".into()));
    }
    let spec = ctx.cfg.config.split_spec()?;
    let split = match ctx.cfg.config.data.clone() {
        DataSource::Synthetic(syn) => {
            let data = make_synthetic(&syn)?;
            for (j, view) in data.strong.iter().enumerate() {
                ctx.write_dataset(view, &ctx.layout.strong_csv(j))?;
            }
            split_dataset(&data.weak, &spec)?
        }
        DataSource::Files { dataset, .. } => {
            let path = ctx.cfg.base_dir.join(dataset);
            let ds = ctx.load_dataset(&path)?;
            split_dataset(&ds, &spec)?
        }
    };
    for (part, ds) in [("train", &split.train), ("meta", &split.meta), ("test", &split.test)] {
        ctx.write_dataset(ds, &ctx.layout.split_csv(part))?;
    }
    println!("split: train {} / meta {} / test {}", split.train.len(), split.meta.len(), split.test.len());
    Ok(())
}

const IMAGE_EXTENSIONS: [&str; 5] = ["ppm", "pgm", "pbm", "pnm", "pam"];

/// `<dir>/<class index>/<image>`, sorted by class then file name.
fn collect_images(dir: &Path, class_count: usize) -> CliResult<Vec<(usize, PathBuf)>> {
    let read = |d: &Path| -> CliResult<Vec<PathBuf>> {
        let mut entries = fs::read_dir(d)
            .map_err(|e| CliError::io(d, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(d, err)))
            .collect::<CliResult<Vec<_>>>()?;
        entries.sort();
        Ok(entries)
    };
    let mut out = Vec::new();
    for class_dir in read(dir)?.into_iter().filter(|p| p.is_dir()) {
        let name = class_dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let class: usize = name
            .parse()
            .map_err(|_| CliError::Config(format!("class directory `{name}` is not a class index")))?;
        if class >= class_count {
            return Err(saia_core::Error::LabelOutOfRange { line: 0, label: class, class_count }.into());
        }
        for file in read(&class_dir)? {
            let ext = file.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
            if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                out.push((class, file));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("no images under {}", dir.display())));
    }
    Ok(out)
}

fn prepare_images(ctx: &mut Ctx, dir: &Path, augment: bool) -> CliResult<()> {
    let class_count = ctx.cfg.class_count();
    let pre = ctx.cfg.config.preprocess.clone();
    let (mut samples, mut extra) = (Vec::new(), Vec::new());
    for (class, path) in collect_images(dir, class_count)? {
        let img = load_rgb(&path)?;
        ctx.input(&path)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let id = format!("{class}_{stem}");
        samples.push(extract_features(&img, &pre)?.into_sample(id.clone(), Some(class)));
        if augment {
            for op in AugmentOp::ALL {
                let name = serde_json::to_value(op).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                extra.push(extract_features(&op.apply(&img), &pre)?.into_sample(format!("{id}~{name}"), Some(class)));
            }
        }
    }
    let d = samples[0].features.len();
    ctx.write_dataset(&Dataset::new(samples, class_count, d)?, &ctx.layout.features_csv())?;
    if augment {
        ctx.write_dataset(&Dataset::new(extra, class_count, d)?, &ctx.layout.augmented_csv())?;
    }
    Ok(())
}

pub fn export_posteriors(ctx: &mut Ctx) -> CliResult<()> {
    let split = ctx.load_split()?;
    let cfg = ctx.cfg.config.clone();
    let rows: Vec<PosteriorRow> = match &cfg.data {
        DataSource::Synthetic(_) => {
            let strong = (0..strong_view_count(ctx)?)
                .map(|j| ctx.load_dataset(&ctx.layout.strong_csv(j)))
                .collect::<CliResult<Vec<_>>>()?;
            let data = SyntheticData { weak: split.train.clone(), strong };
            let models = train_strong_models(&data, &split, &cfg.networked.train)?;
            strong_posteriors(&data, &split, &models)?.into_iter().flatten().collect()
        }
        DataSource::Files { ensemble, .. } => {
            let path = ctx.cfg.base_dir.join(ensemble);
            let source = EnsembleManifest::load(&path)?;
            ctx.input(&path)?;
            let members = source.build(path.parent().unwrap_or(Path::new(".")))?;
            let mut rows = Vec::new();
            for oracle in members.oracles() {
                for s in split.meta.samples().iter().chain(split.test.samples()) {
                    rows.push(PosteriorRow {
                        id: s.id.clone(),
                        model: oracle.name().to_string(),
                        probs: oracle.predict(s)?.into_inner(),
                    });
                }
            }
            rows
        }
    };
    let weights = match (&cfg.networked.weights, &cfg.data) {
        (Some(w), _) => Some(w.clone()),
        (None, DataSource::Files { ensemble, .. }) => EnsembleManifest::load(ctx.cfg.base_dir.join(ensemble))?.weights,
        (None, DataSource::Synthetic(_)) => None,
    };
    let table = ctx.layout.posteriors();
    ensure_parent(&table)?;
    saia_core::fusion::save_posterior_table(&table, &rows)?;
    ctx.output(&table)?;
    let manifest =
        EnsembleManifest { oracles: vec![OracleSource::Table { path: "posteriors.csv".into(), model: None }], weights };
    let path = ctx.layout.ensemble();
    manifest.save(&path)?;
    ctx.output(&path)?;

    let ensemble = manifest.build(path.parent().unwrap_or(Path::new(".")))?;
    if ensemble.class_count() != ctx.cfg.class_count() {
        return Err(saia_core::Error::ArityMismatch { expected: ctx.cfg.class_count(), actual: ensemble.class_count() }.into());
    }
    println!("ensemble: {} classifiers, {} rows", ensemble.oracles().len(), rows.len());
    Ok(())
}

/// Id of the image an augmented row was derived from.
fn base_id(id: &str) -> &str {
    id.split_once('~').map_or(id, |(base, _)| base)
}

pub fn train_embedded_cmd(ctx: &mut Ctx, extra_train: Option<&Path>) -> CliResult<()> {
    let mut train = ctx.load_dataset(&ctx.layout.split_csv("train"))?;
    if let Some(path) = extra_train {
        let extra = ctx.load_dataset(path)?;
        let ids: HashSet<&str> = train.samples().iter().map(|s| s.id.as_str()).collect();
        let kept: Vec<Sample> = extra.samples().iter().filter(|s| ids.contains(base_id(&s.id))).cloned().collect();
        let added = kept.len();
        let (m, d) = (train.class_count(), train.feature_count());
        train = Dataset::new(train.into_samples().into_iter().chain(kept).collect(), m, d)?;
        println!("added {added} augmented training rows");
    }
    let model = train_embedded(&train, &ctx.cfg.config.embedded)?;
    ctx.write_model(&model, &ctx.layout.embedded_model())
}

pub fn gen_meta(ctx: &mut Ctx) -> CliResult<()> {
    let embedded = ctx.load_model(&ctx.layout.embedded_model())?;
    let ensemble = ctx.load_ensemble()?;
    let meta = ctx.load_dataset(&ctx.layout.split_csv("meta"))?;
    let records = generate_meta(&embedded, &ensemble, &meta)?;
    let path = ctx.layout.meta_records();
    ensure_parent(&path)?;
    save_meta_csv(&records, &path)?;
    ctx.output(&path)?;
    let send = records.iter().filter(|r| r.routing_label == Some(1)).count();
    println!("meta: {} records, {send} labeled send", records.len());
    Ok(())
}

pub fn train_du_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let path = ctx.layout.meta_records();
    let records = load_meta_csv(&path)?;
    ctx.input(&path)?;
    let du_cfg = ctx.cfg.config.du.clone();
    let du = train_du(&records, &du_cfg)?;
    ctx.write_model(&du, &ctx.layout.du_model())?;
    if let Ok(c) = du_confusion(&du, &records, du_cfg.threshold) {
        println!("du: epsilon {} train tpr {:.3} fpr {:.3}", du_cfg.epsilon, c.tpr, c.fpr);
    }
    Ok(())
}

fn endpoint_of(ctx: &Ctx, flag: Option<&str>) -> String {
    match (flag, &ctx.cfg.config.run.transport) {
        (Some(e), _) => e.to_string(),
        (None, Transport::Socket { endpoint }) => endpoint.clone(),
        (None, Transport::InProcess) => "127.0.0.1:7878".to_string(),
    }
}

pub fn serve(mut ctx: Ctx, endpoint: Option<&str>) -> CliResult<()> {
    let ensemble = ctx.load_ensemble()?;
    let handle = serve_ensemble(Arc::new(ensemble), &endpoint_of(&ctx, endpoint))?;
    ctx.finish()?;
    println!("listening {}", handle.addr());
    std::io::stdout().flush().ok();
    handle.wait();
    Ok(())
}

fn report_json(report: &RunReport) -> serde_json::Value {
    let s = &report.summary;
    serde_json::json!({
        "total": s.total,
        "sent": s.sent,
        "fraction_sent": s.fraction_sent,
        "accuracy": s.accuracy,
        "tpr": s.tpr,
        "fpr": s.fpr,
        "elapsed_per_sample": s.elapsed_per_sample,
        "valid": report.is_valid(),
        "invalid_reason": report.invalid,
    })
}

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let test = ctx.load_dataset(&ctx.layout.split_csv("test"))?;
    let embedded = ctx.load_model(&ctx.layout.embedded_model())?;
    let du = ctx.load_model(&ctx.layout.du_model())?;
    let run_cfg = ctx.cfg.config.run.clone();
    let report = match &run_cfg.transport {
        Transport::InProcess => {
            let ensemble = ctx.load_ensemble()?;
            let reference = networked_classes(&mut &ensemble, &test)?;
            run_split(&test, &embedded, &du, &mut &ensemble, &run_cfg, Some(&reference))?
        }
        Transport::Socket { endpoint } => {
            // the client never sees the ensemble, so TPR/FPR stay unscored
            let mut remote = RemoteEnsemble::connect(endpoint.as_str())?;
            run_split(&test, &embedded, &du, &mut remote as &mut dyn EnsembleEndpoint, &run_cfg, None)?
        }
    };
    let mut outcomes = String::from("id,true_label,embedded_class,route,du_score,final_class\n");
    for o in &report.outcomes {
        let route = if o.decision.is_send() { "send" } else { "keep" };
        let _ = writeln!(
            outcomes,
            "{},{},{},{route},{:?},{}",
            o.id, o.true_label, o.embedded_class, o.decision.du_score, o.final_class
        );
    }
    ctx.write_text(&ctx.layout.run_outcomes(), &outcomes)?;
    let summary = serde_json::to_string_pretty(&report_json(&report)).map_err(|e| CliError::Config(e.to_string()))?;
    ctx.write_text(&ctx.layout.run_summary(), &(summary + "\n"))?;
    let s = &report.summary;
    println!(
        "run: sent {}/{} ({:.2}%) accuracy {:.4} elapsed {:.3}s/sample",
        s.sent,
        s.total,
        100.0 * s.fraction_sent,
        s.accuracy,
        s.elapsed_per_sample
    );
    match report.invalid {
        Some(reason) => Err(saia_core::Error::TransportFailure(reason).into()),
        None => Ok(()),
    }
}

pub fn sweep(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg.config.clone();
    let prepared = prepare(&cfg, &ctx.cfg.base_dir)?;
    let records = epsilon_sweep(&cfg.epsilons, &prepared, &cfg.du, &cfg.run)?;
    let mut buf = Vec::new();
    write_sweep_csv(&records, &mut buf).map_err(|e| CliError::io(&ctx.layout.sweep_csv(), e))?;
    ctx.write_text(&ctx.layout.sweep_csv(), &String::from_utf8_lossy(&buf))?;
    print!("{}", summarize(&records));
    Ok(())
}

pub const BASELINE_COLUMNS: &str = "fraction_sent,mean_accuracy,std_accuracy,trials";

pub fn baseline(ctx: &mut Ctx, fractions_from: Option<&Path>) -> CliResult<()> {
    let cfg = ctx.cfg.config.clone();
    let fractions = match fractions_from {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            ctx.input(path)?;
            parse_sweep_csv(&text)?.iter().map(|r| r.fraction_sent).collect()
        }
        None => cfg.baseline.fractions.clone(),
    };
    let prepared = prepare(&cfg, &ctx.cfg.base_dir)?;
    let mut out = format!("{BASELINE_COLUMNS}\n");
    for (i, &f) in fractions.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let b = random_baseline(&prepared.split.test, &prepared.embedded, &mut &prepared.ensemble, f, cfg.baseline.trials, seed)?;
        let _ = writeln!(out, "{:?},{:?},{:?},{}", b.fraction_sent, b.mean_accuracy, b.std_accuracy, b.trials);
        println!("f={:.3} mean {:.4} std {:.4}", b.fraction_sent, b.mean_accuracy, b.std_accuracy);
    }
    ctx.write_text(&ctx.layout.baseline_csv(), &out)
}

pub fn report(ctx: &mut Ctx, sweep_path: Option<&Path>, baseline_path: Option<&Path>) -> CliResult<()> {
    let sweep_path = sweep_path.map_or_else(|| ctx.layout.sweep_csv(), Path::to_path_buf);
    let text = fs::read_to_string(&sweep_path).map_err(|e| CliError::io(&sweep_path, e))?;
    ctx.input(&sweep_path)?;
    let mut out = summarize(&parse_sweep_csv(&text)?);
    let baseline_path = baseline_path.map_or_else(|| ctx.layout.baseline_csv(), Path::to_path_buf);
    if baseline_path.exists() {
        let text = fs::read_to_string(&baseline_path).map_err(|e| CliError::io(&baseline_path, e))?;
        ctx.input(&baseline_path)?;
        out.push_str("random routing:\n");
        for line in text.lines().skip(1) {
            let v: Vec<f64> = line.split(',').filter_map(|x| x.parse().ok()).collect();
            if let [f, mean, std, _] = v[..] {
                let _ = writeln!(out, "  sent={:>6.2}% acc={:>6.2}% ± {:.2}", 100.0 * f, 100.0 * mean, 100.0 * std);
            }
        }
    }
    print!("{out}");
    ctx.write_text(&ctx.layout.report(), &out)
}
