//! Samples, datasets, CSV ingestion and stratified splitting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, features: Vec<f64>, label: Option<usize>) -> Self {
        Sample { id: id.into(), features, label }
    }
}

/// A validated collection of samples sharing one feature arity and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_count: usize,
    feature_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize, feature_count: usize) -> Result<Self> {
        if class_count == 0 || feature_count == 0 {
            return Err(Error::InvalidDataset(
                "class and feature counts must be positive".into(),
            ));
        }
        let mut ids = HashSet::with_capacity(samples.len());
        let labeled = samples.iter().filter(|s| s.label.is_some()).count();
        if labeled != 0 && labeled != samples.len() {
            return Err(Error::InvalidDataset(format!(
                "{labeled} of {} samples labeled; expected all or none",
                samples.len()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_count {
                return Err(Error::ArityMismatch {
                    expected: feature_count,
                    actual: s.features.len(),
                });
            }
            if let Some(label) = s.label {
                if label >= class_count {
                    return Err(Error::LabelOutOfRange { line: i + 2, label, class_count });
                }
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Dataset { samples, class_count, feature_count })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.samples.is_empty() && self.samples[0].label.is_some()
    }

    /// Labels of a labeled dataset, in sample order.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label.ok_or_else(|| {
                    Error::InvalidDataset(format!("sample `{}` is unlabeled", s.id))
                })
            })
            .collect()
    }

    /// Samples whose ids appear in `ids`, in this dataset's order.
    pub fn select_ids(&self, ids: &HashSet<&str>) -> Dataset {
        let samples = self
            .samples
            .iter()
            .filter(|s| ids.contains(s.id.as_str()))
            .cloned()
            .collect();
        Dataset { samples, class_count: self.class_count, feature_count: self.feature_count }
    }

    pub fn load_csv(path: impl AsRef<Path>, class_count: usize) -> Result<Dataset> {
        load_dataset_csv(path, class_count)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        save_dataset_csv(self, path)
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::MalformedRow { line, reason: format!("{kind:?}") },
    }
}

/// Reads `id,label,f0,...,f{d-1}`; an empty label cell marks an unlabeled row.
pub fn load_dataset_csv(path: impl AsRef<Path>, class_count: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "header must start with `id,label` and name at least one feature".into(),
        });
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected column `f{j}`, found `{name}`"),
            });
        }
    }
    let feature_count = header.len() - 2;

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let label = match &record[1] {
            "" => None,
            raw => {
                let label: usize = raw.parse().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("label `{raw}` is not a class index"),
                })?;
                if label >= class_count {
                    return Err(Error::LabelOutOfRange { line, label, class_count });
                }
                Some(label)
            }
        };
        let features = record
            .iter()
            .skip(2)
            .map(|raw| {
                raw.parse::<f64>().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("feature `{raw}` is not numeric"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample::new(&record[0], features, label));
    }
    Dataset::new(samples, class_count, feature_count)
}

pub fn save_dataset_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset_csv(ds, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Float cells use Rust's shortest round-trip formatting, so reloading is bit-exact.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, out: &mut W) -> std::io::Result<()> {
    write!(out, "id,label")?;
    for j in 0..ds.feature_count {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for s in &ds.samples {
        write!(out, "{},", s.id)?;
        if let Some(label) = s.label {
            write!(out, "{label}")?;
        }
        for x in &s.features {
            write!(out, ",{x:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Fractions for the embedded-training, meta-information and test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub meta_fraction: f64,
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, meta: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec { train_fraction: train, meta_fraction: meta, test_fraction: test, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = self.fractions();
        if fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidSplit(format!("fractions must be positive: {fractions:?}")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_fraction, self.meta_fraction, self.test_fraction]
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub meta: Dataset,
    pub test: Dataset,
}

/// Largest-remainder apportionment of `total` over `fractions`.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &p in order.iter().cycle() {
        if assigned >= total {
            break;
        }
        counts[p] += 1;
        assigned += 1;
    }
    counts
}

/// Per-(class, partition) counts: row sums match class sizes, column sums
/// match the global apportionment whenever the per-class minimum of one
/// sample per partition allows it.
fn stratified_counts(class_sizes: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let parts = fractions.len();
    let total: usize = class_sizes.iter().sum();
    let targets = apportion(total, fractions);

    let quotas: Vec<Vec<f64>> = class_sizes
        .iter()
        .map(|&n| fractions.iter().map(|f| f * n as f64).collect())
        .collect();
    let mut counts: Vec<Vec<usize>> = quotas
        .iter()
        .map(|row| row.iter().map(|q| (q.floor() as usize).max(1)).collect())
        .collect();
    for (row, &n) in counts.iter_mut().zip(class_sizes) {
        while row.iter().sum::<usize>() > n {
            let largest = (0..parts).max_by_key(|&p| (row[p], std::cmp::Reverse(p))).unwrap();
            row[largest] -= 1;
        }
    }

    let mut row_rem: Vec<usize> =
        counts.iter().zip(class_sizes).map(|(row, &n)| n - row.iter().sum::<usize>()).collect();
    let mut col_rem: Vec<usize> = (0..parts)
        .map(|p| targets[p].saturating_sub(counts.iter().map(|row| row[p]).sum()))
        .collect();

    let mut cells: Vec<(usize, usize)> =
        (0..class_sizes.len()).flat_map(|c| (0..parts).map(move |p| (c, p))).collect();
    cells.sort_by(|&(ca, pa), &(cb, pb)| {
        let ra = quotas[ca][pa] - counts[ca][pa] as f64;
        let rb = quotas[cb][pb] - counts[cb][pb] as f64;
        rb.total_cmp(&ra).then((ca, pa).cmp(&(cb, pb)))
    });
    // Round up cells by largest remainder while both the class and the
    // partition still have room.
    for &(c, p) in &cells {
        if row_rem[c] > 0 && col_rem[p] > 0 && (counts[c][p] as f64) < quotas[c][p].ceil() {
            counts[c][p] += 1;
            row_rem[c] -= 1;
            col_rem[p] -= 1;
        }
    }
    // Leftovers: first keep partition targets, then only class sizes.
    for respect_targets in [true, false] {
        while let Some(&(c, p)) = cells
            .iter()
            .find(|&&(c, p)| row_rem[c] > 0 && (!respect_targets || col_rem[p] > 0))
        {
            counts[c][p] += 1;
            row_rem[c] -= 1;
            col_rem[p] = col_rem[p].saturating_sub(1);
        }
    }
    counts
}

/// Stratified, seeded three-way split into (train, meta, test).
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidDataset("cannot split an empty dataset".into()));
    }
    let labels = ds.labels()?;
    let fractions = spec.fractions();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count];
    for (i, &label) in labels.iter().enumerate() {
        by_class[label].push(i);
    }
    // Classes absent from the dataset are allowed; present ones need one
    // sample per partition.
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < fractions.len() {
            return Err(Error::EmptyClass {
                class,
                available: members.len(),
                required: fractions.len(),
            });
        }
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = stratified_counts(&sizes, &fractions);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assignment = vec![0usize; ds.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let mut offset = 0;
        for (part, &count) in counts[class].iter().enumerate() {
            for &i in &members[offset..offset + count] {
                assignment[i] = part;
            }
            offset += count;
        }
    }

    let mut parts: [Vec<Sample>; 3] = Default::default();
    for (sample, &part) in ds.samples.iter().zip(&assignment) {
        parts[part].push(sample.clone());
    }
    let [train, meta, test] = parts;
    let make = |samples| Dataset { samples, class_count: ds.class_count, feature_count: ds.feature_count };
    Ok(Split { train: make(train), meta: make(meta), test: make(test) })
}
