//! Datasets for semi-supervised learning: loading, synthesis, splitting,
//! and partition sampling.
//!
//! A [`Dataset`] is an N×D feature matrix (one row per example) plus a
//! per-row optional class label; rows without a label are the unlabeled
//! pool. CSV files use a `f0..f{D-1},label` header where the label cell is
//! an integer, empty, or `-1` (the latter two mean unlabeled).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A dataset of N examples in D dimensions with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<Option<usize>>,
    pub name: String,
}

impl Dataset {
    /// Validates and wraps raw parts.
    ///
    /// Requirements: at least one row, all features finite, labels (when any
    /// are present) covering at least two distinct classes.
    pub fn new(features: DMatrix<f64>, labels: Vec<Option<usize>>, name: String) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset(name));
        }
        if labels.len() != features.nrows() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} label entries",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value".to_string()));
        }
        let mut distinct: Vec<usize> = labels.iter().flatten().copied().collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() == 1 {
            return Err(Error::invalid(
                "labeled examples cover a single class; at least two classes are required",
            ));
        }
        Ok(Dataset {
            features,
            labels,
            name,
        })
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input dimension D.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> Option<usize> {
        self.labels[idx]
    }

    /// Count of labeled examples.
    pub fn n_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Count of unlabeled examples.
    pub fn n_unlabeled(&self) -> usize {
        self.len() - self.n_labeled()
    }

    /// Number of classes, taken as max label + 1 (0 when fully unlabeled).
    pub fn n_classes(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Indices of labeled rows, ascending.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    /// Indices of unlabeled rows, ascending.
    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_none())
            .collect()
    }

    /// Feature rows for `indices`, as an |indices|×D matrix.
    pub fn gather(&self, indices: &[usize]) -> DMatrix<f64> {
        self.features.select_rows(indices.iter())
    }
}

/// The node set of one training round: all labeled rows plus a sampled
/// subset of unlabeled rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
}

impl Partition {
    /// Node count N_L + N_p.
    pub fn len(&self) -> usize {
        self.labeled_idx.len() + self.unlabeled_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dataset row index of every node, labeled block first.
    pub fn node_indices(&self) -> Vec<usize> {
        let mut v = self.labeled_idx.clone();
        v.extend_from_slice(&self.unlabeled_idx);
        v
    }

    /// Per-node labels in node order.
    pub fn node_labels(&self, ds: &Dataset) -> Vec<Option<usize>> {
        self.node_indices().iter().map(|&i| ds.label(i)).collect()
    }
}

/// Partial Fisher–Yates: the first `k` entries of a seeded shuffle of `0..n`.
fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Loads a dataset from CSV with header `f0..f{D-1},label`.
///
/// Empty or `-1` label cells mean unlabeled. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing `label` column in header".to_string(),
        })?;
    let feat_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_col).collect();

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record?;
        for &c in &feat_cols {
            let cell = record.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing column {c}"),
            })?;
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature cell `{cell}`"),
            })?;
            rows.push(v);
        }
        let cell = record.get(label_col).unwrap_or("").trim();
        let label = match cell {
            "" | "-1" => None,
            s => Some(s.parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("label cell `{s}` is not a non-negative integer"),
            })?),
        };
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let n = labels.len();
    let d = feat_cols.len();
    let features = DMatrix::from_row_slice(n, d, &rows);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(features, labels, name)
}

/// Writes a dataset as CSV, shortest round-trip float formatting.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for i in 0..ds.len() {
        let mut record: Vec<String> = (0..ds.dim())
            .map(|j| format!("{}", ds.features[(i, j)]))
            .collect();
        record.push(ds.labels[i].map_or(String::new(), |l| l.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Synthesizes isotropic Gaussian blobs with per-class partial labeling.
///
/// Class means are standard normal in `dim` dimensions; points are
/// `mean + spread * N(0, I)`. Exactly `ceil(label_fraction * per_class)`
/// examples per class keep their label. Rows are grouped by class. The
/// output is a pure function of the arguments.
pub fn gen_blobs(
    seed: u64,
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    label_fraction: f64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("classes must be >= 2"));
    }
    if per_class < 2 {
        return Err(Error::invalid("per_class must be >= 2"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim must be >= 1"));
    }
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::invalid("label_fraction must be in (0, 1]"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread must be finite and >= 0"));
    }
    let mut rng = rng_from_seed(seed);
    let normal = StandardNormal;

    // Draw order is fixed: means, then points class by class, then the
    // labeled subset of each class.
    let means: DMatrix<f64> = DMatrix::from_fn(classes, dim, |_, _| normal.sample(&mut rng));
    let n = classes * per_class;
    let mut features = DMatrix::zeros(n, dim);
    for c in 0..classes {
        for i in 0..per_class {
            let row = c * per_class + i;
            for j in 0..dim {
                let noise: f64 = normal.sample(&mut rng);
                features[(row, j)] = means[(c, j)] + spread * noise;
            }
        }
    }
    let n_lab = (label_fraction * per_class as f64).ceil() as usize;
    let mut labels = vec![None; n];
    for c in 0..classes {
        for i in sample_without_replacement(&mut rng, per_class, n_lab) {
            labels[c * per_class + i] = Some(c);
        }
    }
    let name = format!("blobs-s{seed}-c{classes}x{per_class}-d{dim}");
    Dataset::new(features, labels, name)
}

/// Samples a round's partition: every labeled row plus `min(n_p, N_U)`
/// unlabeled rows drawn uniformly without replacement.
pub fn sample_partition(ds: &Dataset, n_p: usize, seed: u64) -> Result<Partition> {
    let labeled_idx = ds.labeled_indices();
    let pool = ds.unlabeled_indices();
    if pool.is_empty() {
        return Err(Error::invalid("dataset has no unlabeled examples"));
    }
    let m = n_p.min(pool.len());
    let mut rng = rng_from_seed(seed);
    let mut picked: Vec<usize> = sample_without_replacement(&mut rng, pool.len(), m)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    Ok(Partition {
        labeled_idx,
        unlabeled_idx: picked,
    })
}

/// Per-class stratified validation split of the labeled examples.
///
/// Each class contributes `ceil(fraction * n_c)` examples to the validation
/// set (capped at `n_c - 1` so training keeps at least one per class);
/// unlabeled examples all stay in train. Classes with fewer than two labeled
/// examples are an error.
pub fn validation_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction must be in (0, 1)"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        if let Some(c) = ds.label(i) {
            by_class.entry(c).or_default().push(i);
        }
    }
    if by_class.is_empty() {
        return Err(Error::invalid("dataset has no labeled examples"));
    }
    let mut rng = rng_from_seed(seed);
    let mut in_val = vec![false; ds.len()];
    for (c, members) in &by_class {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {c} has only {} labeled example(s); need >= 2",
                members.len()
            )));
        }
        let n_val = ((fraction * members.len() as f64).ceil() as usize).min(members.len() - 1);
        for i in sample_without_replacement(&mut rng, members.len(), n_val) {
            in_val[members[i]] = true;
        }
    }
    let val_rows: Vec<usize> = (0..ds.len()).filter(|&i| in_val[i]).collect();
    let train_rows: Vec<usize> = (0..ds.len()).filter(|&i| !in_val[i]).collect();
    let split = |rows: &[usize], suffix: &str| -> Result<Dataset> {
        Dataset::new(
            ds.gather(rows),
            rows.iter().map(|&i| ds.label(i)).collect(),
            format!("{}-{suffix}", ds.name),
        )
    };
    Ok((split(&train_rows, "train")?, split(&val_rows, "val")?))
}
