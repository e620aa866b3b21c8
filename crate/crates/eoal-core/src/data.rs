//! Synthetic dataset generation, CSV ingestion, open-set splits, and the
//! labeled / active-unknown / unlabeled / test pool bookkeeping.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::matrix::Matrix;
use crate::rng::rng_for;
use crate::scalar::{real, Scalar};

/// Label reserved for samples the oracle marks as outside the known classes.
pub const OPEN_SET_LABEL: u32 = 0;

/// One data point: id, feature vector, and its ground-truth class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: u64,
    pub features: Vec<T>,
    pub true_class: u32,
}

/// An immutable collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    dim: usize,
    index: HashMap<u64, usize>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset, enforcing unique ids, a uniform feature dimension,
    /// and finite components.
    pub fn new(samples: Vec<Sample<T>>, dim: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::shape(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    dim
                )));
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!(
                    "sample {} contains a non-finite feature",
                    s.id
                )));
            }
            if index.insert(s.id, pos).is_some() {
                return Err(Error::config(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Dataset {
            samples,
            dim,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn get(&self, id: u64) -> Option<&Sample<T>> {
        self.index.get(&id).map(|&pos| &self.samples[pos])
    }

    pub fn true_class(&self, id: u64) -> Result<u32> {
        self.get(id)
            .map(|s| s.true_class)
            .ok_or_else(|| Error::consistency(format!("unknown sample id {id}")))
    }

    /// Distinct class ids, ascending.
    pub fn class_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .samples
            .iter()
            .map(|s| s.true_class)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Feature rows for the given ids, in the given order.
    pub fn features_of(&self, ids: &[u64]) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(ids.len(), self.dim);
        for (k, &id) in ids.iter().enumerate() {
            let s = self
                .get(id)
                .ok_or_else(|| Error::consistency(format!("unknown sample id {id}")))?;
            out.row_mut(k).copy_from_slice(&s.features);
        }
        Ok(out)
    }
}

/// Generates an isotropic Gaussian-blob classification dataset. Class means
/// lie uniformly on the sphere of the given radius; each sample is its class
/// mean plus `sigma`-scaled Gaussian noise. Fully determined by `seed`.
pub fn generate_blobs<T: Scalar>(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if n_classes < 2 {
        return Err(Error::config(format!("n_classes must be >= 2, got {n_classes}")));
    }
    if per_class < 1 {
        return Err(Error::config("per_class must be >= 1"));
    }
    if dim < 2 {
        return Err(Error::config(format!("dim must be >= 2, got {dim}")));
    }
    if !(radius > 0.0) {
        return Err(Error::config(format!("radius must be > 0, got {radius}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::config(format!("sigma must be >= 0, got {sigma}")));
    }

    let mut rng = rng_for(seed);
    // All class means are drawn before any sample noise, so the mean layout
    // for a given (n_classes, dim, radius, seed) does not depend on per_class
    // or sigma.
    let mut means = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                means.push(v.into_iter().map(|x| x / norm * radius).collect::<Vec<_>>());
                break;
            }
        }
    }

    let mut samples = Vec::with_capacity(n_classes * per_class);
    let mut id = 0u64;
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features: Vec<T> = mean
                .iter()
                .map(|&m| {
                    let noise: f64 = rng.sample(StandardNormal);
                    real(m + sigma * noise)
                })
                .collect();
            samples.push(Sample {
                id,
                features,
                true_class: (c + 1) as u32,
            });
            id += 1;
        }
    }
    Dataset::new(samples, dim)
}

/// Loads a dataset from a `id,label,f1,...,fd` CSV file. The feature
/// dimension is inferred from the header and enforced on every row.
pub fn load_csv<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let display = path.display().to_string();
    let parse_err = |row: usize, message: String| Error::Parse {
        path: display.clone(),
        row,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::config(format!("cannot open {display}: {e}")))?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(rec)) => rec,
        Some(Err(e)) => return Err(parse_err(1, format!("unreadable header: {e}"))),
        None => return Err(parse_err(1, "empty file".into())),
    };
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(
            1,
            format!(
                "header must be `id,label,f1,...,fd`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let dim = header.len() - 2;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2; // 1-based, after the header
        let rec = rec.map_err(|e| parse_err(line, format!("unreadable row: {e}")))?;
        if rec.len() != dim + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, got {}", dim + 2, rec.len()),
            ));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("non-numeric id `{}`", &rec[0])))?;
        if !seen.insert(id) {
            return Err(parse_err(line, format!("duplicate id {id}")));
        }
        let label: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("non-numeric label `{}`", &rec[1])))?;
        if label == OPEN_SET_LABEL {
            return Err(parse_err(
                line,
                "label 0 is reserved for the open-set class".to_string(),
            ));
        }
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let raw = rec[j + 2].trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric feature `{raw}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature `{raw}`")));
            }
            features.push(real(v));
        }
        samples.push(Sample {
            id,
            features,
            true_class: label,
        });
    }
    Dataset::new(samples, dim)
}

/// Writes a dataset in the same CSV schema `load_csv` reads. Floats are
/// printed in shortest round-trip form, so save/load is lossless.
pub fn save_csv<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    let mut out = String::from("id,label");
    for j in 1..=dataset.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for s in dataset.samples() {
        out.push_str(&format!("{},{}", s.id, s.true_class));
        for v in &s.features {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Partition of a dataset's classes into knowns (remapped to `1..=K`) and
/// unknowns (collapsed to the open-set label 0 at annotation time).
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetSplit {
    known_classes: Vec<u32>,
    unknown_classes: Vec<u32>,
    remap: HashMap<u32, u32>,
}

impl OpenSetSplit {
    pub fn known_classes(&self) -> &[u32] {
        &self.known_classes
    }

    pub fn unknown_classes(&self) -> &[u32] {
        &self.unknown_classes
    }

    /// Number of known classes K.
    pub fn k(&self) -> usize {
        self.known_classes.len()
    }

    pub fn is_known(&self, class: u32) -> bool {
        self.remap.contains_key(&class)
    }

    /// Remapped label in `1..=K` for a known class, `None` for unknowns.
    pub fn remap_label(&self, class: u32) -> Option<u32> {
        self.remap.get(&class).copied()
    }

    /// Fraction of classes that are known, `K / (K + |U|)`.
    pub fn mismatch_ratio(&self) -> f64 {
        let k = self.known_classes.len() as f64;
        k / (k + self.unknown_classes.len() as f64)
    }
}

/// Chooses `K = round(mismatch_ratio * C_total)` classes uniformly at random
/// as knowns and remaps them to contiguous labels `1..=K` in ascending
/// original-id order.
pub fn make_split<T: Scalar>(
    dataset: &Dataset<T>,
    mismatch_ratio: f64,
    seed: u64,
) -> Result<OpenSetSplit> {
    let classes = dataset.class_ids();
    let c_total = classes.len();
    let k = (mismatch_ratio * c_total as f64).round() as i64;
    if k < 2 {
        return Err(Error::config(format!(
            "mismatch ratio {mismatch_ratio} over {c_total} classes yields K={k} < 2"
        )));
    }
    let k = k as usize;
    if k >= c_total {
        return Err(Error::config(format!(
            "mismatch ratio {mismatch_ratio} over {c_total} classes leaves no unknown classes"
        )));
    }

    let mut rng = rng_for(seed);
    let mut shuffled = classes.clone();
    shuffled.shuffle(&mut rng);
    let mut known: Vec<u32> = shuffled[..k].to_vec();
    known.sort_unstable();
    let mut unknown: Vec<u32> = shuffled[k..].to_vec();
    unknown.sort_unstable();
    let remap = known
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, (i + 1) as u32))
        .collect();
    Ok(OpenSetSplit {
        known_classes: known,
        unknown_classes: unknown,
        remap,
    })
}

/// The four evolving sample pools of one experiment. Id sets are pairwise
/// disjoint and their union never changes after initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    /// Annotated known samples: (id, remapped label in `1..=K`).
    pub labeled: Vec<(u64, u32)>,
    /// Queried samples the oracle flagged as open-set.
    pub active_unknown: Vec<u64>,
    /// Remaining pool available for querying.
    pub unlabeled: Vec<u64>,
    /// Frozen held-out known-class samples: (id, remapped label).
    pub test: Vec<(u64, u32)>,
}

impl PoolState {
    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_active_unknown(&self) -> usize {
        self.active_unknown.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn n_test(&self) -> usize {
        self.test.len()
    }

    pub fn total(&self) -> usize {
        self.n_labeled() + self.n_active_unknown() + self.n_unlabeled() + self.n_test()
    }

    /// Checks the pool partition invariant and oracle fidelity against the
    /// originating dataset and split.
    pub fn validate<T: Scalar>(&self, dataset: &Dataset<T>, split: &OpenSetSplit) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.total());
        let mut check_unique = |id: u64| -> Result<()> {
            if !seen.insert(id) {
                return Err(Error::consistency(format!("id {id} appears in two pools")));
            }
            if dataset.get(id).is_none() {
                return Err(Error::consistency(format!("id {id} not in dataset")));
            }
            Ok(())
        };
        for &(id, label) in &self.labeled {
            check_unique(id)?;
            let class = dataset.true_class(id)?;
            if split.remap_label(class) != Some(label) {
                return Err(Error::consistency(format!(
                    "labeled id {id} carries label {label}, oracle says {:?}",
                    split.remap_label(class)
                )));
            }
        }
        for &id in &self.active_unknown {
            check_unique(id)?;
            if split.is_known(dataset.true_class(id)?) {
                return Err(Error::consistency(format!(
                    "active-unknown id {id} is actually a known-class sample"
                )));
            }
        }
        for &id in &self.unlabeled {
            check_unique(id)?;
        }
        for &(id, label) in &self.test {
            check_unique(id)?;
            let class = dataset.true_class(id)?;
            if split.remap_label(class) != Some(label) {
                return Err(Error::consistency(format!(
                    "test id {id} carries label {label}, oracle says {:?}",
                    split.remap_label(class)
                )));
            }
        }
        Ok(())
    }

    /// Moves annotated ids out of the unlabeled pool: knowns into `labeled`,
    /// open-set samples into `active_unknown`. Returns the updated state.
    pub fn apply_annotations<T: Scalar>(
        &self,
        dataset: &Dataset<T>,
        split: &OpenSetSplit,
        known_adds: &[(u64, u32)],
        unknown_adds: &[u64],
    ) -> Result<PoolState> {
        let unlabeled_set: HashSet<u64> = self.unlabeled.iter().copied().collect();
        let mut moving = HashSet::with_capacity(known_adds.len() + unknown_adds.len());
        let mut take = |id: u64| -> Result<()> {
            if !unlabeled_set.contains(&id) {
                return Err(Error::consistency(format!(
                    "id {id} is not in the unlabeled pool"
                )));
            }
            if !moving.insert(id) {
                return Err(Error::consistency(format!("id {id} annotated twice")));
            }
            Ok(())
        };

        for &(id, label) in known_adds {
            take(id)?;
            let class = dataset.true_class(id)?;
            if split.remap_label(class) != Some(label) {
                return Err(Error::consistency(format!(
                    "id {id} annotated as known label {label}, oracle says {:?}",
                    split.remap_label(class)
                )));
            }
        }
        for &id in unknown_adds {
            take(id)?;
            if split.is_known(dataset.true_class(id)?) {
                return Err(Error::consistency(format!(
                    "id {id} annotated as unknown but belongs to a known class"
                )));
            }
        }

        let mut next = self.clone();
        next.labeled.extend_from_slice(known_adds);
        next.labeled.sort_unstable_by_key(|&(id, _)| id);
        next.active_unknown.extend_from_slice(unknown_adds);
        next.active_unknown.sort_unstable();
        next.unlabeled.retain(|id| !moving.contains(id));
        Ok(next)
    }
}

/// Carves the frozen test split from the known classes, seeds the initial
/// labeled pool (uniform over known samples with a floor of one per known
/// class), and leaves everything else unlabeled.
pub fn init_pools<T: Scalar>(
    dataset: &Dataset<T>,
    split: &OpenSetSplit,
    initial_label_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<PoolState> {
    for (name, f) in [
        ("initial_label_fraction", initial_label_fraction),
        ("test_fraction", test_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(format!("{name} must be in (0,1), got {f}")));
        }
    }

    let mut rng = rng_for(seed);
    let mut test: Vec<(u64, u32)> = Vec::new();
    let mut remaining_by_class: Vec<Vec<u64>> = Vec::with_capacity(split.k());

    for &class in split.known_classes() {
        let mut ids: Vec<u64> = dataset
            .samples()
            .iter()
            .filter(|s| s.true_class == class)
            .map(|s| s.id)
            .collect();
        ids.shuffle(&mut rng);
        let n_test = ((test_fraction * ids.len() as f64).round() as usize).min(ids.len());
        let label = split.remap_label(class).expect("known class");
        for &id in &ids[..n_test] {
            test.push((id, label));
        }
        let rest: Vec<u64> = ids[n_test..].to_vec();
        if rest.is_empty() {
            return Err(Error::config(format!(
                "class {class} has no samples left for labeling after the test split"
            )));
        }
        remaining_by_class.push(rest);
    }
    if test.is_empty() {
        return Err(Error::config(
            "test fraction rounds to an empty test set",
        ));
    }

    let n_remaining_known: usize = remaining_by_class.iter().map(Vec::len).sum();
    let target = ((initial_label_fraction * n_remaining_known as f64).round() as usize)
        .max(split.k())
        .min(n_remaining_known);

    // One guaranteed sample per known class, then fill uniformly.
    let mut labeled_ids: Vec<u64> = Vec::with_capacity(target);
    let mut leftover: Vec<u64> = Vec::new();
    for ids in &remaining_by_class {
        labeled_ids.push(ids[0]);
        leftover.extend_from_slice(&ids[1..]);
    }
    leftover.shuffle(&mut rng);
    for &id in leftover.iter().take(target.saturating_sub(split.k())) {
        labeled_ids.push(id);
    }
    if labeled_ids.is_empty() {
        return Err(Error::config("initial labeled pool is empty"));
    }

    let labeled_set: HashSet<u64> = labeled_ids.iter().copied().collect();
    let test_set: HashSet<u64> = test.iter().map(|&(id, _)| id).collect();

    let mut labeled: Vec<(u64, u32)> = labeled_ids
        .into_iter()
        .map(|id| {
            let class = dataset.true_class(id).expect("id from dataset");
            (id, split.remap_label(class).expect("known class"))
        })
        .collect();
    labeled.sort_unstable_by_key(|&(id, _)| id);
    test.sort_unstable_by_key(|&(id, _)| id);

    let unlabeled: Vec<u64> = dataset
        .samples()
        .iter()
        .map(|s| s.id)
        .filter(|id| !labeled_set.contains(id) && !test_set.contains(id))
        .collect();

    let pools = PoolState {
        labeled,
        active_unknown: Vec::new(),
        unlabeled,
        test,
    };
    pools.validate(dataset, split)?;
    Ok(pools)
}
