//! First-neighbor hierarchical clustering with an exact-cluster-count mode.
//!
//! One linkage level connects `i ~ j` whenever `j = nn(i)`, `i = nn(j)`, or
//! `nn(i) = nn(j)`; clusters are the connected components of that graph.
//! Levels recurse on centroids until the cluster count stops shrinking.
//! [`partition_at_k`] reconciles the natural partition counts with a required
//! `K` by greedy closest-centroid merging (or sub-partition splitting when
//! even the finest level is too coarse).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{euclidean_distance, Matrix};
use crate::scalar::{real, Scalar};

/// Distance used for neighbor search and centroid merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        match self {
            Metric::Euclidean => euclidean_distance(a, b),
            Metric::Cosine => {
                let mut dot = T::zero();
                let mut na = T::zero();
                let mut nb = T::zero();
                for (&x, &y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                let denom = na.sqrt() * nb.sqrt();
                if denom <= real(1e-30) {
                    return T::one(); // zero vectors carry no direction
                }
                T::one() - dot / denom
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::config(format!(
                "unknown metric `{other}` (expected euclidean or cosine)"
            ))),
        }
    }
}

/// A clustering of a sample set: per-sample labels in `0..k`, the cluster
/// count, and per-cluster centroids (arithmetic means of member features).
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Matrix<T>,
}

impl<T: Scalar> Partition<T> {
    fn from_labels(features: &Matrix<T>, labels: Vec<usize>) -> Self {
        let (labels, k) = canonicalize(labels);
        let centroids = centroids_of(features, &labels, k);
        Partition {
            labels,
            k,
            centroids,
        }
    }

    /// Member row indices per cluster, in sample order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Relabels clusters in order of first appearance; returns the labels and
/// the cluster count.
fn canonicalize(labels: Vec<usize>) -> (Vec<usize>, usize) {
    let mut map: Vec<Option<usize>> = vec![None; labels.len().max(labels.iter().map(|l| l + 1).max().unwrap_or(0))];
    let mut next = 0usize;
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let target = match map[l] {
            Some(t) => t,
            None => {
                let t = next;
                map[l] = Some(t);
                next += 1;
                t
            }
        };
        out.push(target);
    }
    (out, next)
}

fn centroids_of<T: Scalar>(features: &Matrix<T>, labels: &[usize], k: usize) -> Matrix<T> {
    let mut sums = Matrix::zeros(k, features.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let row = sums.row_mut(l);
        for (s, &f) in row.iter_mut().zip(features.row(i)) {
            *s += f;
        }
    }
    for (l, &c) in counts.iter().enumerate() {
        if c > 0 {
            let inv = T::one() / real::<T>(c as f64);
            for v in sums.row_mut(l) {
                *v *= inv;
            }
        }
    }
    sums
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb.max(ra)] = rb.min(ra);
        }
    }
}

/// First nearest neighbor of every row: `nn[i] = argmin_{j != i} d(i, j)`,
/// ties broken toward the smaller index.
pub fn first_neighbors<T: Scalar>(features: &Matrix<T>, metric: Metric) -> Result<Vec<usize>> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::config(format!(
            "first-neighbor search needs at least 2 samples, got {n}"
        )));
    }
    let mut nn = vec![0usize; n];
    for i in 0..n {
        let mut best = usize::MAX;
        let mut best_d = T::infinity();
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = metric.distance(features.row(i), features.row(j));
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        nn[i] = best;
    }
    Ok(nn)
}

/// One linkage level: connected components of the first-neighbor relation.
pub fn finch_partition<T: Scalar>(features: &Matrix<T>, metric: Metric) -> Result<Partition<T>> {
    let nn = first_neighbors(features, metric)?;
    let mut uf = UnionFind::new(features.rows());
    // Linking every node to its first neighbor realizes all three adjacency
    // conditions: j = nn(i) and i = nn(j) directly, nn(i) = nn(j) transitively.
    for (i, &j) in nn.iter().enumerate() {
        uf.union(i, j);
    }
    let labels: Vec<usize> = (0..features.rows()).map(|i| uf.find(i)).collect();
    Ok(Partition::from_labels(features, labels))
}

/// Recursive linkage levels with strictly decreasing cluster counts. Level 0
/// clusters the samples; level `t+1` clusters the level-`t` centroids, with
/// labels composed back onto the original samples.
pub fn finch_hierarchy<T: Scalar>(features: &Matrix<T>, metric: Metric) -> Result<Vec<Partition<T>>> {
    let mut levels = vec![finch_partition(features, metric)?];
    loop {
        let prev = levels.last().expect("at least one level");
        if prev.k < 2 {
            break;
        }
        let coarse = finch_partition(&prev.centroids, metric)?;
        if coarse.k >= prev.k {
            break;
        }
        let composed: Vec<usize> = prev.labels.iter().map(|&l| coarse.labels[l]).collect();
        levels.push(Partition::from_labels(features, composed));
    }
    Ok(levels)
}

/// Exactly `target_k` clusters: picks the hierarchy level with the smallest
/// count `>= target_k` and greedily merges closest centroids; if even the
/// finest level is too coarse, splits the largest cluster by its own
/// sub-partition (singletons when indivisible) until the count is reachable.
pub fn partition_at_k<T: Scalar>(
    features: &Matrix<T>,
    target_k: usize,
    metric: Metric,
) -> Result<Partition<T>> {
    let n = features.rows();
    if target_k == 0 {
        return Err(Error::config("cluster count must be >= 1"));
    }
    if target_k > n {
        return Err(Error::config(format!(
            "cannot form {target_k} clusters from {n} samples"
        )));
    }
    if target_k == n {
        return Ok(Partition::from_labels(features, (0..n).collect()));
    }
    if target_k == 1 {
        return Ok(Partition::from_labels(features, vec![0; n]));
    }

    let levels = finch_hierarchy(features, metric)?;
    // Levels have strictly decreasing k; take the coarsest level still >= K.
    let base = levels
        .iter()
        .rev()
        .find(|p| p.k >= target_k)
        .cloned()
        .unwrap_or_else(|| levels[0].clone());

    let mut labels = base.labels;
    let mut k = base.k;

    // Finest natural level is still coarser than K: split clusters.
    while k < target_k {
        let sizes = {
            let mut s = vec![0usize; k];
            for &l in &labels {
                s[l] += 1;
            }
            s
        };
        let (largest, &size) = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one cluster");
        if size < 2 {
            return Err(Error::consistency(
                "cannot split singleton clusters further",
            ));
        }
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == largest).collect();
        let sub_features = features.gather_rows(&members);
        let sub = finch_partition(&sub_features, metric)?;
        if sub.k > 1 {
            for (pos, &i) in members.iter().enumerate() {
                if sub.labels[pos] > 0 {
                    labels[i] = k + sub.labels[pos] - 1;
                }
            }
            k += sub.k - 1;
        } else {
            // Indivisible by first-neighbor structure: fall back to singletons.
            for (pos, &i) in members.iter().enumerate() {
                if pos > 0 {
                    labels[i] = k + pos - 1;
                }
            }
            k += members.len() - 1;
        }
    }

    // Merge the closest centroid pair until exactly K clusters remain.
    let (labels, _) = canonicalize(labels);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        clusters[l].push(i);
    }
    let mut centroids: Vec<Vec<T>> = {
        let m = centroids_of(features, &labels, k);
        (0..k).map(|i| m.row(i).to_vec()).collect()
    };

    while clusters.len() > target_k {
        let mut best = (0usize, 1usize);
        let mut best_d = T::infinity();
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let d = metric.distance(&centroids[i], &centroids[j]);
                if d < best_d {
                    best_d = d;
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        let absorbed = clusters.remove(j);
        let absorbed_centroid = centroids.remove(j);
        let ni = real::<T>(clusters[i].len() as f64);
        let nj = real::<T>(absorbed.len() as f64);
        let total = ni + nj;
        for (c, &a) in centroids[i].iter_mut().zip(&absorbed_centroid) {
            *c = (*c * ni + a * nj) / total;
        }
        clusters[i].extend(absorbed);
    }

    let mut merged = vec![0usize; n];
    for (l, members) in clusters.iter().enumerate() {
        for &i in members {
            merged[i] = l;
        }
    }
    Ok(Partition::from_labels(features, merged))
}
