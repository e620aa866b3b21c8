//! Per-sample query scores over the unlabeled pool: closed-set entropy from
//! the one-vs-all heads, distance-based entropy against active-unknown
//! cluster centers, and their difference, which drives sample selection.

use rayon::prelude::*;

use crate::data::{Dataset, PoolState};
use crate::error::{Error, Result};
use crate::finch::Partition;
use crate::matrix::{euclidean_distance, Matrix};
use crate::nnkit::ModelBundle;
use crate::scalar::{real, Scalar};

/// Softmax temperature for the distance-based entropy; must be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature<T>(T);

impl<T: Scalar> Temperature<T> {
    pub fn new(t: T) -> Result<Self> {
        if !(t > T::zero()) || !t.is_finite() {
            return Err(Error::config(format!("temperature must be > 0, got {t}")));
        }
        Ok(Temperature(t))
    }

    pub fn get(&self) -> T {
        self.0
    }
}

#[inline]
fn binary_entropy<T: Scalar>(p: T) -> T {
    // 0 * ln 0 := 0 keeps the entropy continuous at the endpoints.
    let p = p.max(T::zero()).min(T::one());
    let mut h = T::zero();
    if p > T::zero() {
        h -= p * p.ln();
    }
    let q = T::one() - p;
    if q > T::zero() {
        h -= q * q.ln();
    }
    h
}

/// Mean normalized binary entropy of the per-class positive probabilities:
/// `(1/(K ln 2)) sum_i H(p_i)`, in `[0, 1]`.
pub fn closed_set_entropy<T: Scalar>(p: &[T]) -> T {
    if p.is_empty() {
        return T::zero();
    }
    let sum: T = p.iter().map(|&v| binary_entropy(v)).sum();
    let norm = real::<T>(p.len() as f64) * real::<T>(std::f64::consts::LN_2);
    (sum / norm).max(T::zero()).min(T::one())
}

/// Normalized entropy of the cluster-membership distribution
/// `q_i = softmax(-|f - c_i| / T)`, in `[0, 1]`. Needs at least two centers;
/// with one center the normalizer `ln K` vanishes.
pub fn distance_entropy<T: Scalar>(
    feature: &[T],
    centers: &Matrix<T>,
    temperature: Temperature<T>,
) -> Result<T> {
    let k = centers.rows();
    if k < 2 {
        return Err(Error::config(format!(
            "distance entropy needs at least 2 cluster centers, got {k}"
        )));
    }
    if centers.cols() != feature.len() {
        return Err(Error::shape(format!(
            "feature dim {} vs center dim {}",
            feature.len(),
            centers.cols()
        )));
    }
    let t = temperature.get();
    let scaled: Vec<T> = (0..k)
        .map(|i| -euclidean_distance(feature, centers.row(i)) / t)
        .collect();
    let max = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    let denom: T = scaled.iter().map(|&z| (z - max).exp()).sum();
    let log_denom = denom.ln() + max;

    let mut entropy = T::zero();
    for &z in &scaled {
        let q = (z - log_denom).exp();
        if q > T::zero() {
            entropy -= q * q.ln();
        }
    }
    let norm = real::<T>(k as f64).ln();
    Ok((entropy / norm).max(T::zero()).min(T::one()))
}

/// Scores for one unlabeled sample. `s = s_c - s_d` exactly;
/// `predicted_class` is the argmax of the `(K+1)`-way head (0 = open set).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord<T> {
    pub id: u64,
    pub s_c: T,
    pub s_d: T,
    pub s: T,
    pub predicted_class: u32,
}

/// Scores for the whole unlabeled pool, plus the extracted features cached
/// for the query strategy's clustering step (row `i` belongs to
/// `records[i]`).
#[derive(Debug, Clone)]
pub struct ScoreTable<T> {
    pub records: Vec<ScoreRecord<T>>,
    pub features: Matrix<T>,
}

/// How the closed-set entropy is sourced: the one-vs-all binary heads
/// (default) or, when that block is ablated, the known-class probabilities of
/// the `(K+1)`-way head, each taken against its own complement.
#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions<T> {
    pub temperature: Temperature<T>,
    pub closed_set_from_classifier: bool,
}

/// Scores every id in the unlabeled pool (in pool order): one extractor pass,
/// closed-set entropy per sample, distance entropy against the given
/// active-unknown centers (zero when absent), and the classifier argmax.
pub fn score_pool<T: Scalar>(
    pools: &PoolState,
    dataset: &Dataset<T>,
    bundle: &ModelBundle<T>,
    au_partition: Option<&Partition<T>>,
    options: &ScoreOptions<T>,
) -> Result<ScoreTable<T>> {
    let ids = &pools.unlabeled;
    if ids.is_empty() {
        return Err(Error::config("unlabeled pool is empty"));
    }
    if !options.closed_set_from_classifier && !bundle.has_binary_heads() {
        return Err(Error::consistency(
            "closed-set entropy requested from binary heads, but the bundle has none",
        ));
    }
    if let Some(part) = au_partition {
        if part.centroids.rows() < 2 {
            return Err(Error::config(
                "distance scoring needs at least 2 cluster centers",
            ));
        }
        if part.centroids.cols() != bundle.feature_dim() {
            return Err(Error::shape(format!(
                "cluster centers have dim {}, features have dim {}",
                part.centroids.cols(),
                bundle.feature_dim()
            )));
        }
    }

    let input = dataset.features_of(ids)?;
    let features = parallel_features(bundle, &input)?;
    let logits = bundle.classifier.forward(&features)?;
    let k = bundle.k();

    let probs: Option<Matrix<T>> = if options.closed_set_from_classifier {
        None
    } else {
        Some(bundle.binary_forward(&features)?.probs)
    };

    let records: Vec<ScoreRecord<T>> = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let s_c = match &probs {
                Some(p) => closed_set_entropy(p.row(i)),
                None => {
                    let q = softmax_row(logits.row(i));
                    closed_set_entropy(&q[1..=k])
                }
            };
            let s_d = match au_partition {
                Some(part) => {
                    distance_entropy(features.row(i), &part.centroids, options.temperature)
                        .expect("centers validated above")
                }
                None => T::zero(),
            };
            let row = logits.row(i);
            let mut predicted = 0usize;
            for (j, &z) in row.iter().enumerate() {
                if z > row[predicted] {
                    predicted = j;
                }
            }
            ScoreRecord {
                id: ids[i],
                s_c,
                s_d,
                s: s_c - s_d,
                predicted_class: predicted as u32,
            }
        })
        .collect();

    Ok(ScoreTable { records, features })
}

/// Chunked parallel feature extraction; concatenation preserves row order so
/// the result is identical to a single sequential pass.
fn parallel_features<T: Scalar>(bundle: &ModelBundle<T>, input: &Matrix<T>) -> Result<Matrix<T>> {
    const CHUNK: usize = 512;
    let n = input.rows();
    if n <= CHUNK {
        return bundle.feature.output(input);
    }
    let chunk_indices: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(CHUNK)
        .map(|c| c.to_vec())
        .collect();
    let parts: Vec<Matrix<T>> = chunk_indices
        .par_iter()
        .map(|idx| bundle.feature.output(&input.gather_rows(idx)))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(n, bundle.feature_dim());
    let mut row = 0usize;
    for part in parts {
        for i in 0..part.rows() {
            out.row_mut(row).copy_from_slice(part.row(i));
            row += 1;
        }
    }
    Ok(out)
}

fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
    let denom: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / denom).collect()
}
