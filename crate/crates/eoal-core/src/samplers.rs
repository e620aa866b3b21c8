//! Query strategies: cluster-quota entropic selection and the random,
//! entropy, certainty, and k-center coreset baselines. Every strategy
//! returns exactly `min(budget, |pool|)` unique ids, deterministically.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finch::{partition_at_k, Metric};
use crate::matrix::{euclidean_distance, Matrix};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::scoring::ScoreTable;

/// One cycle's selection: the queried ids (ascending) and, for the
/// cluster-quota strategy, how many came from each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub selected_ids: Vec<u64>,
    pub per_cluster_counts: Option<Vec<usize>>,
}

/// Which samples are clustered for diversity: only those the classifier
/// predicts as a known class, or the whole unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterDomain {
    PredictedKnown,
    AllUnlabeled,
}

/// Switches of the entropic query strategy. Defaults run the full method;
/// ablations disable individual ingredients.
#[derive(Debug, Clone, Copy)]
pub struct EoalOptions {
    /// Include the closed-set entropy in the selection score.
    pub use_s_c: bool,
    /// Include the distance-based entropy in the selection score.
    pub use_s_d: bool,
    /// Cluster candidates and spread the budget across clusters.
    pub use_diversity: bool,
    /// Pick randomly within each cluster instead of by score.
    pub diversity_only: bool,
    pub cluster_domain: ClusterDomain,
    pub metric: Metric,
    /// Seed for the random within-cluster picks of `diversity_only`.
    pub seed: u64,
}

impl Default for EoalOptions {
    fn default() -> Self {
        EoalOptions {
            use_s_c: true,
            use_s_d: true,
            use_diversity: true,
            diversity_only: false,
            cluster_domain: ClusterDomain::PredictedKnown,
            metric: Metric::Euclidean,
            seed: 0,
        }
    }
}

fn effective_score<T: Scalar>(rec: &crate::scoring::ScoreRecord<T>, opts: &EoalOptions) -> T {
    let mut s = T::zero();
    if opts.use_s_c {
        s += rec.s_c;
    }
    if opts.use_s_d {
        s -= rec.s_d;
    }
    s
}

/// Sorts candidate row indices ascending by (score, id).
fn sort_by_score<T: Scalar>(indices: &mut [usize], scores: &[T], ids: &[u64]) {
    indices.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores are finite")
            .then(ids[a].cmp(&ids[b]))
    });
}

/// Entropic cluster-quota selection. Filters the pool to the cluster domain,
/// partitions the cached features into `k` clusters, and takes the
/// `budget/k` lowest-score samples per cluster (the remainder goes one each
/// to the largest clusters). Shortfalls spill to the lowest-score unselected
/// candidates, then to the rest of the pool.
pub fn eoal_query<T: Scalar>(
    table: &ScoreTable<T>,
    budget: usize,
    k: usize,
    opts: &EoalOptions,
) -> Result<QueryResult> {
    let n = table.records.len();
    if n == 0 {
        return Err(Error::config("unlabeled pool is empty"));
    }
    if budget == 0 {
        return Err(Error::config("budget must be >= 1"));
    }
    if k == 0 {
        return Err(Error::config("cluster count must be >= 1"));
    }
    let b_eff = budget.min(n);
    let ids: Vec<u64> = table.records.iter().map(|r| r.id).collect();
    let scores: Vec<T> = table
        .records
        .iter()
        .map(|r| effective_score(r, opts))
        .collect();

    if !opts.use_diversity {
        // Global lowest-score selection over the whole pool.
        let mut order: Vec<usize> = (0..n).collect();
        sort_by_score(&mut order, &scores, &ids);
        let mut selected: Vec<u64> = order[..b_eff].iter().map(|&i| ids[i]).collect();
        selected.sort_unstable();
        return Ok(QueryResult {
            selected_ids: selected,
            per_cluster_counts: None,
        });
    }

    let k_classes = k as u32;
    let candidates: Vec<usize> = match opts.cluster_domain {
        ClusterDomain::PredictedKnown => (0..n)
            .filter(|&i| {
                let c = table.records[i].predicted_class;
                c >= 1 && c <= k_classes
            })
            .collect(),
        ClusterDomain::AllUnlabeled => (0..n).collect(),
    };

    let mut selected_rows: Vec<usize> = Vec::with_capacity(b_eff);
    let mut taken = vec![false; n];
    let mut per_cluster_counts = Vec::new();

    if !candidates.is_empty() {
        let k_c = k.min(candidates.len());
        let cand_features = table.features.gather_rows(&candidates);
        let partition = partition_at_k(&cand_features, k_c, opts.metric)?;

        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); partition.k];
        for (pos, &row) in candidates.iter().enumerate() {
            clusters[partition.labels[pos]].push(row);
        }

        // Quotas: floor(b/k) each, remainder to the largest clusters.
        let base = b_eff / partition.k;
        let remainder = b_eff % partition.k;
        let mut by_size: Vec<usize> = (0..partition.k).collect();
        by_size.sort_by(|&a, &b| clusters[b].len().cmp(&clusters[a].len()).then(a.cmp(&b)));
        let mut quotas = vec![base; partition.k];
        for &c in by_size.iter().take(remainder) {
            quotas[c] += 1;
        }

        let mut rng = rng_for(opts.seed);
        per_cluster_counts = vec![0usize; partition.k];
        for (c, members) in clusters.iter().enumerate() {
            let mut order = members.clone();
            if opts.diversity_only {
                order.shuffle(&mut rng);
            } else {
                sort_by_score(&mut order, &scores, &ids);
            }
            for &row in order.iter().take(quotas[c]) {
                selected_rows.push(row);
                taken[row] = true;
                per_cluster_counts[c] += 1;
            }
        }

        // Shortfall: lowest-score unselected candidates.
        if selected_rows.len() < b_eff {
            let mut rest: Vec<usize> = candidates.iter().copied().filter(|&r| !taken[r]).collect();
            sort_by_score(&mut rest, &scores, &ids);
            for &row in rest.iter().take(b_eff - selected_rows.len()) {
                selected_rows.push(row);
                taken[row] = true;
            }
        }
    }

    // Candidate set exhausted: fill from the remaining pool by score.
    if selected_rows.len() < b_eff {
        let mut rest: Vec<usize> = (0..n).filter(|&r| !taken[r]).collect();
        sort_by_score(&mut rest, &scores, &ids);
        for &row in rest.iter().take(b_eff - selected_rows.len()) {
            selected_rows.push(row);
        }
    }

    let mut selected: Vec<u64> = selected_rows.into_iter().map(|r| ids[r]).collect();
    selected.sort_unstable();
    Ok(QueryResult {
        selected_ids: selected,
        per_cluster_counts: Some(per_cluster_counts),
    })
}

/// Uniform sample without replacement, deterministic per seed.
pub fn random_query(unlabeled_ids: &[u64], budget: usize, seed: u64) -> QueryResult {
    let b_eff = budget.min(unlabeled_ids.len());
    let mut rng = rng_for(seed);
    let picked = rand::seq::index::sample(&mut rng, unlabeled_ids.len(), b_eff);
    let mut selected: Vec<u64> = picked.iter().map(|i| unlabeled_ids[i]).collect();
    selected.sort_unstable();
    QueryResult {
        selected_ids: selected,
        per_cluster_counts: None,
    }
}

fn top_by<T: Scalar>(
    ids: &[u64],
    keys: Vec<T>,
    budget: usize,
) -> QueryResult {
    let b_eff = budget.min(ids.len());
    let mut order: Vec<usize> = (0..ids.len()).collect();
    // Descending key, ties to the lower id.
    order.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .expect("keys are finite")
            .then(ids[a].cmp(&ids[b]))
    });
    let mut selected: Vec<u64> = order[..b_eff].iter().map(|&i| ids[i]).collect();
    selected.sort_unstable();
    QueryResult {
        selected_ids: selected,
        per_cluster_counts: None,
    }
}

/// Highest predictive Shannon entropy first.
pub fn entropy_query<T: Scalar>(ids: &[u64], probs: &Matrix<T>, budget: usize) -> Result<QueryResult> {
    if probs.rows() != ids.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} ids",
            probs.rows(),
            ids.len()
        )));
    }
    let keys: Vec<T> = (0..probs.rows())
        .map(|i| {
            let mut h = T::zero();
            for &p in probs.row(i) {
                if p > T::zero() {
                    h -= p * p.ln();
                }
            }
            h
        })
        .collect();
    Ok(top_by(ids, keys, budget))
}

/// Highest maximum class probability first.
pub fn certainty_query<T: Scalar>(
    ids: &[u64],
    probs: &Matrix<T>,
    budget: usize,
) -> Result<QueryResult> {
    if probs.rows() != ids.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} ids",
            probs.rows(),
            ids.len()
        )));
    }
    let keys: Vec<T> = (0..probs.rows())
        .map(|i| {
            probs
                .row(i)
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max)
        })
        .collect();
    Ok(top_by(ids, keys, budget))
}

/// Greedy k-center: repeatedly pick the unlabeled point farthest from every
/// labeled or already-selected point; ties go to the lower id.
pub fn coreset_query<T: Scalar>(
    labeled_features: &Matrix<T>,
    unlabeled_features: &Matrix<T>,
    unlabeled_ids: &[u64],
    budget: usize,
) -> Result<QueryResult> {
    if labeled_features.rows() == 0 {
        return Err(Error::config("coreset selection needs a non-empty labeled set"));
    }
    if unlabeled_features.rows() != unlabeled_ids.len() {
        return Err(Error::shape(format!(
            "{} feature rows for {} ids",
            unlabeled_features.rows(),
            unlabeled_ids.len()
        )));
    }
    let n = unlabeled_ids.len();
    let b_eff = budget.min(n);

    let mut min_dist: Vec<T> = (0..n)
        .map(|i| {
            (0..labeled_features.rows())
                .map(|l| euclidean_distance(unlabeled_features.row(i), labeled_features.row(l)))
                .fold(T::infinity(), T::min)
        })
        .collect();
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(b_eff);

    for _ in 0..b_eff {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    min_dist[i] > min_dist[b]
                        || (min_dist[i] == min_dist[b] && unlabeled_ids[i] < unlabeled_ids[b])
                }
            };
            if better {
                best = Some(i);
            }
        }
        let pick = best.expect("b_eff <= n leaves an unchosen point");
        chosen[pick] = true;
        selected.push(unlabeled_ids[pick]);
        for i in 0..n {
            if !chosen[i] {
                let d = euclidean_distance(unlabeled_features.row(i), unlabeled_features.row(pick));
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    selected.sort_unstable();
    Ok(QueryResult {
        selected_ids: selected,
        per_cluster_counts: None,
    })
}
