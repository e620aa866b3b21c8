//! Training objectives and their exact gradients: cross-entropy over the
//! `(K+1)`-way head, the hardest-negative one-vs-all binary loss, entropy
//! maximization on active unknowns, the tuplet compactness loss, and their
//! end-to-end combination through the feature extractor.

use crate::error::{Error, Result};
use crate::matrix::{euclidean_distance, Matrix};
use crate::nnkit::ModelBundle;
use crate::scalar::{real, Scalar};

/// Probabilities are clamped to `[1e-12, 1-1e-12]` before any logarithm; the
/// losses diverge at the boundary.
pub const PROB_CLAMP: f64 = 1e-12;

/// Distance gradients use `(f - c) / max(|f - c|, DIST_EPS)` so the L2 norm
/// stays differentiable at zero.
pub const DIST_EPS: f64 = 1e-12;

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = real::<T>(PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// Scalars of the combined objective: `lambda` weights the tuplet term,
/// `beta` weights the own-center distance inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda: T,
    pub beta: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(lambda: T, beta: T) -> Result<Self> {
        if lambda < T::zero() || beta < T::zero() {
            return Err(Error::config("lambda and beta must be non-negative"));
        }
        Ok(LossWeights { lambda, beta })
    }
}

/// Mean negative log-softmax probability of the true label. Labels live in
/// `0..=K` where 0 is the open-set class. Returns the loss value and its
/// gradient w.r.t. the logits.
pub fn ce_loss<T: Scalar>(logits: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
    let n = logits.rows();
    let classes = logits.cols();
    if n == 0 {
        return Err(Error::shape("empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    let inv_n = T::one() / real::<T>(n as f64);
    let mut value = T::zero();
    let mut grad = Matrix::zeros(n, classes);
    for (i, &label) in labels.iter().enumerate() {
        let y = label as usize;
        if y >= classes {
            return Err(Error::config(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &z in row {
            denom += (z - max).exp();
        }
        let log_denom = denom.ln() + max;
        value += (log_denom - row[y]) * inv_n;
        let g = grad.row_mut(i);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - log_denom).exp();
            g[j] = p * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((value, grad))
}

/// One-vs-all binary loss over positive probabilities `p` (`n x K`, labels in
/// `1..=K`): each sample pulls its own head positive and pushes only the
/// hardest negative head (the largest `p^j`, ties to the lowest class index).
/// Returns the loss and its gradient w.r.t. `p`.
pub fn bce_ova_loss<T: Scalar>(p: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
    let n = p.rows();
    let k = p.cols();
    if k < 2 {
        return Err(Error::config(format!(
            "one-vs-all loss needs K >= 2 heads, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::shape("empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), n)));
    }
    let inv_n = T::one() / real::<T>(n as f64);
    let mut value = T::zero();
    let mut grad = Matrix::zeros(n, k);
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 || label as usize > k {
            return Err(Error::config(format!(
                "label {label} out of range 1..={k}"
            )));
        }
        let y = (label - 1) as usize;
        let row = p.row(i);
        let mut hardest = None::<usize>;
        for j in 0..k {
            if j == y {
                continue;
            }
            if hardest.is_none_or(|h| row[j] > row[h]) {
                hardest = Some(j);
            }
        }
        let j = hardest.expect("K >= 2 guarantees a negative head");
        let py = clamp_prob(row[y]);
        let pj = clamp_prob(row[j]);
        value += -(py.ln()) - (T::one() - pj).ln();
        let g = grad.row_mut(i);
        g[y] = -(T::one() / py) * inv_n;
        g[j] = (T::one() / (T::one() - pj)) * inv_n;
    }
    Ok((value * inv_n, grad))
}

/// Entropy-maximization loss over active-unknown positive probabilities:
/// `(1/(K*n)) sum_x sum_i [-1/2 log p - 1/2 log(1-p)]`. Its minimum is
/// `ln 2`, attained when every probability is one half. Returns the loss and
/// its gradient w.r.t. `p`.
pub fn em_loss<T: Scalar>(p: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    let n = p.rows();
    let k = p.cols();
    if n == 0 {
        return Err(Error::shape("empty active-unknown batch"));
    }
    if k == 0 {
        return Err(Error::shape("no binary heads"));
    }
    let half = real::<T>(0.5);
    let scale = T::one() / real::<T>((k * n) as f64);
    let mut value = T::zero();
    let mut grad = Matrix::zeros(n, k);
    for i in 0..n {
        let row = p.row(i);
        let g = grad.row_mut(i);
        for (j, &raw) in row.iter().enumerate() {
            let pv = clamp_prob(raw);
            value += -(half * pv.ln()) - half * (T::one() - pv).ln();
            g[j] = scale * (-(half / pv) + half / (T::one() - pv));
        }
    }
    Ok((value * scale, grad))
}

/// Tuplet loss over active-unknown features and their fixed cluster centers:
/// `(1/n) sum_x [log(1 + sum_{j != y} e^{D_y - D_j}) + beta * D_y]` with
/// `D_i = |f - c_i|`. Cluster labels are 0-based center row indices; centers
/// are treated as constants. Returns the loss and its gradient w.r.t. the
/// features.
pub fn tuplet_loss<T: Scalar>(
    features: &Matrix<T>,
    cluster_labels: &[usize],
    centers: &Matrix<T>,
    beta: T,
) -> Result<(T, Matrix<T>)> {
    let n = features.rows();
    let k = centers.rows();
    if k < 2 {
        return Err(Error::config(format!(
            "tuplet loss needs K >= 2 clusters, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::shape("empty active-unknown batch"));
    }
    if features.cols() != centers.cols() {
        return Err(Error::shape(format!(
            "feature dim {} vs center dim {}",
            features.cols(),
            centers.cols()
        )));
    }
    if cluster_labels.len() != n {
        return Err(Error::shape(format!(
            "{} cluster labels for {} rows",
            cluster_labels.len(),
            n
        )));
    }
    let eps = real::<T>(DIST_EPS);
    let inv_n = T::one() / real::<T>(n as f64);
    let mut value = T::zero();
    let mut grad = Matrix::zeros(n, features.cols());

    for i in 0..n {
        let y = cluster_labels[i];
        if y >= k {
            return Err(Error::config(format!(
                "cluster label {y} out of range for {k} centers"
            )));
        }
        let f = features.row(i);
        let dists: Vec<T> = (0..k)
            .map(|c| euclidean_distance(f, centers.row(c)))
            .collect();
        let dy = dists[y];

        // log(1 + sum_j e^{a_j}) with a_j = D_y - D_j, evaluated stably.
        let mut max_a = T::zero(); // the implicit e^0 = 1 term
        for (j, &dj) in dists.iter().enumerate() {
            if j != y {
                max_a = max_a.max(dy - dj);
            }
        }
        let mut sum = (-max_a).exp();
        for (j, &dj) in dists.iter().enumerate() {
            if j != y {
                sum += (dy - dj - max_a).exp();
            }
        }
        let lse = max_a + sum.ln();
        value += (lse + beta * dy) * inv_n;

        // dL/dD_y = s/(1+s) + beta = 1 - e^{-lse} + beta;
        // dL/dD_j = -e^{a_j - lse} for j != y.
        let g = grad.row_mut(i);
        for (j, &dj) in dists.iter().enumerate() {
            let dl_dd = if j == y {
                T::one() - (-lse).exp() + beta
            } else {
                -((dy - dj - lse).exp())
            };
            let denom = dists[j].max(eps);
            let c = centers.row(j);
            for (gi, (&fv, &cv)) in g.iter_mut().zip(f.iter().zip(c)) {
                *gi += dl_dd * (fv - cv) / denom * inv_n;
            }
        }
    }
    Ok((value, grad))
}

/// A minibatch of labeled known samples: input features and their remapped
/// labels in `1..=K`.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a, T> {
    pub features: &'a Matrix<T>,
    pub labels: &'a [u32],
}

/// A minibatch of active unknowns, optionally with the epoch's cluster
/// assignment (per-sample 0-based cluster labels and the `K x m` centers in
/// feature space).
#[derive(Debug, Clone, Copy)]
pub struct ActiveUnknownBatch<'a, T> {
    pub features: &'a Matrix<T>,
    pub clusters: Option<AuClusters<'a, T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct AuClusters<'a, T> {
    pub labels: &'a [usize],
    pub centers: &'a Matrix<T>,
}

/// Which optional terms of the combined objective are active. Cross-entropy
/// always participates; ablation modes switch the others off.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub bce: bool,
    pub em: bool,
    pub tuplet: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            bce: true,
            em: true,
            tuplet: true,
        }
    }
}

/// Value and per-parameter gradients of one combined-objective evaluation.
#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    pub value: T,
    pub ce: T,
    pub bce: T,
    pub em: T,
    pub tuplet: T,
    /// Gradients shaped like the bundle they differentiate.
    pub grads: ModelBundle<T>,
}

/// The combined objective: `ce + bce` when there are no active unknowns,
/// `ce + bce + em + lambda * tuplet` otherwise. Binary terms cover the
/// labeled rows, entropy-maximization and tuplet the active-unknown rows,
/// cross-entropy their union. Requires cluster centers whenever an
/// active-unknown batch is present.
pub fn total_loss<T: Scalar>(
    bundle: &ModelBundle<T>,
    labeled: &LabeledBatch<T>,
    active_unknown: Option<&ActiveUnknownBatch<T>>,
    weights: &LossWeights<T>,
) -> Result<TotalLoss<T>> {
    if let Some(au) = active_unknown {
        if au.clusters.is_none() {
            return Err(Error::consistency(
                "active unknowns present but cluster centers missing",
            ));
        }
    }
    total_loss_with_terms(bundle, labeled, active_unknown, weights, LossTerms::default())
}

/// [`total_loss`] with individual terms switched on or off; used by the
/// ablation configurations.
pub fn total_loss_with_terms<T: Scalar>(
    bundle: &ModelBundle<T>,
    labeled: &LabeledBatch<T>,
    active_unknown: Option<&ActiveUnknownBatch<T>>,
    weights: &LossWeights<T>,
    terms: LossTerms,
) -> Result<TotalLoss<T>> {
    let n_l = labeled.features.rows();
    let n_au = active_unknown.map_or(0, |au| au.features.rows());
    let n = n_l + n_au;
    if n == 0 {
        return Err(Error::shape("empty batch"));
    }
    if labeled.labels.len() != n_l {
        return Err(Error::shape(format!(
            "{} labels for {} labeled rows",
            labeled.labels.len(),
            n_l
        )));
    }

    let input = match active_unknown {
        Some(au) => labeled.features.vstack(au.features)?,
        None => labeled.features.clone(),
    };
    let acts = bundle.feature.forward(&input)?;
    let feats = &acts.output;

    // Cross-entropy over labeled rows (their own labels) and active-unknown
    // rows (the open-set class 0).
    let mut ce_labels: Vec<u32> = Vec::with_capacity(n);
    ce_labels.extend_from_slice(labeled.labels);
    ce_labels.extend(std::iter::repeat_n(0, n_au));
    let logits = bundle.classifier.forward(feats)?;
    let (ce, dlogits) = ce_loss(&logits, &ce_labels)?;
    let (classifier_grads, mut dfeat) = bundle.classifier.backward(feats, &dlogits)?;

    let mut bce = T::zero();
    let mut em = T::zero();
    let mut head_grads: Vec<_> = bundle.binary_heads.iter().map(|h| h.zeros_like()).collect();

    if bundle.has_binary_heads() {
        let k = bundle.binary_heads.len();
        let bf = bundle.binary_forward(feats)?;
        let mut dprobs: Matrix<T> = Matrix::zeros(n, k);

        if terms.bce && n_l > 0 {
            let labeled_rows: Vec<usize> = (0..n_l).collect();
            let p_l = bf.probs.gather_rows(&labeled_rows);
            let (v, dp) = bce_ova_loss(&p_l, labeled.labels)?;
            bce = v;
            for i in 0..n_l {
                for j in 0..k {
                    dprobs.set(i, j, dprobs.get(i, j) + dp.get(i, j));
                }
            }
        }
        if terms.em && n_au > 0 {
            let au_rows: Vec<usize> = (n_l..n).collect();
            let p_au = bf.probs.gather_rows(&au_rows);
            let (v, dp) = em_loss(&p_au)?;
            em = v;
            for i in 0..n_au {
                for j in 0..k {
                    dprobs.set(n_l + i, j, dprobs.get(n_l + i, j) + dp.get(i, j));
                }
            }
        }

        // Chain dL/dp through p = sigmoid(z_pos - z_neg).
        for (h, head) in bundle.binary_heads.iter().enumerate() {
            let mut dz = Matrix::zeros(n, 2);
            for i in 0..n {
                let p = bf.probs.get(i, h);
                let dp = dprobs.get(i, h);
                let s: T = dp * p * (T::one() - p);
                dz.set(i, 0, s);
                dz.set(i, 1, -s);
            }
            let (hg, dfeat_h) = head.backward(feats, &dz)?;
            head_grads[h] = hg;
            for (d, &g) in dfeat.data_mut().iter_mut().zip(dfeat_h.data()) {
                *d += g;
            }
        }
    }

    let mut tuplet = T::zero();
    if terms.tuplet && n_au > 0 {
        let au = active_unknown.expect("n_au > 0 implies a batch");
        let clusters = au.clusters.ok_or_else(|| {
            Error::consistency("active unknowns present but cluster centers missing")
        })?;
        let au_rows: Vec<usize> = (n_l..n).collect();
        let feats_au = feats.gather_rows(&au_rows);
        let (v, dfeat_t) = tuplet_loss(&feats_au, clusters.labels, clusters.centers, weights.beta)?;
        tuplet = v;
        for i in 0..n_au {
            let target = dfeat.row_mut(n_l + i);
            for (t, &g) in target.iter_mut().zip(dfeat_t.row(i)) {
                *t += weights.lambda * g;
            }
        }
    }

    let (feature_grads, _) = bundle.feature.backward(&acts, &dfeat)?;
    let value = ce + bce + em + weights.lambda * tuplet;
    if !value.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss value {value}")));
    }
    Ok(TotalLoss {
        value,
        ce,
        bce,
        em,
        tuplet,
        grads: ModelBundle {
            feature: feature_grads,
            classifier: classifier_grads,
            binary_heads: head_grads,
        },
    })
}
