//! Shared helpers for the integration and acceptance suites: central
//! finite-difference oracles and random fixtures. Everything here is
//! independent of the analytic gradient paths it checks.
//!
//! Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

use eoal_core::matrix::Matrix;
use eoal_core::nnkit::{Mlp, ModelBundle};
use eoal_core::rng::rng_for;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Central-difference step mandated by the gradient acceptance criterion.
pub const FD_H: f64 = 1e-5;
/// Required agreement between analytic and numerical gradients.
pub const FD_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so that near-zero gradient pairs
/// (analytic exactly 0, numerical at rounding noise) compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Flat parameter access shared by the models under test.
pub trait Params: Clone {
    fn shapes(&self) -> Vec<usize>;
    fn get(&self, tensor: usize, index: usize) -> f64;
    fn set(&mut self, tensor: usize, index: usize, value: f64);
}

impl Params for Mlp<f64> {
    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|(t, _)| t.len()).collect()
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        self.tensors()[tensor].0[index]
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        self.tensors_mut()[tensor].0[index] = value;
    }
}

impl Params for ModelBundle<f64> {
    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|(t, _)| t.len()).collect()
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        self.tensors()[tensor].0[index]
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        self.tensors_mut()[tensor].0[index] = value;
    }
}

/// Central finite differences of a scalar loss over every model parameter.
pub fn fd_param_grads<P: Params>(model: &P, loss: impl Fn(&P) -> f64) -> Vec<Vec<f64>> {
    let shapes = model.shapes();
    let mut work = model.clone();
    let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&l| vec![0.0; l]).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = model.get(t, i);
            work.set(t, i, orig + FD_H);
            let plus = loss(&work);
            work.set(t, i, orig - FD_H);
            let minus = loss(&work);
            work.set(t, i, orig);
            grads[t][i] = (plus - minus) / (2.0 * FD_H);
        }
    }
    grads
}

/// Central finite differences of a scalar loss over every matrix entry.
pub fn fd_matrix_grad(x: &Matrix<f64>, loss: impl Fn(&Matrix<f64>) -> f64) -> Matrix<f64> {
    let mut work = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = x.get(i, j);
            work.set(i, j, orig + FD_H);
            let plus = loss(&work);
            work.set(i, j, orig - FD_H);
            let minus = loss(&work);
            work.set(i, j, orig);
            grad.set(i, j, (plus - minus) / (2.0 * FD_H));
        }
    }
    grad
}

/// Asserts agreement between analytic and finite-difference tensors.
pub fn assert_grads_close(analytic: &[&[f64]], numeric: &[Vec<f64>], context: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{context}: tensor counts");
    for (t, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.len(), n.len(), "{context}: tensor {t} length");
        for (i, (&av, &nv)) in a.iter().zip(n.iter()).enumerate() {
            let e = rel_err(av, nv);
            assert!(
                e < FD_TOL,
                "{context}: tensor {t}[{i}] analytic={av:.10e} numeric={nv:.10e} rel={e:.3e}"
            );
        }
    }
}

/// Smallest |pre-rectifier activation| over all hidden units, computed by an
/// independent layer-by-layer pass. Central differences are only valid when
/// no rectifier kink sits inside the perturbation neighborhood, so fixtures
/// keep this margin well above `FD_H`.
pub fn min_hidden_preact_abs(mlp: &Mlp<f64>, x: &Matrix<f64>) -> f64 {
    let mut current = x.clone();
    let mut min_abs = f64::INFINITY;
    let last = mlp.layers.len() - 1;
    for (l, layer) in mlp.layers.iter().enumerate() {
        let z = layer.forward(&current).unwrap();
        if l < last {
            for &v in z.data() {
                min_abs = min_abs.min(v.abs());
            }
            let mut a = z;
            for v in a.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            current = a;
        }
    }
    min_abs
}

/// How far fixtures must stay from a rectifier kink or an argmax tie for the
/// finite-difference oracle to be meaningful.
pub const SMOOTH_MARGIN: f64 = 1e-3;

/// Smallest gap between the two largest negative-head probabilities across
/// rows; a near-tie makes the hardest-negative pick flip under perturbation.
pub fn bce_negative_gap(p: &Matrix<f64>, labels: &[u32]) -> f64 {
    let mut min_gap = f64::INFINITY;
    for (i, &label) in labels.iter().enumerate() {
        let y = (label - 1) as usize;
        let mut negatives: Vec<f64> = (0..p.cols())
            .filter(|&j| j != y)
            .map(|j| p.get(i, j))
            .collect();
        if negatives.len() < 2 {
            continue;
        }
        negatives.sort_by(|a, b| b.partial_cmp(a).unwrap());
        min_gap = min_gap.min(negatives[0] - negatives[1]);
    }
    min_gap
}

pub fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random interior probabilities, away from the clamp boundaries where the
/// losses are non-smooth.
pub fn random_probs(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix<f64> {
    random_matrix(rng, rows, cols, 0.05, 0.95)
}

/// A small random bundle plus labeled/unknown batches for end-to-end checks.
pub struct TotalLossFixture {
    pub bundle: ModelBundle<f64>,
    pub labeled_features: Matrix<f64>,
    pub labels: Vec<u32>,
    pub au_features: Matrix<f64>,
    pub cluster_labels: Vec<usize>,
    pub centers: Matrix<f64>,
}

/// Draws a fixture, redrawing until it sits safely away from rectifier kinks
/// and hardest-negative ties so the finite-difference oracle applies.
pub fn random_total_fixture(seed: u64) -> TotalLossFixture {
    for attempt in 0..100u64 {
        let mut rng = rng_for(seed.wrapping_mul(1_000_003).wrapping_add(attempt));
        let d = rng.gen_range(3..6);
        let h1 = rng.gen_range(4..8);
        let m = rng.gen_range(3..6);
        let k = rng.gen_range(2..5);
        let n_l = rng.gen_range(2..6);
        let n_au = rng.gen_range(2..5);

        let bundle = ModelBundle::init(d, &[h1, m], k, true, rng.gen()).unwrap();
        let labeled_features = random_matrix(&mut rng, n_l, d, -1.5, 1.5);
        let labels: Vec<u32> = (0..n_l).map(|_| rng.gen_range(1..=k) as u32).collect();
        let au_features = random_matrix(&mut rng, n_au, d, -1.5, 1.5);
        let k_clusters = rng.gen_range(2..=k.max(2));
        let cluster_labels: Vec<usize> =
            (0..n_au).map(|_| rng.gen_range(0..k_clusters)).collect();
        let centers = random_matrix(&mut rng, k_clusters, m, -1.0, 1.0);

        let stacked = labeled_features.vstack(&au_features).unwrap();
        if min_hidden_preact_abs(&bundle.feature, &stacked) < SMOOTH_MARGIN {
            continue;
        }
        let feats = bundle.feature.output(&stacked).unwrap();
        let probs = bundle.binary_forward(&feats).unwrap().probs;
        // Saturated heads put the log-barrier curvature (and the sigmoid's
        // representability edge) inside the FD neighborhood.
        if probs.data().iter().any(|&p| p < 0.05 || p > 0.95) {
            continue;
        }
        let labeled_rows: Vec<usize> = (0..n_l).collect();
        if bce_negative_gap(&probs.gather_rows(&labeled_rows), &labels) < SMOOTH_MARGIN {
            continue;
        }
        // A feature nearly on top of a center puts the norm's kink inside
        // the perturbation neighborhood and inflates FD truncation error.
        let au_rows: Vec<usize> = (n_l..n_l + n_au).collect();
        let au_feats = feats.gather_rows(&au_rows);
        let min_center_dist = (0..n_au)
            .flat_map(|i| {
                (0..k_clusters).map(move |c| (i, c))
            })
            .map(|(i, c)| eoal_core::matrix::euclidean_distance(au_feats.row(i), centers.row(c)))
            .fold(f64::INFINITY, f64::min);
        if min_center_dist < 1e-2 {
            continue;
        }

        return TotalLossFixture {
            bundle,
            labeled_features,
            labels,
            au_features,
            cluster_labels,
            centers,
        };
    }
    panic!("could not draw a smooth fixture for seed {seed}");
}

pub fn seeded(seed: u64) -> ChaCha20Rng {
    rng_for(seed)
}

/// Brute-force first neighbors: full distance table, smallest-index ties.
pub fn brute_first_neighbors(
    features: &Matrix<f64>,
    metric: eoal_core::finch::Metric,
) -> Vec<usize> {
    let n = features.rows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = None;
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = metric.distance(features.row(i), features.row(j));
            let better = match best {
                None => true,
                Some((bd, _)) => d < bd,
            };
            if better {
                best = Some((d, j));
            }
        }
        out.push(best.unwrap().1);
    }
    out
}

/// Brute-force clustering oracle: explicit adjacency matrix over the three
/// linkage conditions, then flood fill.
pub fn brute_components(features: &Matrix<f64>, metric: eoal_core::finch::Metric) -> Vec<usize> {
    let n = features.rows();
    let nn = brute_first_neighbors(features, metric);
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if nn[i] == j || nn[j] == i || nn[i] == nn[j] {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        labels[start] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if adj[i][j] && labels[j] == usize::MAX {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    labels
}

/// Relabels clusters by order of first appearance so label vectors compare
/// independently of numbering.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    let mut next = 0usize;
    labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            })
        })
        .collect()
}
