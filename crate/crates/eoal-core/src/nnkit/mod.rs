//! Minimal trainable feedforward networks with exact reverse-mode gradients.
//!
//! The topology is fixed to what the laboratory needs: a rectifier MLP
//! feature extractor, single linear heads on top of it, and a standalone
//! MLP target model. Gradients are derived by hand and checked against
//! central finite differences in the test suites.

mod checkpoint;
mod sgd;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
pub use sgd::{SgdConfig, SgdState};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_for;
use crate::scalar::{real, Scalar};

/// Whether a parameter tensor is a weight matrix or a bias vector. Weight
/// decay applies to weights only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Fully-connected layer: `out = input * weight^T + bias`.
/// The weight is stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    /// Weights drawn uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let mut weight = Matrix::zeros(out_dim, in_dim);
        for v in weight.data_mut() {
            let u: f64 = rng.gen();
            *v = real((2.0 * u - 1.0) * bound);
        }
        Linear {
            weight,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.in_dim(), self.out_dim())
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        if input.rows() == 0 {
            return Err(Error::shape("empty batch"));
        }
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for n in 0..input.rows() {
            let x = input.row(n);
            let o = out.row_mut(n);
            for (j, oj) in o.iter_mut().enumerate() {
                let w = self.weight.row(j);
                let mut acc = self.bias[j];
                for (wi, xi) in w.iter().zip(x) {
                    acc += *wi * *xi;
                }
                *oj = acc;
            }
        }
        Ok(out)
    }

    /// Returns (parameter gradients, gradient w.r.t. the input).
    pub fn backward(&self, input: &Matrix<T>, grad_out: &Matrix<T>) -> Result<(Linear<T>, Matrix<T>)> {
        if grad_out.rows() != input.rows() || grad_out.cols() != self.out_dim() {
            return Err(Error::shape(format!(
                "gradient shape {}x{} does not match layer output {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                input.rows(),
                self.out_dim()
            )));
        }
        let mut grads = self.zeros_like();
        let mut grad_in = Matrix::zeros(input.rows(), self.in_dim());
        for n in 0..input.rows() {
            let x = input.row(n);
            let g = grad_out.row(n);
            let gi = grad_in.row_mut(n);
            for (j, &gj) in g.iter().enumerate() {
                grads.bias[j] += gj;
                let wrow = self.weight.row(j);
                let grow = grads.weight.row_mut(j);
                for i in 0..x.len() {
                    grow[i] += gj * x[i];
                    gi[i] += gj * wrow[i];
                }
            }
        }
        Ok((grads, grad_in))
    }

    pub fn tensors(&self) -> Vec<(&[T], ParamKind)> {
        vec![
            (self.weight.data(), ParamKind::Weight),
            (&self.bias, ParamKind::Bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [T], ParamKind)> {
        vec![
            (self.weight.data_mut(), ParamKind::Weight),
            (&mut self.bias, ParamKind::Bias),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Rectifier MLP: linear layers with ReLU between them and no nonlinearity
/// after the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Per-layer state retained by [`Mlp::forward`] for exact backprop.
#[derive(Debug, Clone)]
pub struct MlpActivations<T> {
    /// `layer_inputs[l]` is the input fed to layer `l` (the batch itself for
    /// `l = 0`, the post-rectifier output of layer `l-1` otherwise).
    layer_inputs: Vec<Matrix<T>>,
    /// Final-layer output (no nonlinearity applied).
    pub output: Matrix<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Builds an MLP from a dimension plan `[in, h1, ..., out]` with weights
    /// uniform in `±sqrt(6/fan_in)` and zero biases, deterministic per seed.
    pub fn init(plan: &[usize], seed: u64) -> Result<Self> {
        if plan.len() < 2 || plan.contains(&0) {
            return Err(Error::config(format!("invalid layer plan {plan:?}")));
        }
        let mut rng = rng_for(seed);
        let layers = plan
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], &mut rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<MlpActivations<T>> {
        if self.layers.is_empty() {
            return Err(Error::shape("MLP has no layers"));
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&current)?;
            layer_inputs.push(current);
            current = if l + 1 < self.layers.len() {
                let mut a = z;
                for v in a.data_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                a
            } else {
                z
            };
        }
        Ok(MlpActivations {
            layer_inputs,
            output: current,
        })
    }

    /// Network output for a batch, discarding intermediate activations.
    pub fn output(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(input)?.output)
    }

    /// Exact reverse-mode gradients. Returns per-parameter gradients (shaped
    /// like the model) and the gradient w.r.t. the batch input.
    pub fn backward(
        &self,
        acts: &MlpActivations<T>,
        grad_output: &Matrix<T>,
    ) -> Result<(Mlp<T>, Matrix<T>)> {
        if acts.layer_inputs.len() != self.layers.len() {
            return Err(Error::shape(
                "activations do not match this model's layer count",
            ));
        }
        if grad_output.rows() != acts.output.rows() || grad_output.cols() != self.out_dim() {
            return Err(Error::shape("upstream gradient shape mismatch"));
        }
        let mut grads = self.zeros_like();
        let mut g = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &acts.layer_inputs[l];
            let (layer_grads, mut grad_in) = self.layers[l].backward(input, &g)?;
            grads.layers[l] = layer_grads;
            if l > 0 {
                // `input` is the post-rectifier output of layer l-1; gate the
                // gradient where the rectifier was inactive.
                for (gv, &av) in grad_in.data_mut().iter_mut().zip(input.data()) {
                    if av <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            g = grad_in;
        }
        Ok((grads, g))
    }

    /// Input to the final layer: the penultimate representation used as an
    /// embedding by the coreset baseline.
    pub fn penultimate(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        let acts = self.forward(input)?;
        Ok(acts.layer_inputs.last().expect("non-empty MLP").clone())
    }

    pub fn tensors(&self) -> Vec<(&[T], ParamKind)> {
        self.layers.iter().flat_map(Linear::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [T], ParamKind)> {
        self.layers
            .iter_mut()
            .flat_map(Linear::tensors_mut)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Linear::all_finite)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// The jointly trained models: feature extractor `F`, a `(K+1)`-way
/// classifier head, and one 2-logit binary head per known class. The binary
/// head list is empty when the one-vs-all block is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub feature: Mlp<T>,
    pub classifier: Linear<T>,
    pub binary_heads: Vec<Linear<T>>,
}

/// Retained forward state of all binary heads over one feature batch.
#[derive(Debug, Clone)]
pub struct BinaryForward<T> {
    /// Per-head raw logits, each `n x 2` (positive component first).
    pub logits: Vec<Matrix<T>>,
    /// `n x K` matrix of positive-class probabilities.
    pub probs: Matrix<T>,
}

impl<T: Scalar> ModelBundle<T> {
    /// Initializes the bundle for input dimension `d`, hidden plan `hidden`
    /// (last entry is the feature dimension `m`), and `K` known classes.
    pub fn init(d: usize, hidden: &[usize], k: usize, with_binary_heads: bool, seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("feature extractor needs at least one layer"));
        }
        if k < 2 {
            return Err(Error::config(format!("need K >= 2 known classes, got {k}")));
        }
        let mut plan = vec![d];
        plan.extend_from_slice(hidden);
        let feature = Mlp::init(&plan, seed)?;
        let m = feature.out_dim();
        let mut rng = rng_for(crate::rng::derive_seed(seed, 1));
        let classifier = Linear::init(m, k + 1, &mut rng);
        let binary_heads = if with_binary_heads {
            (0..k).map(|_| Linear::init(m, 2, &mut rng)).collect()
        } else {
            Vec::new()
        };
        Ok(ModelBundle {
            feature,
            classifier,
            binary_heads,
        })
    }

    /// Number of known classes served by the classifier head.
    pub fn k(&self) -> usize {
        self.classifier.out_dim() - 1
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.out_dim()
    }

    pub fn has_binary_heads(&self) -> bool {
        !self.binary_heads.is_empty()
    }

    /// Runs every binary head on a feature batch. The positive probability is
    /// the softmax positive component of the head's two logits,
    /// `p = sigmoid(logit_pos - logit_neg)`.
    pub fn binary_forward(&self, features: &Matrix<T>) -> Result<BinaryForward<T>> {
        let mut logits = Vec::with_capacity(self.binary_heads.len());
        let mut probs = Matrix::zeros(features.rows(), self.binary_heads.len());
        for (i, head) in self.binary_heads.iter().enumerate() {
            let z = head.forward(features)?;
            for n in 0..z.rows() {
                probs.set(n, i, sigmoid(z.get(n, 0) - z.get(n, 1)));
            }
            logits.push(z);
        }
        Ok(BinaryForward { logits, probs })
    }

    pub fn zeros_like(&self) -> Self {
        ModelBundle {
            feature: self.feature.zeros_like(),
            classifier: self.classifier.zeros_like(),
            binary_heads: self.binary_heads.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<(&[T], ParamKind)> {
        let mut t = self.feature.tensors();
        t.extend(self.classifier.tensors());
        for head in &self.binary_heads {
            t.extend(head.tensors());
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [T], ParamKind)> {
        let mut t = self.feature.tensors_mut();
        t.extend(self.classifier.tensors_mut());
        for head in &mut self.binary_heads {
            t.extend(head.tensors_mut());
        }
        t
    }

    pub fn all_finite(&self) -> bool {
        self.feature.all_finite()
            && self.classifier.all_finite()
            && self.binary_heads.iter().all(Linear::all_finite)
    }

    /// Flat named-tensor view for checkpoint dumps.
    pub fn named_tensors(&self) -> Vec<NamedTensor<T>> {
        let mut out = Vec::new();
        for (l, layer) in self.feature.layers.iter().enumerate() {
            out.push(NamedTensor::from_linear(&format!("feature.{l}"), layer));
            out.push(NamedTensor::from_bias(&format!("feature.{l}"), layer));
        }
        out.push(NamedTensor::from_linear("classifier", &self.classifier));
        out.push(NamedTensor::from_bias("classifier", &self.classifier));
        for (i, head) in self.binary_heads.iter().enumerate() {
            out.push(NamedTensor::from_linear(&format!("binary.{i}"), head));
            out.push(NamedTensor::from_bias(&format!("binary.{i}"), head));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_layer_reproduces_its_input() {
        let mut layer = Linear::<f64>::zeros(3, 3);
        for i in 0..3 {
            layer.weight.set(i, i, 1.0);
        }
        let x = matrix(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, -0.25]]);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_layer_maps_to_zero() {
        let layer = Linear::<f64>::zeros(2, 4);
        let x = matrix(&[vec![3.0, -7.0]]);
        let y = layer.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        // Independent re-implementation of the affine + rectifier chain.
        let mlp = Mlp::<f64>::init(&[3, 4, 2], 17).unwrap();
        let x = matrix(&[vec![0.3, -1.2, 0.8], vec![1.0, 0.0, -0.5]]);
        let acts = mlp.forward(&x).unwrap();

        for n in 0..x.rows() {
            // Layer 0 with ReLU.
            let mut hidden = vec![0.0f64; 4];
            for j in 0..4 {
                let mut acc = mlp.layers[0].bias[j];
                for i in 0..3 {
                    acc += mlp.layers[0].weight.get(j, i) * x.get(n, i);
                }
                hidden[j] = acc.max(0.0);
            }
            // Final layer, no nonlinearity.
            for j in 0..2 {
                let mut acc = mlp.layers[1].bias[j];
                for (i, h) in hidden.iter().enumerate() {
                    acc += mlp.layers[1].weight.get(j, i) * h;
                }
                assert!((acts.output.get(n, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_shapes_and_empty_batches() {
        let mlp = Mlp::<f64>::init(&[3, 2], 0).unwrap();
        assert!(mlp.forward(&Matrix::zeros(2, 4)).is_err());
        assert!(mlp.forward(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let mlp = Mlp::<f64>::init(&[3, 4, 2], 5).unwrap();
        let x = matrix(&[vec![0.1, 0.2, 0.3]]);
        let acts = mlp.forward(&x).unwrap();
        let (grads, grad_in) = mlp.backward(&acts, &Matrix::zeros(1, 2)).unwrap();
        for (t, _) in grads.tensors() {
            assert!(t.iter().all(|&v| v == 0.0));
        }
        assert!(grad_in.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_activations() {
        let a = Mlp::<f64>::init(&[3, 4, 2], 5).unwrap();
        let b = Mlp::<f64>::init(&[3, 2], 5).unwrap();
        let x = matrix(&[vec![0.1, 0.2, 0.3]]);
        let acts = a.forward(&x).unwrap();
        assert!(b.backward(&acts, &Matrix::zeros(1, 2)).is_err());
        assert!(a.backward(&acts, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn linear_squared_error_gradient_matches_closed_form() {
        // d/dw of mean squared residual: 2 X^T (X w - y) / n.
        let layer = Linear::<f64> {
            weight: matrix(&[vec![0.7, -0.3]]),
            bias: vec![0.0],
        };
        let x = matrix(&[vec![1.0, 2.0], vec![-0.5, 1.5], vec![2.0, 0.25]]);
        let y = [1.0, -2.0, 0.5];
        let n = x.rows() as f64;

        let out = layer.forward(&x).unwrap();
        // Upstream gradient of L = (1/n) sum (out - y)^2.
        let mut grad_out = Matrix::zeros(3, 1);
        for i in 0..3 {
            grad_out.set(i, 0, 2.0 * (out.get(i, 0) - y[i]) / n);
        }
        let (grads, _) = layer.backward(&x, &grad_out).unwrap();

        for j in 0..2 {
            let mut expected = 0.0;
            for i in 0..3 {
                let resid = layer.weight.get(0, 0) * x.get(i, 0)
                    + layer.weight.get(0, 1) * x.get(i, 1)
                    - y[i];
                expected += 2.0 * x.get(i, j) * resid / n;
            }
            assert!(
                (grads.weight.get(0, j) - expected).abs() < 1e-12,
                "weight {j}: {} vs {expected}",
                grads.weight.get(0, j)
            );
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Mlp::<f64>::init(&[8, 16, 4], 123).unwrap();
        let b = Mlp::<f64>::init(&[8, 16, 4], 123).unwrap();
        assert_eq!(a, b);

        for layer in &a.layers {
            let bound = (6.0 / layer.in_dim() as f64).sqrt();
            assert!(layer.weight.data().iter().all(|v| v.abs() <= bound));
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_weight_mean_is_near_zero() {
        // 10k draws: |mean| within 3 standard errors of 0 for U(-b, b).
        let layer_in = 100;
        let layer = Linear::<f64>::init(layer_in, 100, &mut rng_for(7));
        let n = (layer_in * 100) as f64;
        let bound = (6.0 / layer_in as f64).sqrt();
        let mean: f64 = layer.weight.data().iter().sum::<f64>() / n;
        let se = bound / (3.0f64).sqrt() / n.sqrt();
        assert!(
            mean.abs() < 3.0 * se,
            "mean {mean} exceeds 3 standard errors ({se})"
        );
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_precision_instantiation_works() {
        let mlp = Mlp::<f32>::init(&[4, 6, 3], 9).unwrap();
        let x = Matrix::<f32>::from_rows(&[vec![0.5, -1.0, 0.25, 2.0]]).unwrap();
        let acts = mlp.forward(&x).unwrap();
        assert_eq!(acts.output.cols(), 3);
        let (grads, _) = mlp.backward(&acts, &Matrix::zeros(1, 3)).unwrap();
        assert!(grads.all_finite());
    }

    #[test]
    fn bundle_probs_are_softmax_positive_components() {
        let bundle = ModelBundle::<f64>::init(4, &[6, 3], 3, true, 11).unwrap();
        assert_eq!(bundle.k(), 3);
        assert_eq!(bundle.binary_heads.len(), 3);
        let x = matrix(&[vec![0.4, -0.2, 0.9, 0.1]]);
        let feats = bundle.feature.output(&x).unwrap();
        let bf = bundle.binary_forward(&feats).unwrap();
        for i in 0..3 {
            let z = &bf.logits[i];
            let (a, b) = (z.get(0, 0), z.get(0, 1));
            let m = a.max(b);
            let expected = (a - m).exp() / ((a - m).exp() + (b - m).exp());
            assert!((bf.probs.get(0, i) - expected).abs() < 1e-12);
        }
    }
}
