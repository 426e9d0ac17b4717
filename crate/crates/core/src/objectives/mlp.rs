use rand::Rng;

use super::Objective;
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayeredVector, MaskedGrad};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Subgradient at 0 is taken as 0.
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected classifier with softmax cross-entropy loss.
///
/// Every weight matrix (stored row-major, `out × in`) and every bias vector
/// is its own layer, in forward order: `W_0, b_0, W_1, b_1, ...`. With
/// `bias = false` only the matrices are present.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    widths: Vec<usize>,
    activation: Activation,
    bias: bool,
}

struct Trace {
    /// `acts[k]` is the input to dense layer `k`; the last entry holds logits.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpClassifier {
    /// `widths = [input, hidden..., classes]`.
    pub fn new(widths: Vec<usize>, activation: Activation, bias: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig("an MLP needs input and output widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("zero width in {widths:?}")));
        }
        if *widths.last().unwrap() < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        Ok(Self {
            widths,
            activation,
            bias,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn dense_count(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight_layer(&self, k: usize) -> usize {
        if self.bias {
            2 * k
        } else {
            k
        }
    }

    fn bias_layer(&self, k: usize) -> Option<usize> {
        self.bias.then_some(2 * k + 1)
    }

    fn dense_of(&self, layer: usize) -> usize {
        if self.bias {
            layer / 2
        } else {
            layer
        }
    }

    /// Glorot-uniform weights and zero biases from the init stream of `seed`.
    pub fn init_params(&self, seed: u64) -> LayeredVector {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut x = LayeredVector::zeros(&self.layer_sizes());
        for k in 0..self.dense_count() {
            let (fan_in, fan_out) = (self.widths[k], self.widths[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in x.block_mut(self.weight_layer(k)) {
                *w = rng.random_range(-limit..limit);
            }
        }
        x
    }

    fn check(&self, x: &LayeredVector, batch: &Batch) -> Result<()> {
        let sizes = self.layer_sizes();
        if x.layer_sizes() != sizes {
            return Err(Error::ShapeMismatch(format!(
                "parameters {:?} do not match layers {:?}",
                x.layer_sizes(),
                sizes
            )));
        }
        if batch.inputs.cols() != self.widths[0] {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, network expects {}",
                batch.inputs.cols(),
                self.widths[0]
            )));
        }
        if let Some(&y) = batch.targets.iter().find(|&&y| y >= self.class_count()) {
            return Err(Error::ShapeMismatch(format!(
                "target {y} outside {} classes",
                self.class_count()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &LayeredVector, input: &[f64]) -> Trace {
        let last = self.dense_count() - 1;
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.dense_count());
        for k in 0..self.dense_count() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let w = x.block(self.weight_layer(k));
            let h = &acts[k];
            let z: Vec<f64> = (0..n_out)
                .map(|r| {
                    let mut s = self.bias_layer(k).map_or(0.0, |b| x.block(b)[r]);
                    for c in 0..n_in {
                        s += w[r * n_in + c] * h[c];
                    }
                    s
                })
                .collect();
            let out = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            acts.push(out);
        }
        Trace { acts, pre }
    }

    /// Cross-entropy of one sample and the softmax probabilities.
    fn sample_loss(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - logits[target];
        (loss, exps.into_iter().map(|e| e / total).collect())
    }

    pub fn predict(&self, x: &LayeredVector, input: &[f64]) -> usize {
        let trace = self.forward(x, input);
        let logits = trace.acts.last().unwrap();
        logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &v)| if v > best.1 { (i, v) } else { best },
            )
            .0
    }

    /// Fraction of rows classified correctly.
    pub fn accuracy(&self, x: &LayeredVector, ds: &Dataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let hits = (0..ds.len())
            .filter(|&i| self.predict(x, ds.features.row(i)) == ds.labels[i])
            .count();
        hits as f64 / ds.len() as f64
    }
}

impl Objective for MlpClassifier {
    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for k in 0..self.dense_count() {
            sizes.push(self.widths[k] * self.widths[k + 1]);
            if self.bias {
                sizes.push(self.widths[k + 1]);
            }
        }
        sizes
    }

    fn loss(&self, x: &LayeredVector, batch: &Batch) -> Result<f64> {
        self.check(x, batch)?;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let trace = self.forward(x, batch.inputs.row(i));
            total += Self::sample_loss(trace.acts.last().unwrap(), batch.targets[i]).0;
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        Ok(loss)
    }

    /// Mean cross-entropy and its gradient on `active`.
    ///
    /// The error signal is propagated only down to the shallowest active
    /// dense layer; parameter gradients are accumulated only for active
    /// layers.
    fn loss_and_grad(&self, x: &LayeredVector, batch: &Batch, active: &ActiveSet) -> Result<(f64, MaskedGrad)> {
        self.check(x, batch)?;
        if active.num_layers() != x.num_layers() {
            return Err(Error::ShapeMismatch("active set does not match layer count".into()));
        }
        let mut g = LayeredVector::zeros(&self.layer_sizes());
        let lowest = active.iter().next().map(|l| self.dense_of(l));
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;

        for i in 0..batch.len() {
            let trace = self.forward(x, batch.inputs.row(i));
            let (loss, probs) = Self::sample_loss(trace.acts.last().unwrap(), batch.targets[i]);
            total += loss;
            let Some(lowest) = lowest else { continue };

            let mut delta: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            delta[batch.targets[i]] -= scale;

            for k in (lowest..self.dense_count()).rev() {
                let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
                let h = &trace.acts[k];
                let wl = self.weight_layer(k);
                if active.contains(wl) {
                    let gw = g.block_mut(wl);
                    for r in 0..n_out {
                        for c in 0..n_in {
                            gw[r * n_in + c] += delta[r] * h[c];
                        }
                    }
                }
                if let Some(bl) = self.bias_layer(k).filter(|&b| active.contains(b)) {
                    for (gb, d) in g.block_mut(bl).iter_mut().zip(&delta) {
                        *gb += d;
                    }
                }
                if k > lowest {
                    let w = x.block(wl);
                    let z_prev = &trace.pre[k - 1];
                    delta = (0..n_in)
                        .map(|c| {
                            let mut s = 0.0;
                            for r in 0..n_out {
                                s += w[r * n_in + c] * delta[r];
                            }
                            s * self.activation.derivative(z_prev[c], h[c])
                        })
                        .collect();
                }
            }
        }

        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        Ok((
            loss,
            MaskedGrad {
                values: g,
                active: active.clone(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, BatchId, Matrix};

    #[test]
    fn symmetric_logits_split_probability() {
        // one dense layer 2 -> 2 with zero weights: logits (0, 0)
        let mlp = MlpClassifier::new(vec![2, 2], Activation::Tanh, true).unwrap();
        let x = LayeredVector::zeros(&mlp.layer_sizes());
        let batch = Batch::new(Matrix::new(1, 2, vec![1.0, 2.0]).unwrap(), vec![0], BatchId::default()).unwrap();
        let (loss, g) = mlp.loss_and_grad(&x, &batch, &ActiveSet::full(2)).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        // dW[r][c] = δ_r · input_c with δ = (-0.5, 0.5)
        assert_eq!(g.values.block(0), &[-0.5, -1.0, 0.5, 1.0]);
        assert_eq!(g.values.block(1), &[-0.5, 0.5]);
    }

    #[test]
    fn masking_keeps_deeper_blocks_identical() {
        let mlp = MlpClassifier::new(vec![2, 5, 3], Activation::Tanh, true).unwrap();
        let x = mlp.init_params(3);
        let ds = gen_two_moons(16, 0.1, 2).unwrap();
        let ds = Dataset::new(ds.features, ds.labels, 3, 0).unwrap();
        let batch = ds.as_batch();
        let full = mlp.grad(&x, &batch, &ActiveSet::full(4)).unwrap();
        let part = mlp.grad(&x, &batch, &ActiveSet::from_indices(4, [1, 2, 3])).unwrap();
        assert!(!part.is_present(0));
        assert!(part.values.block(0).iter().all(|&v| v == 0.0));
        for l in 1..4 {
            assert_eq!(part.values.block(l), full.values.block(l));
        }
    }

    #[test]
    fn loss_matches_between_paths() {
        let mlp = MlpClassifier::new(vec![2, 4, 2], Activation::Relu, true).unwrap();
        let x = mlp.init_params(1);
        let batch = gen_two_moons(10, 0.2, 1).unwrap().as_batch();
        let (l1, _) = mlp.loss_and_grad(&x, &batch, &ActiveSet::full(4)).unwrap();
        assert_eq!(l1.to_bits(), mlp.loss(&x, &batch).unwrap().to_bits());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mlp = MlpClassifier::new(vec![3, 2], Activation::Tanh, false).unwrap();
        assert_eq!(mlp.layer_sizes(), vec![6]);
        let batch = gen_two_moons(4, 0.0, 0).unwrap().as_batch();
        assert!(matches!(
            mlp.loss(&LayeredVector::zeros(&[6]), &batch),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(MlpClassifier::new(vec![2], Activation::Tanh, true).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mlp = MlpClassifier::new(vec![2, 2], Activation::Tanh, false).unwrap();
        let x = LayeredVector::from_blocks(vec![vec![1e308, 1e308, -1e308, -1e308]]).unwrap();
        let batch = Batch::new(
            Matrix::new(1, 2, vec![10.0, 10.0]).unwrap(),
            vec![1],
            BatchId::default(),
        )
        .unwrap();
        assert!(matches!(mlp.loss(&x, &batch), Err(Error::NonFinite(_))));
    }

    #[test]
    fn accuracy_of_separable_rule() {
        // logits = (x0, -x0): predicts class 0 when x0 > 0
        let mlp = MlpClassifier::new(vec![1, 2], Activation::Tanh, false).unwrap();
        let x = LayeredVector::from_blocks(vec![vec![1.0, -1.0]]).unwrap();
        let ds = Dataset::new(Matrix::new(3, 1, vec![1.0, -2.0, 3.0]).unwrap(), vec![0, 1, 1], 2, 0).unwrap();
        assert!((mlp.accuracy(&x, &ds) - 2.0 / 3.0).abs() < 1e-15);
    }
}
