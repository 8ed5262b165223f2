//! Feed-forward ReLU network with a softmax output, trained with Adam on
//! mean cross-entropy.
//!
//! Weights of a layer are stored input-major (`weights[i * outputs + j]`), so a
//! sparse input only touches the rows of its non-zero features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{argmax, EvalMetrics};
use crate::scalar::{lit, Scalar};

const MAGIC: &[u8; 4] = b"TXNN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            hidden_layers,
            output_dim,
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers.iter().any(|&h| h == 0) {
            return Err(Error::InvalidSpec("all dimensions must be at least 1".into()));
        }
        if self.output_dim < 2 {
            return Err(Error::InvalidSpec(format!(
                "output_dim must be at least 2, got {}",
                self.output_dim
            )));
        }
        Ok(())
    }

    /// `[input, hidden..., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(self.output_dim);
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    #[inline]
    pub fn weight(&self, input: usize, output: usize) -> T {
        self.weights[input * self.outputs + output]
    }

    fn affine(&self, x: &[T]) -> Vec<T> {
        let mut z = self.biases.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi.is_zero() {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (zj, &w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        z
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

/// Per-layer `(weights, biases)` gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub training_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

struct Adam<T> {
    m: Vec<(Vec<T>, Vec<T>)>,
    v: Vec<(Vec<T>, Vec<T>)>,
    step: i32,
}

fn adam_step<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], k: &AdamCoeffs<T>) {
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = k.beta1 * m[i] + (T::one() - k.beta1) * g;
        v[i] = k.beta2 * v[i] + (T::one() - k.beta2) * g * g;
        param[i] -= k.step_size * m[i] / (v[i].sqrt() + k.epsilon);
    }
}

struct AdamCoeffs<T> {
    beta1: T,
    beta2: T,
    epsilon: T,
    step_size: T,
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights, zero biases, seeded by `spec.seed`.
    pub fn init(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_dims()
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for x in layer.weights.iter_mut() {
                    *x = lit(rng.gen_range(-bound..bound));
                }
                layer
            })
            .collect();
        Ok(Network { spec, layers })
    }

    /// Assembles a network from explicit layers, checking shapes against `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if layers.len() + 1 != dims.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} layers, got {}",
                dims.len() - 1,
                layers.len()
            )));
        }
        for (l, w) in layers.iter().zip(dims.windows(2)) {
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.biases.len() != w[1]
            {
                return Err(Error::InvalidSpec("layer shape does not match spec".into()));
            }
            if l.weights.iter().chain(&l.biases).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Network { spec, layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimMismatch {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn pre_activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut zs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = if i == 0 {
                layer.affine(x)
            } else {
                let a: Vec<T> = zs[i - 1].iter().map(|&z| z.max(T::zero())).collect();
                layer.affine(&a)
            };
            zs.push(z);
        }
        zs
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.pre_activations(x).pop().expect("at least one layer"))
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn forward_batch<X: AsRef<[T]>>(&self, xs: &[X]) -> Result<Vec<Vec<T>>> {
        xs.iter().map(|x| self.forward(x.as_ref())).collect()
    }

    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Mean cross-entropy over `xs` and its gradient with respect to every parameter.
    pub fn loss_and_gradients<X: AsRef<[T]>>(
        &self,
        xs: &[X],
        labels: &[usize],
    ) -> Result<(T, Gradients<T>)> {
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut grads = Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.biases.len()]))
                .collect(),
        };
        let mut loss = T::zero();
        for (x, &y) in xs.iter().zip(labels) {
            let x = x.as_ref();
            self.check_input(x)?;
            if y >= self.spec.output_dim {
                return Err(Error::InvalidArgument(format!("label {y} out of range")));
            }
            loss += self.accumulate(x, y, &mut grads);
        }
        let scale = T::one() / lit::<T>(xs.len() as f64);
        for (w, b) in &mut grads.layers {
            for g in w.iter_mut().chain(b.iter_mut()) {
                *g *= scale;
            }
        }
        Ok((loss * scale, grads))
    }

    /// Back-propagates one sample into `grads`; returns its loss.
    fn accumulate(&self, x: &[T], y: usize, grads: &mut Gradients<T>) -> T {
        let zs = self.pre_activations(x);
        let logits = zs.last().expect("at least one layer");
        let loss = log_sum_exp(logits) - logits[y];

        let mut delta = softmax(logits);
        delta[y] -= T::one();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (gw, gb) = &mut grads.layers[li];
            for (g, &d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            let input: Vec<T> = if li == 0 {
                x.to_vec()
            } else {
                zs[li - 1].iter().map(|&z| z.max(T::zero())).collect()
            };
            for (i, &a) in input.iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                let row = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
                for (g, &d) in row.iter_mut().zip(&delta) {
                    *g += a * d;
                }
            }
            if li > 0 {
                let prev = &zs[li - 1];
                let mut next = vec![T::zero(); layer.inputs];
                for (i, n) in next.iter_mut().enumerate() {
                    if prev[i] > T::zero() {
                        let row = &layer.weights[i * layer.outputs..(i + 1) * layer.outputs];
                        let mut s = T::zero();
                        for (&w, &d) in row.iter().zip(&delta) {
                            s += w * d;
                        }
                        *n = s;
                    }
                }
                delta = next;
            }
        }
        loss
    }

    /// Minibatch Adam on mean cross-entropy; reshuffles every epoch from `params.seed`.
    pub fn fit<X: AsRef<[T]>>(
        &mut self,
        xs: &[X],
        labels: &[usize],
        params: &FitParams,
    ) -> Result<FitReport> {
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if xs.len() != labels.len() {
            return Err(Error::DimMismatch {
                expected: xs.len(),
                got: labels.len(),
            });
        }
        let mut present = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 {
            return Err(Error::SingleClass(present.len()));
        }
        for x in xs {
            self.check_input(x.as_ref())?;
        }
        let batch_size = params.batch_size.max(1);

        let mut adam = Adam {
            m: self
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.biases.len()]))
                .collect(),
            v: self
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.biases.len()]))
                .collect(),
            step: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut epoch_losses = Vec::with_capacity(params.epochs);

        for epoch in 0..params.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch_no, chunk) in order.chunks(batch_size).enumerate() {
                let bx: Vec<&[T]> = chunk.iter().map(|&i| xs[i].as_ref()).collect();
                let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let (loss, grads) = self.loss_and_gradients(&bx, &by)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_no,
                    });
                }
                epoch_loss += loss.to_f64_exact() * chunk.len() as f64;

                adam.step += 1;
                let t = adam.step;
                let coeffs = AdamCoeffs {
                    beta1: lit(params.beta1),
                    beta2: lit(params.beta2),
                    epsilon: lit(params.epsilon),
                    step_size: lit(params.learning_rate
                        * (1.0 - params.beta2.powi(t)).sqrt()
                        / (1.0 - params.beta1.powi(t))),
                };
                for (li, layer) in self.layers.iter_mut().enumerate() {
                    let (gw, gb) = &grads.layers[li];
                    let (mw, mb) = &mut adam.m[li];
                    let (vw, vb) = &mut adam.v[li];
                    adam_step(&mut layer.weights, gw, mw, vw, &coeffs);
                    adam_step(&mut layer.biases, gb, mb, vb, &coeffs);
                }
            }
            epoch_losses.push(epoch_loss / xs.len() as f64);
        }

        let correct = xs
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x.as_ref()).map(|p| p == y).unwrap_or(false))
            .count();
        Ok(FitReport {
            training_accuracy: correct as f64 / xs.len() as f64,
            epoch_losses,
        })
    }

    /// Argmax predictions scored against `labels`.
    pub fn evaluate<X: AsRef<[T]>>(&self, xs: &[X], labels: &[usize]) -> Result<EvalMetrics> {
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let predicted = xs
            .iter()
            .map(|x| self.predict(x.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        EvalMetrics::from_predictions(labels, &predicted, self.spec.output_dim)
    }

    /// Versioned little-endian encoding: header, then each layer's weights
    /// (row-major) followed by its biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.parameter_count() * T::WIDTH as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(T::WIDTH);
        out.push(match self.spec.activation {
            Activation::Relu => 0,
        });
        for v in [
            self.spec.input_dim as u64,
            self.spec.output_dim as u64,
            self.spec.seed,
            self.spec.hidden_layers.len() as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &h in &self.spec.hidden_layers {
            out.extend_from_slice(&(h as u64).to_le_bytes());
        }
        for l in &self.layers {
            for &w in l.weights.iter().chain(&l.biases) {
                w.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::parse("network file", m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let width = take(1)?[0];
        if width != T::WIDTH {
            return Err(bad(&format!(
                "scalar width {width} does not match requested type width {}",
                T::WIDTH
            )));
        }
        let activation = match take(1)?[0] {
            0 => Activation::Relu,
            a => return Err(bad(&format!("unknown activation {a}"))),
        };
        let mut u64_at = || -> Result<u64> { Ok(u64::from_le_bytes(take(8)?.try_into().expect("8"))) };
        let input_dim = u64_at()? as usize;
        let output_dim = u64_at()? as usize;
        let seed = u64_at()?;
        let n_hidden = u64_at()? as usize;
        if n_hidden > 1024 {
            return Err(bad("implausible hidden layer count"));
        }
        let hidden_layers = (0..n_hidden)
            .map(|_| u64_at().map(|h| h as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec {
            input_dim,
            hidden_layers,
            output_dim,
            activation,
            seed,
        };
        spec.validate()?;
        let w = width as usize;
        let mut layers = Vec::new();
        for d in spec.layer_dims().windows(2) {
            let mut layer = Layer::zeros(d[0], d[1]);
            for x in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *x = T::read_le(take(w)?);
            }
            layers.push(layer);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Network::from_layers(spec, layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn zero_net(k: usize) -> Network<f64> {
        let spec = NetworkSpec::new(3, vec![4], k, 0);
        let layers = vec![Layer::zeros(3, 4), Layer::zeros(4, k)];
        Network::from_layers(spec, layers).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Network::<f64>::init(NetworkSpec::new(10, vec![4], 3, 7)).unwrap();
        let b = Network::<f64>::init(NetworkSpec::new(10, vec![4], 3, 7)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = Network::<f64>::init(NetworkSpec::new(10, vec![4], 3, 8)).unwrap();
        assert_ne!(a.parameters(), c.parameters());
        for l in a.layers() {
            assert!(l.biases.iter().all(|&b| b == 0.0));
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn spec_validation_and_parameter_count() {
        assert!(Network::<f64>::init(NetworkSpec::new(10, vec![4], 1, 0)).is_err());
        assert!(Network::<f64>::init(NetworkSpec::new(0, vec![4], 2, 0)).is_err());
        let spec = NetworkSpec::new(20300, vec![256], 21, 0);
        assert_eq!(spec.parameter_count(), 20300 * 256 + 256 + 256 * 21 + 21);
        assert_eq!(spec.parameter_count(), 5_202_453);
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let p = zero_net(4).forward(&[1.0, -2.0, 3.0]).unwrap();
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let n = zero_net(2);
        assert!(matches!(n.forward(&[1.0]), Err(Error::DimMismatch { .. })));
        assert!(matches!(n.forward(&[1.0, f64::NAN, 0.0]), Err(Error::NonFinite)));
    }

    #[test]
    fn batch_matches_single_forward() {
        let n = Network::<f64>::init(NetworkSpec::new(5, vec![8], 3, 11)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let batch = n.forward_batch(&xs).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let single = n.forward(x).unwrap();
            for (s, t) in single.iter().zip(b) {
                assert!((s - t).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3f64, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.4).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    fn separable_set() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < 200 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(-1.0..1.0);
            let margin = x + 0.5 * y;
            if margin.abs() < 0.1 {
                continue;
            }
            xs.push(vec![x, y]);
            ys.push(usize::from(margin > 0.0));
        }
        (xs, ys)
    }

    /// Independent oracle: plain logistic regression by batch gradient descent.
    fn logistic_regression_accuracy(xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let (mut w0, mut w1, mut b) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..2000 {
            let (mut g0, mut g1, mut gb) = (0.0, 0.0, 0.0);
            for (x, &y) in xs.iter().zip(ys) {
                let p = 1.0 / (1.0 + (-(w0 * x[0] + w1 * x[1] + b)).exp());
                let e = p - y as f64;
                g0 += e * x[0];
                g1 += e * x[1];
                gb += e;
            }
            w0 -= 0.5 * g0 / xs.len() as f64;
            w1 -= 0.5 * g1 / xs.len() as f64;
            b -= 0.5 * gb / xs.len() as f64;
        }
        let ok = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| usize::from(w0 * x[0] + w1 * x[1] + b > 0.0) == y)
            .count();
        ok as f64 / xs.len() as f64
    }

    #[test]
    fn fits_a_separable_set() {
        let (xs, ys) = separable_set();
        assert_eq!(logistic_regression_accuracy(&xs, &ys), 1.0);
        let mut net = Network::<f64>::init(NetworkSpec::new(2, vec![16], 2, 1)).unwrap();
        let params = FitParams {
            learning_rate: 1e-2,
            ..FitParams::default()
        };
        let report = net.fit(&xs, &ys, &params).unwrap();
        assert!(report.training_accuracy >= 0.99, "{report:?}");
        assert_eq!(report.epoch_losses.len(), 30);
        assert!(report.epoch_losses.last() < report.epoch_losses.first());
    }

    #[test]
    fn fit_is_deterministic() {
        let (xs, ys) = separable_set();
        let run = || {
            let mut net = Network::<f64>::init(NetworkSpec::new(2, vec![8], 2, 3)).unwrap();
            net.fit(&xs, &ys, &FitParams { epochs: 3, ..FitParams::default() })
                .unwrap();
            net.to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fit_rejects_single_class() {
        let mut net = Network::<f64>::init(NetworkSpec::new(2, vec![4], 2, 0)).unwrap();
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            net.fit(&xs, &[1, 1], &FitParams::default()),
            Err(Error::SingleClass(1))
        ));
    }

    #[test]
    fn fit_reports_divergence() {
        let spec = NetworkSpec::new(2, vec![2], 2, 0);
        let big = |i, o| Layer {
            inputs: i,
            outputs: o,
            weights: vec![1e200; i * o],
            biases: vec![0.0; o],
        };
        let mut net = Network::from_layers(spec, vec![big(2, 2), big(2, 2)]).unwrap();
        let xs = vec![vec![1e200, 1e200], vec![-1e200, 1e200]];
        let r = net.fit(&xs, &[0, 1], &FitParams::default());
        assert!(matches!(r, Err(Error::Diverged { epoch: 0, .. })), "{r:?}");
    }

    #[test]
    fn evaluate_matches_manual_recount() {
        let net = Network::<f64>::init(NetworkSpec::new(3, vec![5], 2, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<usize> = (0..40).map(|_| rng.gen_range(0..2)).collect();
        let m = net.evaluate(&xs, &ys).unwrap();
        let preds: Vec<usize> = xs.iter().map(|x| net.predict(x).unwrap()).collect();
        let correct = preds.iter().zip(&ys).filter(|(p, y)| p == y).count();
        assert!((m.accuracy - correct as f64 / 40.0).abs() < 1e-15);
        for k in 0..2 {
            let tp = preds.iter().zip(&ys).filter(|(&p, &y)| p == k && y == k).count() as f64;
            let pk = preds.iter().filter(|&&p| p == k).count() as f64;
            let yk = ys.iter().filter(|&&y| y == k).count() as f64;
            let p = if pk > 0.0 { tp / pk } else { 0.0 };
            let r = if yk > 0.0 { tp / yk } else { 0.0 };
            assert!((m.per_class[k].precision - p).abs() < 1e-15);
            assert!((m.per_class[k].recall - r).abs() < 1e-15);
        }
    }

    #[test]
    fn bytes_round_trip_is_bit_exact() {
        let net = Network::<f64>::init(NetworkSpec::new(6, vec![5, 4], 3, 21)).unwrap();
        let back = Network::<f64>::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back, net);
        let x = [0.1, 0.0, 2.0, -1.0, 0.5, 3.0];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());

        let small = Network::<f32>::init(NetworkSpec::new(4, vec![3], 2, 1)).unwrap();
        assert_eq!(Network::<f32>::from_bytes(&small.to_bytes()).unwrap(), small);
        assert!(Network::<f64>::from_bytes(&small.to_bytes()).is_err());
        assert!(Network::<f64>::from_bytes(&net.to_bytes()[..20]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let (xs, ys) = separable_set();
        let xs32: Vec<Vec<f32>> = xs.iter().map(|x| x.iter().map(|&v| v as f32).collect()).collect();
        let mut net = Network::<f32>::init(NetworkSpec::new(2, vec![16], 2, 1)).unwrap();
        let report = net
            .fit(&xs32, &ys, &FitParams { learning_rate: 1e-2, ..FitParams::default() })
            .unwrap();
        assert!(report.training_accuracy >= 0.97);
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(seed in 0u64..40) {
            let mut net = Network::<f64>::init(NetworkSpec::new(5, vec![4], 3, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            // perturb so biases are non-zero as well
            let mut p = net.parameters();
            for v in p.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
            net.set_parameters(&p).unwrap();
            let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
            let (_, g) = net.loss_and_gradients(&xs, &ys).unwrap();
            let analytic = g.flatten();
            let h = 1e-5;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus[i] += h;
                let mut minus = p.clone();
                minus[i] -= h;
                net.set_parameters(&plus).unwrap();
                let lp = net.loss_and_gradients(&xs, &ys).unwrap().0;
                net.set_parameters(&minus).unwrap();
                let lm = net.loss_and_gradients(&xs, &ys).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
                prop_assert!((analytic[i] - numeric).abs() / denom < 1e-4 || (analytic[i] - numeric).abs() < 1e-9,
                    "param {}: analytic {} numeric {}", i, analytic[i], numeric);
            }
            net.set_parameters(&p).unwrap();
        }

        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let net = Network::<f64>::init(NetworkSpec::new(4, vec![6], 5, seed % 17)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-scale..scale)).collect();
            let p = net.forward(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
