//! Reference fully connected network and its SGD trainer.
//!
//! The trained weights are what the approximate layers are later fitted to.
//! Each layer holds `W` with shape `(in_dim, out_dim)`; the pre-activation of
//! an input row `a` is `s = aᵀW + b`, i.e. `s_j = (Wᵀa)_j`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::idx::LabeledDataset;
use crate::error::{AmuError, Result};
use crate::matrix::{gemm_into, DenseMatrix};
use crate::train::ThresholdSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Optional quantization thresholds applied after this layer.
    pub thresholds: Option<ThresholdSet>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Pre-activation `aᵀW + b` for a single input vector.
    pub fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += a * w;
            }
        }
        out
    }

    fn activate(&self, v: &mut [f64]) {
        if self.activation == Activation::Relu {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    /// Training-set accuracy recorded after the last epoch.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub layer_dims: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Inverted dropout rate applied after every hidden activation.
    pub dropout: f64,
}

impl TrainConfig {
    pub fn new(layer_dims: Vec<usize>, epochs: usize, seed: u64) -> Self {
        TrainConfig { layer_dims, epochs, seed, learning_rate: 0.05, batch_size: 32, dropout: 0.0 }
    }
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::out_dim));
        dims
    }

    /// He-initialised network: ReLU on every layer except the last.
    pub fn random(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(AmuError::config(format!("invalid layer dims {layer_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = layer_dims.len() - 1;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
                let data = (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect();
                DenseLayer {
                    weights: DenseMatrix::from_vec(w[0], w[1], data).expect("finite"),
                    bias: vec![0.0; w[1]],
                    activation: if i + 1 == n { Activation::Identity } else { Activation::Relu },
                    thresholds: None,
                }
            })
            .collect();
        Ok(MlpModel { layers, train_accuracy: 0.0 })
    }

    /// Forward pass for one sample, returning the output scores.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        for layer in &self.layers {
            h = layer.pre_activation(&h);
            layer.activate(&mut h);
        }
        h
    }

    /// Batched forward pass returning every layer's pre-activation matrix.
    pub fn pre_activations(&self, samples: &DenseMatrix) -> Vec<DenseMatrix> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = samples.clone();
        for layer in &self.layers {
            let mut z = broadcast_bias(samples.rows(), &layer.bias);
            gemm_into(&h, false, &layer.weights, false, &mut z, 1.0);
            h = z.clone();
            if layer.activation == Activation::Relu {
                h.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
            }
            out.push(z);
        }
        out
    }

    pub fn predict(&self, samples: &DenseMatrix) -> Vec<usize> {
        let scores = self.pre_activations(samples).pop().expect("at least one layer");
        scores.iter_rows().map(argmax).collect()
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut correct = 0usize;
        for start in (0..data.len()).step_by(1024) {
            let idx: Vec<usize> = (start..(start + 1024).min(data.len())).collect();
            let pred = self.predict(&data.samples.select_rows(&idx));
            correct += pred.iter().zip(&data.labels[start..]).filter(|(p, l)| p == l).count();
        }
        correct as f64 / data.len() as f64
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn broadcast_bias(rows: usize, bias: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, bias.len());
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(bias);
    }
    m
}

/// Trains a reference MLP with plain mini-batch SGD and softmax cross-entropy.
pub fn train_reference_mlp(
    dataset: &LabeledDataset,
    layer_dims: &[usize],
    epochs: usize,
    seed: u64,
) -> Result<MlpModel> {
    train_mlp(dataset, &TrainConfig::new(layer_dims.to_vec(), epochs, seed))
}

pub fn train_mlp(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<MlpModel> {
    let dims = &cfg.layer_dims;
    if dims.first() != Some(&dataset.dim()) {
        return Err(AmuError::config(format!(
            "layer dims {dims:?} must start at the input dimension {}",
            dataset.dim()
        )));
    }
    if dims.last() != Some(&dataset.n_classes) {
        return Err(AmuError::config(format!(
            "layer dims {dims:?} must end at the class count {}",
            dataset.n_classes
        )));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(AmuError::config("batch size and learning rate must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(AmuError::config(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    let mut model = MlpModel::random(dims, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            sgd_step(&mut model, dataset, batch, cfg.learning_rate, cfg.dropout, &mut rng);
        }
    }
    model.train_accuracy = model.accuracy(dataset);
    Ok(model)
}

fn sgd_step(model: &mut MlpModel, data: &LabeledDataset, batch: &[usize], lr: f64, dropout: f64, rng: &mut ChaCha8Rng) {
    let b = batch.len();
    let x = data.samples.select_rows(batch);
    let n_layers = model.layers.len();
    // activations[l] is the input of layer l
    let mut activations = vec![x];
    let mut pre = Vec::with_capacity(n_layers);
    // masks[l] scales the output of layer l (already divided by the keep rate)
    let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_layers);
    for (l, layer) in model.layers.iter().enumerate() {
        let mut z = broadcast_bias(b, &layer.bias);
        gemm_into(activations.last().unwrap(), false, &layer.weights, false, &mut z, 1.0);
        let mut h = z.clone();
        if layer.activation == Activation::Relu {
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let mask = (dropout > 0.0 && l + 1 < n_layers).then(|| {
            let keep = 1.0 - dropout;
            (0..h.as_slice().len()).map(|_| if rng.random::<f64>() < dropout { 0.0 } else { 1.0 / keep }).collect::<Vec<_>>()
        });
        if let Some(m) = &mask {
            h.as_mut_slice().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        masks.push(mask);
        pre.push(z);
        activations.push(h);
    }

    // softmax cross-entropy gradient w.r.t. the logits
    let mut grad = activations.pop().unwrap();
    for (r, &sample) in batch.iter().enumerate() {
        let row = grad.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum * b as f64;
        }
        row[data.labels[sample]] -= 1.0 / b as f64;
    }

    for l in (0..model.layers.len()).rev() {
        let input = &activations[l];
        let layer = &model.layers[l];
        let mut grad_w = DenseMatrix::zeros(layer.in_dim(), layer.out_dim());
        gemm_into(input, true, &grad, false, &mut grad_w, 0.0);
        let mut grad_b = vec![0.0; layer.out_dim()];
        for row in grad.iter_rows() {
            grad_b.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        let next_grad = if l > 0 {
            let mut g = DenseMatrix::zeros(b, layer.in_dim());
            gemm_into(&grad, false, &layer.weights, true, &mut g, 0.0);
            if let Some(m) = &masks[l - 1] {
                g.as_mut_slice().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            if model.layers[l - 1].activation == Activation::Relu {
                for (gv, zv) in g.as_mut_slice().iter_mut().zip(pre[l - 1].as_slice()) {
                    if *zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            Some(g)
        } else {
            None
        };
        let layer = &mut model.layers[l];
        for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(grad_w.as_slice()) {
            *w -= lr * g;
        }
        for (bv, g) in layer.bias.iter_mut().zip(&grad_b) {
            *bv -= lr * g;
        }
        if let Some(g) = next_grad {
            grad = g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> LabeledDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0;
            rows.push(vec![1.0 + t, 0.5 - t]);
            labels.push(0);
            rows.push(vec![-1.0 - t, -0.5 + t]);
            labels.push(1);
        }
        LabeledDataset::new(DenseMatrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = separable();
        let model = train_reference_mlp(&data, &[2, 2], 20, 3).unwrap();
        assert_eq!(model.accuracy(&data), 1.0);
        assert_eq!(model.train_accuracy, 1.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let data = separable();
        let a = train_reference_mlp(&data, &[2, 4, 2], 3, 11).unwrap();
        let b = train_reference_mlp(&data, &[2, 4, 2], 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let data = separable();
        assert!(matches!(train_reference_mlp(&data, &[3, 2], 1, 0), Err(AmuError::Config(_))));
        assert!(matches!(train_reference_mlp(&data, &[2, 5], 1, 0), Err(AmuError::Config(_))));
    }

    #[test]
    fn zero_epochs_returns_random_model() {
        let data = separable();
        let model = train_reference_mlp(&data, &[2, 8, 2], 0, 5).unwrap();
        assert_eq!(model, MlpModel { train_accuracy: model.train_accuracy, ..MlpModel::random(&[2, 8, 2], 5).unwrap() });
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let model = MlpModel::random(&[5, 7, 3], 1).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.1, -0.2, 0.3, 0.0, 1.0]]).unwrap();
        let batched = model.pre_activations(&x).pop().unwrap();
        for (a, b) in batched.row(0).iter().zip(model.forward(x.row(0))) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1, 3, 3, 2]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
