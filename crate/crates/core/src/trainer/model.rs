//! Fully connected network with an explicit forward stash and backward pass.
//!
//! Arithmetic is carried out in `f64`. When a storage precision is given,
//! every layer's weights and input activation are rounded to the storage
//! format and their mantissas truncated to the requested width before use;
//! the backward pass consumes exactly those stored values. Gradients flow
//! through the rounding unchanged (straight-through), and the master
//! weights stay in `f64`.
//!
//! Quantized tensors are numbered `2l` (weights of layer `l`) and `2l + 1`
//! (input activation of layer `l`).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bitlearn::TensorKind;
use crate::error::{Error, Result};
use crate::floatcore::{decompose, quantize_bits, FloatFormat, NonFinitePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean softmax cross-entropy over the batch.
    SoftmaxCrossEntropy,
    /// `0.5 * sum((z - onehot)^2) / batch`.
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Applied after every layer but the last.
    pub hidden: Activation,
    pub loss: LossKind,
}

/// How stored tensors are represented.
#[derive(Debug, Clone, Copy)]
pub enum Precision<'a> {
    /// Plain `f64`, nothing stored in a narrower format.
    Exact,
    /// Round to `format`, then keep `widths[t]` mantissa bits of tensor `t`.
    Stored { format: FloatFormat, widths: &'a [u32] },
}

/// One stored tensor after the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub kind: TensorKind,
    pub layer: usize,
    pub width: u32,
    /// Patterns before mantissa truncation (empty for exact precision).
    pub full: Vec<u32>,
    /// Patterns as stored.
    pub stored: Vec<u32>,
    /// Values the arithmetic used.
    pub values: Vec<f64>,
    /// Loss gradient with respect to `values`; filled by the backward pass.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub batch: usize,
    pub tensors: Vec<StoredTensor>,
    /// Pre-activations of every layer, `batch x outputs`.
    pub pre: Vec<Vec<f64>>,
    pub loss: f64,
    pub correct: usize,
    dout: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-initialized network with layer sizes `dims`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, loss: LossKind, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let std = (2.0 / inputs as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self { layers, hidden, loss })
    }

    pub fn from_layers(layers: Vec<Layer>, hidden: Activation, loss: LossKind) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::contract(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::contract(format!("layer {i} input width mismatch")));
            }
        }
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        Ok(Self { layers, hidden, loss })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn tensor_kind(t: usize) -> TensorKind {
        if t % 2 == 0 {
            TensorKind::Weights
        } else {
            TensorKind::Activations
        }
    }

    /// Element count of every quantized tensor for a batch of `batch` rows.
    pub fn tensor_sizes(&self, batch: usize) -> Vec<u64> {
        self.layers
            .iter()
            .flat_map(|l| [(l.inputs * l.outputs) as u64, (batch * l.inputs) as u64])
            .collect()
    }

    /// Whether tensor `t` can only hold non-negative values.
    pub fn tensor_signless(&self, t: usize) -> bool {
        t % 2 == 1 && t > 1 && self.hidden == Activation::Relu
    }

    /// Runs the network on `x` (`batch x inputs`) and scores it against
    /// `labels`.
    pub fn forward(&self, x: &[f64], labels: &[usize], precision: Precision<'_>) -> Result<ForwardPass> {
        let batch = labels.len();
        let inputs = self.layers[0].inputs;
        if x.len() != batch * inputs {
            return Err(Error::contract(format!("batch of {} values is not {batch} x {inputs}", x.len())));
        }
        if let Precision::Stored { widths, .. } = precision {
            if widths.len() != self.tensor_count() {
                return Err(Error::contract("one width per quantized tensor"));
            }
        }
        let outputs = self.layers.last().expect("non-empty").outputs;
        if let Some(&bad) = labels.iter().find(|&&y| y >= outputs) {
            return Err(Error::contract(format!("label {bad} out of range for {outputs} outputs")));
        }

        let mut tensors = Vec::with_capacity(self.tensor_count());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = store(&layer.weights, TensorKind::Weights, l, 2 * l, precision)?;
            let a = store(&act, TensorKind::Activations, l, 2 * l + 1, precision)?;
            let mut z = vec![0.0; batch * layer.outputs];
            for b in 0..batch {
                let row = &a.values[b * layer.inputs..(b + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let wrow = &w.values[o * layer.inputs..(o + 1) * layer.inputs];
                    let mut s = layer.bias[o];
                    for i in 0..layer.inputs {
                        s += wrow[i] * row[i];
                    }
                    z[b * layer.outputs + o] = s;
                }
            }
            if let Some(v) = z.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {l} produced non-finite pre-activation {v}")));
            }
            act = if l + 1 < self.layers.len() {
                z.iter().map(|&v| self.hidden.apply(v)).collect()
            } else {
                Vec::new()
            };
            tensors.push(w);
            tensors.push(a);
            pre.push(z);
        }

        let logits = pre.last().expect("non-empty");
        let (loss, correct, dout) = score(self.loss, logits, labels, outputs);
        Ok(ForwardPass {
            batch,
            tensors,
            pre,
            loss,
            correct,
            dout,
        })
    }

    /// Back-propagates the loss of `pass`, filling every stored tensor's
    /// gradient, and returns the parameter gradients.
    pub fn backward(&self, pass: &mut ForwardPass) -> Result<Gradients> {
        if pass.pre.len() != self.layers.len() || pass.tensors.len() != self.tensor_count() {
            return Err(Error::contract("forward pass does not match this network"));
        }
        let batch = pass.batch;
        let mut weights = vec![Vec::new(); self.layers.len()];
        let mut bias = vec![Vec::new(); self.layers.len()];
        let mut dz = pass.dout.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (ni, no) = (layer.inputs, layer.outputs);
            if dz.len() != batch * no {
                return Err(Error::contract(format!("gradient shape mismatch at layer {l}")));
            }
            let a = &pass.tensors[2 * l + 1].values;
            let w = &pass.tensors[2 * l].values;
            let mut dw = vec![0.0; no * ni];
            let mut db = vec![0.0; no];
            let mut da = vec![0.0; batch * ni];
            for b in 0..batch {
                let arow = &a[b * ni..(b + 1) * ni];
                let darow = &mut da[b * ni..(b + 1) * ni];
                for o in 0..no {
                    let g = dz[b * no + o];
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    let dwrow = &mut dw[o * ni..(o + 1) * ni];
                    let wrow = &w[o * ni..(o + 1) * ni];
                    for i in 0..ni {
                        dwrow[i] += g * arow[i];
                        darow[i] += g * wrow[i];
                    }
                }
            }
            if l > 0 {
                let prev = &pass.pre[l - 1];
                dz = da
                    .iter()
                    .zip(prev)
                    .map(|(&g, &z)| g * self.hidden.derivative(z))
                    .collect();
            }
            pass.tensors[2 * l].grad = dw.clone();
            pass.tensors[2 * l + 1].grad = da;
            weights[l] = dw;
            bias[l] = db;
        }
        Ok(Gradients { weights, bias })
    }

    /// Plain SGD on the master parameters.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
    }
}

fn store(values: &[f64], kind: TensorKind, layer: usize, t: usize, precision: Precision<'_>) -> Result<StoredTensor> {
    let Precision::Stored { format, widths } = precision else {
        return Ok(StoredTensor {
            kind,
            layer,
            width: u32::MAX,
            full: Vec::new(),
            stored: Vec::new(),
            values: values.to_vec(),
            grad: Vec::new(),
        });
    };
    let width = widths[t];
    let mut full = Vec::with_capacity(values.len());
    let mut stored = Vec::with_capacity(values.len());
    let mut used = Vec::with_capacity(values.len());
    for &v in values {
        let bits = format.encode_f32(v as f32);
        if decompose(bits, format).is_non_finite() {
            return Err(Error::Numeric(format!(
                "layer {layer} {kind:?} value {v} does not fit in {format}"
            )));
        }
        let q = quantize_bits(bits, width, format, NonFinitePolicy::Reject)?;
        full.push(bits);
        stored.push(q);
        used.push(format.decode_f32(q) as f64);
    }
    Ok(StoredTensor {
        kind,
        layer,
        width,
        full,
        stored,
        values: used,
        grad: Vec::new(),
    })
}

/// Loss, correct count and `dL/dz` for the output layer.
fn score(kind: LossKind, z: &[f64], labels: &[usize], classes: usize) -> (f64, usize, Vec<f64>) {
    let batch = labels.len();
    let scale = 1.0 / batch.max(1) as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut dz = vec![0.0; z.len()];
    for (b, &y) in labels.iter().enumerate() {
        let row = &z[b * classes..(b + 1) * classes];
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
        correct += (best == y) as usize;
        let drow = &mut dz[b * classes..(b + 1) * classes];
        match kind {
            LossKind::SoftmaxCrossEntropy => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                loss += (sum.ln() + max - row[y]) * scale;
                for (c, d) in drow.iter_mut().enumerate() {
                    let p = (row[c] - max).exp() / sum;
                    *d = (p - (c == y) as u8 as f64) * scale;
                }
            }
            LossKind::SquaredError => {
                for (c, d) in drow.iter_mut().enumerate() {
                    let diff = row[c] - (c == y) as u8 as f64;
                    loss += 0.5 * diff * diff * scale;
                    *d = diff * scale;
                }
            }
        }
    }
    (loss, correct, dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn identity_layer(d: usize) -> Mlp {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Mlp::from_layers(
            vec![Layer { inputs: d, outputs: d, weights: w, bias: vec![0.0; d] }],
            Activation::Identity,
            LossKind::SquaredError,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = identity_layer(3);
        let x = [0.5, -1.25, 3.0, 7.0, 0.0, -2.0];
        let pass = m.forward(&x, &[0, 2], Precision::Exact).unwrap();
        assert_eq!(pass.pre[0], x);
        let widths = [23, 23];
        let fmt = FloatFormat::Fp32;
        let pass = m.forward(&x, &[0, 2], Precision::Stored { format: fmt, widths: &widths }).unwrap();
        assert_eq!(pass.pre[0], x);
    }

    #[test]
    fn single_layer_gradient_matches_finite_differences() {
        let mut r = rng::stream(11, 1);
        let mut m = Mlp::new(&[3, 2], Activation::Identity, LossKind::SquaredError, &mut r).unwrap();
        m.layers[0].bias = vec![0.3, -0.2];
        let x = [0.2, -0.7, 1.1, 0.9, 0.4, -0.3, -1.5, 0.05, 0.6];
        let y = [0, 1, 1];
        let mut pass = m.forward(&x, &y, Precision::Exact).unwrap();
        let g = m.backward(&mut pass).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let mut plus = m.clone();
            plus.layers[0].weights[k] += h;
            let mut minus = m.clone();
            minus.layers[0].weights[k] -= h;
            let lp = plus.forward(&x, &y, Precision::Exact).unwrap().loss;
            let lm = minus.forward(&x, &y, Precision::Exact).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (g.weights[0][k] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "weight {k}: analytic {} vs fd {fd}", g.weights[0][k]);
        }
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let m = Mlp::from_layers(
            vec![
                Layer { inputs: 1, outputs: 2, weights: vec![1.0, -1.0], bias: vec![0.0, 0.0] },
                Layer { inputs: 2, outputs: 1, weights: vec![1.0, 1.0], bias: vec![0.0] },
            ],
            Activation::Relu,
            LossKind::SquaredError,
        )
        .unwrap();
        let mut pass = m.forward(&[2.0], &[0], Precision::Exact).unwrap();
        let g = m.backward(&mut pass).unwrap();
        // The second hidden unit saw -2, so nothing reaches its input weight.
        assert_eq!(g.weights[0][1], 0.0);
        assert_ne!(g.weights[0][0], 0.0);
        assert_eq!(pass.tensors[3].values, vec![2.0, 0.0]);
        assert!(pass.tensors[3].values[1].is_sign_positive());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut r = rng::stream(2, 1);
        let mut m = Mlp::new(&[2, 4, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy, &mut r).unwrap();
        let before = m.clone();
        let mut pass = m.forward(&[1.0, 2.0], &[1], Precision::Exact).unwrap();
        let g = m.backward(&mut pass).unwrap();
        m.sgd_step(&g, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn full_width_storage_matches_format_rounding() {
        let mut r = rng::stream(5, 1);
        let m = Mlp::new(&[2, 8, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy, &mut r).unwrap();
        let x = [0.3, -0.8, 1.7, 0.2];
        let fmt = FloatFormat::Bf16;
        let full = [7; 4];
        let pass = m.forward(&x, &[0, 2], Precision::Stored { format: fmt, widths: &full }).unwrap();
        for t in &pass.tensors {
            assert_eq!(t.full, t.stored);
        }
        let narrow = [2; 4];
        let pass = m.forward(&x, &[0, 2], Precision::Stored { format: fmt, widths: &narrow }).unwrap();
        for t in &pass.tensors {
            assert!(t.stored.iter().all(|&b| b & 0x1F == 0));
        }
    }
}
