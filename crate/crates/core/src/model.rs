//! Dense classifiers: a linear model and a ReLU multilayer perceptron with
//! hand-rolled forward and reverse passes in `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One dense layer; weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn he_uniform(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            weight,
            bias: vec![0.0; out_dim],
            activation,
            in_dim,
            out_dim,
        }
    }
}

/// Trainable parameters of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded by [`ModelParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Gradients with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Index of the first layer containing a non-finite entry, if any.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.weight.iter().chain(&l.bias).any(|x| !x.is_finite()))
    }
}

impl ModelParams {
    /// Single dense layer `d -> c`, no activation.
    pub fn linear(input_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: vec![Layer::he_uniform(
                input_dim,
                num_classes,
                Activation::Identity,
                rng,
            )],
        }
    }

    /// ReLU perceptron `d -> hidden[0] -> ... -> c`.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &width in hidden {
            layers.push(Layer::he_uniform(prev, width, Activation::Relu, rng));
            prev = width;
        }
        layers.push(Layer::he_uniform(
            prev,
            num_classes,
            Activation::Identity,
            rng,
        ));
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass recording everything the reverse pass needs.
    pub fn forward(&self, x: &[f32]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for model with input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        for layer in &self.layers {
            let z = affine(layer, &act);
            inputs.push(act);
            act = match layer.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            preacts.push(z);
        }
        Ok((act, ForwardCache { inputs, preacts }))
    }

    /// Forward pass without a cache, for prediction and evaluation.
    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for model with input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut act: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        for layer in &self.layers {
            let mut z = affine(layer, &act);
            if layer.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = z;
        }
        Ok(act)
    }

    /// Accumulates parameter gradients for one instance into `grads`.
    /// The ReLU subgradient at exactly zero is taken as zero.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<()> {
        if dlogits.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient of length {} for output dim {}",
                dlogits.len(),
                self.output_dim()
            )));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(
                "forward cache does not match this model".into(),
            ));
        }
        let mut delta = dlogits.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.preacts[l];
            if layer.activation == Activation::Relu {
                for (d, &zv) in delta.iter_mut().zip(z) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (w, &xin) in row.iter_mut().zip(input) {
                        *w += d * xin;
                    }
                }
                g.bias[o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (p, &w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Fresh gradients for one instance.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<ParamGrads> {
        let mut grads = ParamGrads::zeros_like(self);
        self.backward_into(cache, dlogits, &mut grads)?;
        Ok(grads)
    }

    /// All parameters in layer order, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`Self::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w_len = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + w_len]);
            at += w_len;
            let b_len = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + b_len]);
            at += b_len;
        }
        Ok(())
    }

    /// Plain-text checkpoint; layout documented in the README.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "llp-model v1")?;
        writeln!(w, "layers {}", self.layers.len())?;
        for l in &self.layers {
            let act = match l.activation {
                Activation::Relu => "relu",
                Activation::Identity => "identity",
            };
            writeln!(w, "layer {} {} {}", l.in_dim, l.out_dim, act)?;
            for row in l.weight.chunks(l.in_dim) {
                let line: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            let line: Vec<String> = l.bias.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let bad = |msg: &str| Error::Config(format!("{}: {msg}", path.display()));

        let header = lines.next().transpose()?.ok_or_else(|| bad("empty file"))?;
        if header.trim() != "llp-model v1" {
            return Err(bad("not a v1 model checkpoint"));
        }
        let count_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| bad("missing layer count"))?;
        let n: usize = count_line
            .strip_prefix("layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("malformed layer count"))?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let head = lines
                .next()
                .transpose()?
                .ok_or_else(|| bad("missing layer header"))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(bad("malformed layer header"));
            }
            let in_dim: usize = parts[1].parse().map_err(|_| bad("bad in_dim"))?;
            let out_dim: usize = parts[2].parse().map_err(|_| bad("bad out_dim"))?;
            let activation = match parts[3] {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                _ => return Err(bad("unknown activation")),
            };
            let mut weight = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..out_dim {
                let row = lines
                    .next()
                    .transpose()?
                    .ok_or_else(|| bad("missing weight row"))?;
                for tok in row.split_whitespace() {
                    weight.push(tok.parse().map_err(|_| bad("bad weight value"))?);
                }
            }
            if weight.len() != in_dim * out_dim {
                return Err(bad("weight row length mismatch"));
            }
            let brow = lines
                .next()
                .transpose()?
                .ok_or_else(|| bad("missing bias row"))?;
            let bias: Vec<f64> = brow
                .split_whitespace()
                .map(|tok| tok.parse().map_err(|_| bad("bad bias value")))
                .collect::<Result<_>>()?;
            if bias.len() != out_dim {
                return Err(bad("bias length mismatch"));
            }
            layers.push(Layer {
                weight,
                bias,
                activation,
                in_dim,
                out_dim,
            });
        }
        Ok(Self { layers })
    }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let mut z = layer.bias.clone();
    for (o, zo) in z.iter_mut().enumerate() {
        let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut acc = 0.0;
        for (&w, &xi) in row.iter().zip(x) {
            acc += w * xi;
        }
        *zo += acc;
    }
    z
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(sum(exp(logits)))` with the same max-subtraction as [`softmax`].
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
