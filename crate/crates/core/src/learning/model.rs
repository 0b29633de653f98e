//! Flat-parameter classifiers: multinomial logistic regression and a
//! one-hidden-layer ReLU network.
//!
//! Parameters live in a single `Vec<f64>`. Layers are stored one after the
//! other; within a layer the weight matrix is row-major with shape
//! `(outputs, inputs)` and is followed by that layer's bias vector.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Softmax {
        input_dim: usize,
        classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::Softmax { input_dim, .. } | Arch::Mlp { input_dim, .. } => input_dim,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Arch::Softmax { classes, .. } | Arch::Mlp { classes, .. } => classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Softmax { input_dim, classes } => classes * input_dim + classes,
            Arch::Mlp {
                input_dim,
                hidden,
                classes,
            } => hidden * input_dim + hidden + classes * hidden + classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Arch,
    weights: Vec<f64>,
}

/// Immutable snapshot handed between agents.
pub type SharedParams = Arc<ModelParams>;

impl ModelParams {
    pub fn zeros(arch: Arch) -> ModelParams {
        ModelParams {
            arch,
            weights: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_weights(arch: Arch, weights: Vec<f64>) -> Result<ModelParams> {
        if weights.len() != arch.param_count() {
            return Err(Error::argument(format!(
                "{arch:?} needs {} weights, got {}",
                arch.param_count(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::argument(format!("weight {i} is not finite")));
        }
        Ok(ModelParams { arch, weights })
    }

    /// Softmax regression starts at zero. The MLP draws its weight matrices
    /// from N(0, 2 / fan_in) with zero biases.
    pub fn init(arch: Arch, rng: &mut impl Rng) -> ModelParams {
        let mut p = ModelParams::zeros(arch);
        if let Arch::Mlp {
            input_dim,
            hidden,
            classes,
        } = arch
        {
            let l = MlpLayout::new(input_dim, hidden, classes);
            let n1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("valid std");
            let n2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).expect("valid std");
            for w in &mut p.weights[l.w1.clone()] {
                *w = n1.sample(rng);
            }
            for w in &mut p.weights[l.w2.clone()] {
                *w = n2.sample(rng);
            }
        }
        p
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    fn check_input(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() != self.arch.input_dim() {
            return Err(Error::argument(format!(
                "model expects {} features, dataset has {}",
                self.arch.input_dim(),
                data.input_dim()
            )));
        }
        if data.classes() > self.arch.classes() {
            return Err(Error::argument(format!(
                "model has {} classes, dataset has {}",
                self.arch.classes(),
                data.classes()
            )));
        }
        Ok(())
    }

    /// Writes the class scores for `x` into `out`; `scratch` must hold the
    /// hidden activations for the MLP (unused for softmax).
    fn logits_into(&self, x: &[f64], hidden_act: &mut [f64], out: &mut [f64]) {
        match self.arch {
            Arch::Softmax { input_dim, classes } => {
                affine(&self.weights, 0, input_dim, classes, x, out);
            }
            Arch::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let l = MlpLayout::new(input_dim, hidden, classes);
                affine(&self.weights, l.w1.start, input_dim, hidden, x, hidden_act);
                for h in hidden_act.iter_mut() {
                    *h = h.max(0.0);
                }
                affine(&self.weights, l.w2.start, hidden, classes, hidden_act, out);
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut out = vec![0.0; self.arch.classes()];
        self.logits_into(x, &mut hidden, &mut out);
        out
    }

    fn hidden_width(&self) -> usize {
        match self.arch {
            Arch::Softmax { .. } => 0,
            Arch::Mlp { hidden, .. } => hidden,
        }
    }

    /// Index of the largest score; ties go to the smallest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Mean cross-entropy over `batch` (row indices into `data`).
    pub fn loss(&self, data: &Dataset, batch: &[usize]) -> Result<f64> {
        self.check_input(data)?;
        if batch.is_empty() {
            return Err(Error::argument("empty batch"));
        }
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut z = vec![0.0; self.arch.classes()];
        let mut total = 0.0;
        for &i in batch {
            self.logits_into(data.row(i), &mut hidden, &mut z);
            total += log_sum_exp(&z) - z[data.label(i)];
        }
        Ok(total / batch.len() as f64)
    }
}

/// Proximal objective `f(x; batch) + rho/2 * ||x - anchor||^2`.
pub fn proximal_loss(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    anchor: &ModelParams,
    rho: f64,
) -> Result<f64> {
    check_same_arch(params, anchor)?;
    let f = params.loss(data, batch)?;
    let sq: f64 = params
        .weights
        .iter()
        .zip(&anchor.weights)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(f + 0.5 * rho * sq)
}

fn check_same_arch(a: &ModelParams, b: &ModelParams) -> Result<()> {
    if a.arch != b.arch {
        return Err(Error::argument(format!(
            "architecture mismatch: {:?} vs {:?}",
            a.arch, b.arch
        )));
    }
    Ok(())
}

/// Gradient of the proximal objective: the mean cross-entropy gradient over
/// `batch` plus `rho * (params - anchor)`.
pub fn grad(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    anchor: &ModelParams,
    rho: f64,
) -> Result<Vec<f64>> {
    check_same_arch(params, anchor)?;
    params.check_input(data)?;
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let mut g = vec![0.0; params.weights.len()];
    match params.arch {
        Arch::Softmax { input_dim, classes } => {
            let mut z = vec![0.0; classes];
            for &i in batch {
                let x = data.row(i);
                affine(&params.weights, 0, input_dim, classes, x, &mut z);
                softmax_in_place(&mut z);
                z[data.label(i)] -= 1.0;
                accumulate_outer(&mut g, 0, input_dim, classes, &z, x);
            }
        }
        Arch::Mlp {
            input_dim,
            hidden,
            classes,
        } => {
            let l = MlpLayout::new(input_dim, hidden, classes);
            let w = &params.weights;
            let mut pre = vec![0.0; hidden];
            let mut act = vec![0.0; hidden];
            let mut z = vec![0.0; classes];
            let mut dh = vec![0.0; hidden];
            for &i in batch {
                let x = data.row(i);
                affine(w, l.w1.start, input_dim, hidden, x, &mut pre);
                for (a, p) in act.iter_mut().zip(&pre) {
                    *a = p.max(0.0);
                }
                affine(w, l.w2.start, hidden, classes, &act, &mut z);
                softmax_in_place(&mut z);
                z[data.label(i)] -= 1.0;
                accumulate_outer(&mut g, l.w2.start, hidden, classes, &z, &act);
                // back through the output layer and the rectifier
                dh.iter_mut().for_each(|d| *d = 0.0);
                for (c, dz) in z.iter().enumerate() {
                    let row = &w[l.w2.start + c * hidden..l.w2.start + (c + 1) * hidden];
                    for (d, wk) in dh.iter_mut().zip(row) {
                        *d += dz * wk;
                    }
                }
                for (d, p) in dh.iter_mut().zip(&pre) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
                accumulate_outer(&mut g, l.w1.start, input_dim, hidden, &dh, x);
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for ((gi, xi), ai) in g.iter_mut().zip(&params.weights).zip(&anchor.weights) {
        *gi = *gi * scale + rho * (xi - ai);
    }
    Ok(g)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct MlpLayout {
    w1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
}

impl MlpLayout {
    fn new(input_dim: usize, hidden: usize, classes: usize) -> MlpLayout {
        let w1 = 0..hidden * input_dim;
        let b1_end = w1.end + hidden;
        let w2 = b1_end..b1_end + classes * hidden;
        MlpLayout { w1, w2 }
    }
}

/// `out = W x + b` for the layer whose weight block starts at `start`
/// (bias stored right after the `outputs x inputs` block).
fn affine(w: &[f64], start: usize, inputs: usize, outputs: usize, x: &[f64], out: &mut [f64]) {
    let bias = start + outputs * inputs;
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[start + o * inputs..start + (o + 1) * inputs];
        let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        *slot = dot + w[bias + o];
    }
}

/// Adds `delta ⊗ x` to the weight block at `start` and `delta` to its bias.
fn accumulate_outer(g: &mut [f64], start: usize, inputs: usize, outputs: usize, delta: &[f64], x: &[f64]) {
    let bias = start + outputs * inputs;
    for (o, &d) in delta.iter().enumerate() {
        let row = &mut g[start + o * inputs..start + (o + 1) * inputs];
        for (gk, xk) in row.iter_mut().zip(x) {
            *gk += d * xk;
        }
        g[bias + o] += d;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}
