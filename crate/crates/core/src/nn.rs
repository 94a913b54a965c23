//! Dense ReLU binary classifier: parameters, inference, BCE loss,
//! backpropagation and Adam.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid_f64, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLIP, 1 - BCE_CLIP]` before the log.
pub const BCE_CLIP: f64 = 1e-7;

/// One affine layer. `weights` is row-major with `rows = fan_out`,
/// `cols = fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S = f64> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Copy> Layer<S> {
    #[inline]
    pub fn w(&self, r: usize, c: usize) -> S {
        self.weights[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<T>(&self, mut f: impl FnMut(S) -> T) -> Layer<T> {
        Layer {
            rows: self.rows,
            cols: self.cols,
            weights: self.weights.iter().map(|&w| f(w)).collect(),
            bias: self.bias.iter().map(|&b| f(b)).collect(),
        }
    }
}

impl Layer<f64> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err(Error::config("layer must have at least one row and column"));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::config("ragged weight matrix"));
        }
        if bias.len() != r {
            return Err(Error::config(format!(
                "bias length {} does not match {} rows",
                bias.len(),
                r
            )));
        }
        Ok(Layer {
            rows: r,
            cols: c,
            weights: rows.into_iter().flatten().collect(),
            bias,
        })
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows).map(|r| {
            self.row(r)
                .iter()
                .zip(input)
                .fold(self.bias[r], |acc, (w, x)| acc + w * x)
        }));
    }
}

/// The classifier `f(x) = sigmoid(W_L relu(... relu(W_1 x + b_1) ...) + b_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub logit: f64,
    pub prob: f64,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut fan_in = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.cols != fan_in {
                return Err(Error::config(format!(
                    "layer {} expects fan-in {} but previous width is {}",
                    i + 1,
                    l.cols,
                    fan_in
                )));
            }
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::config(format!("layer {} has inconsistent storage", i + 1)));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::config(format!("layer {} has non-finite parameters", i + 1)));
            }
            fan_in = l.rows;
        }
        if fan_in != 1 {
            return Err(Error::config("final layer must have a single output"));
        }
        Ok(Network { input_dim, layers })
    }

    /// Xavier-uniform weights, zero biases, seeded.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("layer dims need an input and an output entry"));
        }
        if dims.contains(&0) {
            return Err(Error::config("zero-width layer"));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::config("last layer width must be 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                Layer {
                    rows: fan_out,
                    cols: fan_in,
                    weights: (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Network::new(dims[0], layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::input(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("input contains non-finite values"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Output> {
        self.check_input(x)?;
        let logit = self.logit(x);
        Ok(Output {
            logit,
            prob: sigmoid_f64(logit),
        })
    }

    /// Pre-sigmoid output. Panics on dimension mismatch.
    pub fn logit(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.input_dim, "input dimension mismatch");
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Class 1 iff the logit is non-negative (probability 0.5 counts as 1).
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        self.check_input(x)?;
        Ok(class_of(self.logit(x)))
    }

    /// Parameters registered as independent variables on `tape`, in layer
    /// order (weights then bias).
    pub fn lift<'t>(&self, tape: &'t Tape) -> Vec<Layer<Var<'t>>> {
        self.layers.iter().map(|l| l.map(|v| tape.var(v))).collect()
    }

    /// Reads the adjoints of lifted parameters back into a gradient shaped
    /// like the network.
    pub fn collect_gradient(lifted: &[Layer<Var<'_>>], adjoints: &[f64]) -> Gradients {
        let pick = |v: &Var<'_>| v.index().map_or(0.0, |i| adjoints.get(i).copied().unwrap_or(0.0));
        Gradients {
            layers: lifted
                .iter()
                .map(|l| Layer {
                    rows: l.rows,
                    cols: l.cols,
                    weights: l.weights.iter().map(pick).collect(),
                    bias: l.bias.iter().map(pick).collect(),
                })
                .collect(),
        }
    }
}

pub fn class_of(logit: f64) -> u8 {
    u8::from(logit >= 0.0)
}

/// Logit evaluated with any scalar type; mirrors [`Network::logit`].
pub fn logit_generic<S: Scalar>(layers: &[Layer<S>], x: &[f64]) -> S {
    let mut cur: Vec<S> = x.iter().map(|&v| S::constant(v)).collect();
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        let mut next: Vec<S> = (0..layer.rows)
            .map(|r| {
                cur.iter()
                    .enumerate()
                    .fold(layer.bias[r], |acc, (c, &v)| acc + layer.w(r, c) * v)
            })
            .collect();
        if i < last {
            next.iter_mut().for_each(|v| *v = v.relu());
        }
        cur = next;
    }
    cur[0]
}

/// Binary cross-entropy with the probability clamped away from 0 and 1.
pub fn bce_loss(prob: f64, y: u8) -> f64 {
    let p = prob.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// BCE on any scalar type, same clamp.
pub fn bce_generic<S: Scalar>(prob: S, y: u8) -> S {
    let p = prob.max(S::constant(BCE_CLIP)).min(S::constant(1.0 - BCE_CLIP));
    if y == 1 {
        -p.ln()
    } else {
        -(S::constant(1.0) - p).ln()
    }
}

/// Tensors shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, c: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += c * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += c * y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= c);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Mean clamped BCE over `batch` and its exact gradient (backpropagation).
pub fn bce_gradients(net: &Network, batch: &[(&[f64], u8)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut total = 0.0;
    let nl = net.layers.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
    for &(x, y) in batch {
        net.check_input(x)?;
        acts.clear();
        acts.push(x.to_vec());
        for (i, layer) in net.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.affine(&acts[i], &mut out);
            if i + 1 < nl {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        let logit = acts[nl][0];
        let prob = sigmoid_f64(logit);
        total += bce_loss(prob, y);

        // d loss / d logit; zero once the clamp is active.
        let clamped = !(BCE_CLIP..=1.0 - BCE_CLIP).contains(&prob);
        let mut delta = vec![if clamped { 0.0 } else { prob - f64::from(y) }];
        for i in (0..nl).rev() {
            let layer = &net.layers[i];
            let g = &mut grads.layers[i];
            let input = &acts[i];
            for r in 0..layer.rows {
                let d = delta[r] / n;
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                row.iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a);
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.cols];
                for (r, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        prev.iter_mut().zip(layer.row(r)).for_each(|(p, w)| *p += d * w);
                    }
                }
                // relu'(pre) with post-activation > 0 iff pre > 0
                prev.iter_mut().zip(input).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0
                    }
                });
                delta = prev;
            }
        }
    }
    Ok((total / n, grads))
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

    pub fn new(net: &Network, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn update(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let shapes_match = net.layers.len() == grads.layers.len()
            && net
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len())
            && self.m.layers.len() == net.layers.len();
        if !shapes_match {
            return Err(Error::Internal("gradient shape does not match network".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            let params = p.weights.iter_mut().chain(p.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
}

impl Network {
    pub fn to_json(&self) -> String {
        let last = self.layers.len() - 1;
        let file = ModelFile {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| LayerFile {
                    weights: (0..l.rows).map(|r| l.row(r).to_vec()).collect(),
                    bias: l.bias.clone(),
                    activation: if i == last { "sigmoid" } else { "relu" }.to_string(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::config(format!("model file: {e}")))?;
        let last = file.layers.len().saturating_sub(1);
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            let expected = if i == last { "sigmoid" } else { "relu" };
            if l.activation != expected {
                return Err(Error::config(format!(
                    "layer {} activation is {:?}, expected {:?}",
                    i + 1,
                    l.activation,
                    expected
                )));
            }
            layers.push(Layer::from_rows(l.weights, l.bias)?);
        }
        Network::new(file.input_dim, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Network::from_json(&text)
    }
}
