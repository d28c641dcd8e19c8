//! Dense networks in `f64` with hand-written gradients, an Adam optimizer,
//! soft target updates and JSON checkpoints that round-trip bit-exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multilayer perceptron: ReLU on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    /// Row-major `out x in` matrices.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; the last entry is the output.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

/// Gradients shaped like an [`Mlp`], plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; net.layer_sizes[0]],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
        self.input.iter_mut().for_each(|x| *x *= factor);
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            weights.push((0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect());
            biases.push((0..n_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let weights = layer_sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
        let biases = layer_sizes.windows(2).map(|p| vec![0.0; p[1]]).collect();
        Self { layer_sizes: layer_sizes.to_vec(), weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated sizes")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cache(input)?.activations.pop().expect("output"))
    }

    pub fn forward_cache(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} values, network expects {}", input.len(), self.input_dim())));
        }
        let mut activations = Vec::with_capacity(self.n_layers() + 1);
        activations.push(input.to_vec());
        for l in 0..self.n_layers() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let x = &activations[l];
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (o, value) in out.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *value += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < self.n_layers() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(out.len(), n_out);
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradients of `output . upstream` with respect to every parameter and
    /// the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<ParamGrads> {
        let mut grads = ParamGrads::zeros_like(self);
        self.accumulate(cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradients of one sample into `grads`.
    pub fn accumulate(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut ParamGrads) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if cache.activations.len() != self.n_layers() + 1 {
            return Err(Error::Shape("forward cache does not match the network".into()));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let n_in = self.layer_sizes[l];
            let x = &cache.activations[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
            }
            grads.biases[l].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                prev.iter_mut().zip(row).for_each(|(p, wi)| *p += d * wi);
            }
            if l > 0 {
                // ReLU derivative, taken as 0 at the kink
                prev.iter_mut().zip(x).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                });
                delta = prev;
            } else {
                grads.input.iter_mut().zip(&prev).for_each(|(g, p)| *g += p);
            }
        }
        Ok(())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten()).copied().collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.n_params(), flat.len())));
        }
        let mut it = flat.iter();
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = *it.next().expect("length checked"));
        }
        Ok(())
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(self.biases.iter().flatten()).all(|v| v.is_finite())
    }
}

/// Numerically stable softmax restricted to `mask`; masked entries are 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Shape(format!("{} logits for a mask of {}", logits.len(), mask.len())));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Contract("softmax over an empty mask".into()));
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    masked_softmax(logits, &vec![true; logits.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; net.n_params()], v: vec![0.0; net.n_params()] }
    }

    /// One bias-corrected adaptive-moment step. Non-finite gradients halt.
    pub fn step(&mut self, net: &mut Mlp, grads: &ParamGrads) -> Result<()> {
        let n = net.n_params();
        if self.m.len() != n || grads.weights.len() != net.weights.len() {
            return Err(Error::Shape("optimizer state does not match the network".into()));
        }
        if grads.params().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let params = net.weights.iter_mut().flatten().chain(net.biases.iter_mut().flatten());
        let g_iter = grads.weights.iter().flatten().chain(grads.biases.iter().flatten());
        for (((p, g), m), v) in params.zip(g_iter).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target <- (1 - tau) target + tau online`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Shape(format!(
            "target {:?} and online {:?} differ",
            target.layer_sizes, online.layer_sizes
        )));
    }
    let pairs = target
        .weights
        .iter_mut()
        .zip(&online.weights)
        .chain(target.biases.iter_mut().zip(&online.biases));
    for (t, o) in pairs {
        t.iter_mut().zip(o).for_each(|(a, b)| *a = (1.0 - tau) * *a + tau * b);
    }
    Ok(())
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Shape(format!("invalid word position `{}`", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub nets: Vec<(String, Mlp)>,
    pub optimizers: Vec<(String, Adam)>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Shape(format!("unsupported checkpoint version {}", ck.version)));
        }
        for (name, net) in &ck.nets {
            let expected: Vec<usize> = net.layer_sizes.windows(2).map(|p| p[0] * p[1]).collect();
            let actual: Vec<usize> = net.weights.iter().map(Vec::len).collect();
            if expected != actual || net.biases.len() != expected.len() {
                return Err(Error::Shape(format!("network `{name}` has inconsistent shapes")));
            }
        }
        Ok(ck)
    }
}

/// Central finite-difference check of `f(x) = output . upstream`; returns
/// the largest relative error over `probes` randomly chosen parameters.
pub fn gradient_check(net: &Mlp, input: &[f64], upstream: &[f64], probes: usize, h: f64, rng: &mut impl Rng) -> Result<f64> {
    let grads = net.backward(&net.forward_cache(input)?, upstream)?;
    let analytic: Vec<f64> = grads.params().copied().collect();
    let base = net.params_flat();
    let f = |params: &[f64]| -> Result<f64> {
        let mut probe = net.clone();
        probe.set_params_flat(params)?;
        Ok(probe.forward(input)?.iter().zip(upstream).map(|(a, b)| a * b).sum())
    };
    let mut worst: f64 = 0.0;
    let mut params = base.clone();
    for _ in 0..probes {
        let i = rng.random_range(0..base.len());
        params[i] = base[i] + h;
        let up = f(&params)?;
        params[i] = base[i] - h;
        let down = f(&params)?;
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Seeded RNG used for network initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
