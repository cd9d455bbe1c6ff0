//! Denoising autoencoder content encoders: reconstruction pretraining,
//! deterministic encoding, and supervised fine-tuning toward hash codes.
//!
//! One hidden layer; logistic activations for the reconstruction net, a tanh
//! head for the embedding so outputs share the ±1 range of the codes.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::BinaryCodeSet;
use crate::data::ContentMatrix;
use crate::error::{Error, Result};

/// Weights and biases of one encoder (input -> hidden -> input).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// hidden x input, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// input x hidden, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub corruption: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl EncoderParams {
    /// Uniform init in `±1/sqrt(fan_in)` under the seed.
    pub fn init(input_dim: usize, hidden_dim: usize, corruption: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidConfig("encoder dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&corruption) {
            return Err(Error::InvalidConfig(format!("corruption {corruption} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden_dim as f64).sqrt();
        Ok(Self {
            input_dim,
            hidden_dim,
            w1: (0..hidden_dim * input_dim).map(|_| rng.random_range(-s1..=s1)).collect(),
            b1: vec![0.0; hidden_dim],
            w2: (0..input_dim * hidden_dim).map(|_| rng.random_range(-s2..=s2)).collect(),
            b2: vec![0.0; input_dim],
            corruption,
        })
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters flattened as `[w1, b1, w2, b2]` for gradient checks.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch("flat parameter length".into()));
        }
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    fn hidden_logistic(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|h| {
                let a: f64 = self.w1[h * self.input_dim..(h + 1) * self.input_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum();
                logistic(a + self.b1[h])
            })
            .collect()
    }

    fn hidden_tanh(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|h| {
                let a: f64 = self.w1[h * self.input_dim..(h + 1) * self.input_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum();
                (a + self.b1[h]).tanh()
            })
            .collect()
    }

    fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        (0..self.input_dim)
            .map(|i| {
                let a: f64 = self.w2[i * self.hidden_dim..(i + 1) * self.hidden_dim]
                    .iter()
                    .zip(z)
                    .map(|(w, v)| w * v)
                    .sum();
                logistic(a + self.b2[i])
            })
            .collect()
    }
}

/// Deterministic embedding: `tanh(W1 c + b1)`, values in [-1, 1].
pub fn encode(params: &EncoderParams, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != params.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "content dim {} vs encoder input {}",
            c.len(),
            params.input_dim
        )));
    }
    Ok(params.hidden_tanh(c))
}

/// Encode every row of a content matrix, flattened row-major.
pub fn encode_all(params: &EncoderParams, content: &ContentMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(content.n_entities() * params.hidden_dim);
    for e in 0..content.n_entities() {
        out.extend(encode(params, content.row(e))?);
    }
    Ok(out)
}

/// Number of entries zeroed per presentation.
pub fn corruption_count(corruption: f64, dim: usize) -> usize {
    (corruption * dim as f64).round() as usize
}

fn corrupt(row: &[f64], corruption: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n_zero = corruption_count(corruption, row.len());
    let mut out = row.to_vec();
    if n_zero > 0 {
        for idx in sample(rng, row.len(), n_zero) {
            out[idx] = 0.0;
        }
    }
    out
}

/// Squared reconstruction error of `clean` from `corrupted`, plus the
/// gradient in [`EncoderParams::to_flat`] order.
pub fn reconstruction_grad(
    params: &EncoderParams,
    clean: &[f64],
    corrupted: &[f64],
) -> (f64, Vec<f64>) {
    let (n_in, n_hid) = (params.input_dim, params.hidden_dim);
    let z = params.hidden_logistic(corrupted);
    let out = params.reconstruct(&z);
    let loss: f64 = out.iter().zip(clean).map(|(o, c)| (o - c) * (o - c)).sum();

    let delta2: Vec<f64> =
        out.iter().zip(clean).map(|(o, c)| 2.0 * (o - c) * o * (1.0 - o)).collect();
    let mut delta1 = vec![0.0; n_hid];
    for (h, d1) in delta1.iter_mut().enumerate() {
        let back: f64 = (0..n_in).map(|i| params.w2[i * n_hid + h] * delta2[i]).sum();
        *d1 = back * z[h] * (1.0 - z[h]);
    }

    let mut grad = vec![0.0; params.n_params()];
    let (g_w1, rest) = grad.split_at_mut(n_hid * n_in);
    let (g_b1, rest) = rest.split_at_mut(n_hid);
    let (g_w2, g_b2) = rest.split_at_mut(n_in * n_hid);
    for h in 0..n_hid {
        for i in 0..n_in {
            g_w1[h * n_in + i] = delta1[h] * corrupted[i];
        }
        g_b1[h] = delta1[h];
    }
    for i in 0..n_in {
        for h in 0..n_hid {
            g_w2[i * n_hid + h] = delta2[i] * z[h];
        }
        g_b2[i] = delta2[i];
    }
    (loss, grad)
}

/// Squared distance between a target code and the tanh embedding, plus the
/// gradient (only the encoder half is touched; W2/b2 entries stay zero).
pub fn supervised_grad(params: &EncoderParams, input: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let (n_in, n_hid) = (params.input_dim, params.hidden_dim);
    let xi = params.hidden_tanh(input);
    let loss: f64 = xi.iter().zip(target).map(|(x, t)| (x - t) * (x - t)).sum();
    let mut grad = vec![0.0; params.n_params()];
    let (g_w1, rest) = grad.split_at_mut(n_hid * n_in);
    let (g_b1, _) = rest.split_at_mut(n_hid);
    for h in 0..n_hid {
        let d = 2.0 * (xi[h] - target[h]) * (1.0 - xi[h] * xi[h]);
        for i in 0..n_in {
            g_w1[h * n_in + i] = d * input[i];
        }
        g_b1[h] = d;
    }
    (loss, grad)
}

fn apply_grad(params: &mut EncoderParams, grad: &[f64], lr: f64) {
    let (n_in, n_hid) = (params.input_dim, params.hidden_dim);
    let (g_w1, rest) = grad.split_at(n_hid * n_in);
    let (g_b1, rest) = rest.split_at(n_hid);
    let (g_w2, g_b2) = rest.split_at(n_in * n_hid);
    for (p, g) in params.w1.iter_mut().zip(g_w1) {
        *p -= lr * g;
    }
    for (p, g) in params.b1.iter_mut().zip(g_b1) {
        *p -= lr * g;
    }
    for (p, g) in params.w2.iter_mut().zip(g_w2) {
        *p -= lr * g;
    }
    for (p, g) in params.b2.iter_mut().zip(g_b2) {
        *p -= lr * g;
    }
}

fn shuffled_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Train a fresh DAE on `content` by SGD over per-row reconstruction error.
pub fn pretrain_dae(
    content: &ContentMatrix,
    embed_dim: usize,
    corruption: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<EncoderParams> {
    let mut params = EncoderParams::init(content.dim(), embed_dim, corruption, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for _epoch in 0..epochs {
        for e in shuffled_order(content.n_entities(), &mut rng) {
            let clean = content.row(e);
            let corrupted = corrupt(clean, corruption, &mut rng);
            let (loss, grad) = reconstruction_grad(&params, clean, &corrupted);
            if !loss.is_finite() {
                return Err(Error::Divergence(
                    "reconstruction loss is not finite; try a smaller learning rate".into(),
                ));
            }
            apply_grad(&mut params, &grad, lr);
        }
    }
    Ok(params)
}

/// One pass of supervised fine-tuning toward ±1 targets. Returns the summed
/// loss observed over the epoch's presentations.
pub fn finetune_epoch(
    params: &mut EncoderParams,
    content: &ContentMatrix,
    targets: &BinaryCodeSet,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if targets.count() != content.n_entities() {
        return Err(Error::DimensionMismatch("targets vs content rows".into()));
    }
    if targets.code_len() != params.hidden_dim {
        return Err(Error::DimensionMismatch("code length vs embedding dim".into()));
    }
    let mut total = 0.0;
    for e in shuffled_order(content.n_entities(), rng) {
        let target: Vec<f64> = targets.unpack(e).iter().map(|&v| v as f64).collect();
        let (loss, grad) = supervised_grad(params, content.row(e), &target);
        if !loss.is_finite() {
            return Err(Error::Divergence("supervised loss is not finite".into()));
        }
        total += loss;
        apply_grad(params, &grad, lr);
    }
    Ok(total)
}

/// SGD on the supervised embedding loss for a fixed number of epochs.
pub fn finetune_encoder(
    params: &EncoderParams,
    content: &ContentMatrix,
    targets: &BinaryCodeSet,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<EncoderParams> {
    let mut out = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        finetune_epoch(&mut out, content, targets, lr, &mut rng)?;
    }
    Ok(out)
}

/// Total supervised loss without updating parameters.
pub fn supervised_loss(
    params: &EncoderParams,
    content: &ContentMatrix,
    targets: &BinaryCodeSet,
) -> f64 {
    (0..content.n_entities())
        .map(|e| {
            let xi = params.hidden_tanh(content.row(e));
            xi.iter()
                .enumerate()
                .map(|(k, x)| {
                    let t = targets.get_bit(e, k) as f64;
                    (x - t) * (x - t)
                })
                .sum::<f64>()
        })
        .sum()
}
