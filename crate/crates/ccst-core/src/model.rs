//! From-scratch classifier: flatten -> dense -> ReLU -> dense -> softmax,
//! trained with mini-batch SGD on mean cross-entropy.
//!
//! Parameters live in one flat vector (the unit federated averaging works
//! on), laid out as [w1 (hidden x input), b1, w2 (classes x hidden), b2].

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::crc32;
use crate::rng::Rng;
use crate::tensor::{ClientId, ImageTensor, LabeledImage};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CCTP";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Layer widths of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Arch {
    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim
            + self.hidden_dim
            + self.num_classes * self.hidden_dim
            + self.num_classes
    }
}

/// Flat parameter vector plus its architecture descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for architecture needing {}",
                values.len(),
                arch.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("non-finite parameter".into()));
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
            arch,
        }
    }

    /// Glorot-uniform initialization, deterministic in the rng stream.
    pub fn init(arch: Arch, rng: &mut Rng) -> Self {
        let mut values = vec![0.0; arch.param_count()];
        let bound1 = (6.0 / (arch.input_dim + arch.hidden_dim) as f64).sqrt();
        let bound2 = (6.0 / (arch.hidden_dim + arch.num_classes) as f64).sqrt();
        let w1_len = arch.hidden_dim * arch.input_dim;
        let b1_end = w1_len + arch.hidden_dim;
        let w2_end = b1_end + arch.num_classes * arch.hidden_dim;
        for v in &mut values[..w1_len] {
            *v = rng.uniform_in(-bound1, bound1);
        }
        for v in &mut values[b1_end..w2_end] {
            *v = rng.uniform_in(-bound2, bound2);
        }
        Self { arch, values }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn w1(&self) -> &[f64] {
        &self.values[..self.arch.hidden_dim * self.arch.input_dim]
    }

    fn b1(&self) -> &[f64] {
        let start = self.arch.hidden_dim * self.arch.input_dim;
        &self.values[start..start + self.arch.hidden_dim]
    }

    fn w2(&self) -> &[f64] {
        let start = self.arch.hidden_dim * self.arch.input_dim + self.arch.hidden_dim;
        &self.values[start..start + self.arch.num_classes * self.arch.hidden_dim]
    }

    fn b2(&self) -> &[f64] {
        &self.values[self.arch.param_count() - self.arch.num_classes..]
    }
}

/// SGD settings for local training.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            local_epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("local epochs must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_input(params: &ModelParams, image: &ImageTensor) -> Result<()> {
    if image.data().len() != params.arch.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, architecture expects {}",
            image.data().len(),
            params.arch.input_dim
        )));
    }
    Ok(())
}

/// Hidden activations and probabilities for one flattened input.
fn forward_one(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let arch = params.arch;
    let (w1, b1, w2, b2) = (params.w1(), params.b1(), params.w2(), params.b2());
    let mut hidden = vec![0.0; arch.hidden_dim];
    for j in 0..arch.hidden_dim {
        let row = &w1[j * arch.input_dim..(j + 1) * arch.input_dim];
        let mut acc = b1[j];
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        hidden[j] = acc.max(0.0);
    }
    let mut logits = vec![0.0; arch.num_classes];
    for k in 0..arch.num_classes {
        let row = &w2[k * arch.hidden_dim..(k + 1) * arch.hidden_dim];
        let mut acc = b2[k];
        for (w, h) in row.iter().zip(&hidden) {
            acc += w * h;
        }
        logits[k] = acc;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in &mut logits {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in &mut logits {
        *l /= sum;
    }
    (hidden, logits)
}

/// Class probabilities for a batch; each row is a probability simplex.
pub fn forward(params: &ModelParams, batch: &[&ImageTensor]) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|img| {
            check_input(params, img)?;
            Ok(forward_one(params, img.data()).1)
        })
        .collect()
}

/// Mean cross-entropy over the batch and its gradient with respect to every
/// parameter, backpropagated analytically.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[&ImageTensor],
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss_and_grad batch"));
    }
    if batch.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images vs {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let arch = params.arch;
    for &label in labels {
        if label >= arch.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: arch.num_classes,
            });
        }
    }
    let mut grad = vec![0.0; arch.param_count()];
    let w1_len = arch.hidden_dim * arch.input_dim;
    let b1_end = w1_len + arch.hidden_dim;
    let w2_end = b1_end + arch.num_classes * arch.hidden_dim;
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let w2 = params.w2().to_vec();

    for (img, &label) in batch.iter().zip(labels) {
        check_input(params, img)?;
        let x = img.data();
        let (hidden, probs) = forward_one(params, x);
        loss -= (probs[label].max(f64::MIN_POSITIVE)).ln() * inv_batch;

        // d(loss)/d(logit_k) = (p_k - 1[k == label]) / batch
        let mut dlogits = probs;
        dlogits[label] -= 1.0;
        for d in &mut dlogits {
            *d *= inv_batch;
        }

        let (gw1, rest) = grad.split_at_mut(w1_len);
        let (gb1, rest) = rest.split_at_mut(arch.hidden_dim);
        let (gw2, gb2) = rest.split_at_mut(w2_end - b1_end);

        let mut dhidden = vec![0.0; arch.hidden_dim];
        for k in 0..arch.num_classes {
            let dk = dlogits[k];
            gb2[k] += dk;
            let row = &w2[k * arch.hidden_dim..(k + 1) * arch.hidden_dim];
            let grow = &mut gw2[k * arch.hidden_dim..(k + 1) * arch.hidden_dim];
            for j in 0..arch.hidden_dim {
                grow[j] += dk * hidden[j];
                dhidden[j] += dk * row[j];
            }
        }
        for j in 0..arch.hidden_dim {
            if hidden[j] > 0.0 {
                let dj = dhidden[j];
                gb1[j] += dj;
                let grow = &mut gw1[j * arch.input_dim..(j + 1) * arch.input_dim];
                for (g, v) in grow.iter_mut().zip(x) {
                    *g += dj * v;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Shuffled mini-batch SGD for `cfg.local_epochs` epochs. Returns the new
/// parameters and the mean mini-batch loss observed during the run.
pub fn sgd_epochs(
    params: &ModelParams,
    dataset: &[LabeledImage],
    cfg: &TrainConfig,
) -> Result<(ModelParams, f64)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("sgd_epochs dataset"));
    }
    cfg.validate()?;
    let mut current = params.clone();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.local_epochs {
        let mut rng = Rng::stream(cfg.seed, ClientId(0), epoch as u64, "shuffle");
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ImageTensor> = chunk.iter().map(|&i| &dataset[i].image).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset[i].label).collect();
            let (loss, grad) = loss_and_grad(&current, &batch, &labels)?;
            for (p, g) in current.values.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            loss_sum += loss;
            steps += 1;
        }
    }
    Ok((current, loss_sum / steps as f64))
}

/// Fraction of argmax-correct predictions; ties break toward the lowest
/// class index.
pub fn evaluate(params: &ModelParams, dataset: &[LabeledImage]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluate dataset"));
    }
    let mut correct = 0usize;
    for item in dataset {
        check_input(params, &item.image)?;
        let (_, probs) = forward_one(params, item.image.data());
        let mut best = 0usize;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        if best == item.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Per-channel affine input normalization fitted on a training set and
/// applied identically at train and eval time.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

const STANDARDIZER_SIGMA_FLOOR: f64 = 1e-6;

impl Standardizer {
    /// Fits per-channel statistics over every pixel of every image.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Self> {
        let tensors: Vec<ImageTensor> = images.into_iter().map(|i| i.image.clone()).collect();
        if tensors.is_empty() {
            return Err(Error::EmptyInput("standardizer fit"));
        }
        let style = crate::style::extract_overall_style(
            &tensors,
            &crate::style::IdentitySpace::new(tensors[0].channels()),
        )?;
        Ok(Self {
            mu: style.mu,
            sigma: style.sigma,
        })
    }

    /// Mean of several clients' standardizers, the only input statistics a
    /// server may legitimately apply to unseen-domain data.
    pub fn mean_of(parts: &[Standardizer]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("standardizer mean"));
        }
        let channels = parts[0].mu.len();
        let mut mu = vec![0.0; channels];
        let mut sigma = vec![0.0; channels];
        for p in parts {
            if p.mu.len() != channels {
                return Err(Error::ShapeMismatch("standardizer channel counts".into()));
            }
            for c in 0..channels {
                mu[c] += p.mu[c];
                sigma[c] += p.sigma[c];
            }
        }
        let inv = 1.0 / parts.len() as f64;
        for c in 0..channels {
            mu[c] *= inv;
            sigma[c] *= inv;
        }
        Ok(Self { mu, sigma })
    }

    pub fn apply(&self, item: &LabeledImage) -> Result<LabeledImage> {
        let img = &item.image;
        if img.channels() != self.mu.len() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer has {} channels, image {}",
                self.mu.len(),
                img.channels()
            )));
        }
        let mut data = Vec::with_capacity(img.data().len());
        for c in 0..img.channels() {
            let denom = self.sigma[c].max(STANDARDIZER_SIGMA_FLOOR);
            data.extend(img.channel(c).iter().map(|&v| (v - self.mu[c]) / denom));
        }
        Ok(LabeledImage {
            image: ImageTensor::new(img.channels(), img.height(), img.width(), data)?,
            label: item.label,
            domain: item.domain,
        })
    }

    pub fn apply_all(&self, items: &[LabeledImage]) -> Result<Vec<LabeledImage>> {
        items.iter().map(|i| self.apply(i)).collect()
    }
}

/// Writes a parameter checkpoint: magic "CCTP", u8 version, u32 input, u32
/// hidden, u32 classes, f64 parameter payload, trailing CRC32.
pub fn params_to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let arch = params.arch;
    if arch.input_dim > u32::MAX as usize
        || arch.hidden_dim > u32::MAX as usize
        || arch.num_classes > u32::MAX as usize
    {
        return Err(Error::DimensionOverflow("architecture exceeds u32".into()));
    }
    let mut out = Vec::with_capacity(17 + params.values.len() * 8 + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.hidden_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.num_classes as u32).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = crc32(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    const HEADER: usize = 4 + 1 + 12;
    if bytes.len() < HEADER + 4 {
        return Err(Error::Truncated(format!(
            "checkpoint needs {} bytes, got {}",
            HEADER + 4,
            bytes.len()
        )));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if body[4] != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            got: body[4],
            expected: CHECKPOINT_VERSION,
        });
    }
    let dim = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
    let arch = Arch {
        input_dim: dim(5),
        hidden_dim: dim(9),
        num_classes: dim(13),
    };
    let expected = arch
        .param_count()
        .checked_mul(8)
        .ok_or_else(|| Error::DimensionOverflow("parameter payload".into()))?;
    let payload = &body[HEADER..];
    if payload.len() != expected {
        return Err(Error::Truncated(format!(
            "checkpoint payload {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::new(arch, values)
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, params_to_bytes(params)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    params_from_bytes(&fs::read(path)?)
}
