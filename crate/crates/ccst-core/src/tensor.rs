//! Image tensors and per-channel statistics.
//!
//! An [`ImageTensor`] is a dense channels x height x width grid of f64
//! values stored row-major within each channel. Source images live in the
//! nominal [0, 1] range; stylized intermediates may leave it.

use crate::error::{Error, Result};

/// Identifier of a client (equivalently, a domain) in a federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub u16);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense channels x height x width grid of doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds a tensor, checking the length and finiteness invariants.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidTensor(format!(
                "zero dimension in {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| {
                Error::DimensionOverflow(format!("{channels}x{height}x{width}"))
            })?;
        if data.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match {channels}x{height}x{width}={expected}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite entry {bad}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Constant-valued tensor.
    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (channels, height, width) triple.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Pixels per channel.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One channel's pixels, row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    /// Applies `f` to every value, producing a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.channels, self.height, self.width, data)
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// Mean and population standard deviation of a value multiset.
///
/// Values are summed in a canonical (sorted) order so the result is
/// bit-identical under any permutation of the inputs.
pub(crate) fn multiset_mean_std(values: &[f64]) -> (f64, f64) {
    debug_assert!(!values.is_empty());
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // constant inputs must give sigma exactly 0, not summation noise
    if sorted[0] == sorted[sorted.len() - 1] {
        return (sorted[0], 0.0);
    }
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = sorted.iter().map(|&v| (v - mean) * (v - mean)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Channel-wise mean and population standard deviation (divide by N).
pub fn channel_mean_std(image: &ImageTensor) -> ChannelStats {
    let mut mu = Vec::with_capacity(image.channels());
    let mut sigma = Vec::with_capacity(image.channels());
    for c in 0..image.channels() {
        let (m, s) = multiset_mean_std(image.channel(c));
        mu.push(m);
        sigma.push(s);
    }
    ChannelStats { mu, sigma }
}

/// An image with its class label and originating domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: usize,
    pub domain: ClientId,
}

impl LabeledImage {
    pub fn new(image: ImageTensor, label: usize, num_classes: usize, domain: ClientId) -> Result<Self> {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self { image, label, domain })
    }
}
