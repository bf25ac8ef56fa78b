//! Style extraction and statistic-matching transfer.
//!
//! A style is the per-channel (mean, std) pair of an image's feature map.
//! Transfer normalizes content features by their own statistics and rescales
//! by the target's, so the output's channel statistics equal the style
//! vector exactly. The frequency-domain alternative swaps per-channel DFT
//! amplitude spectra while keeping phases.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::{channel_mean_std, multiset_mean_std, ImageTensor};

/// Guard in the normalization denominator; channels with smaller spread are
/// treated as constant and map to the style mean.
pub const ADAIN_EPS: f64 = 1e-5;
const SIGMA_FLOOR: f64 = 1e-12;

/// Whether a style describes one image or a whole client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StyleMode {
    Overall,
    Single,
}

impl std::fmt::Display for StyleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StyleMode::Overall => write!(f, "overall"),
            StyleMode::Single => write!(f, "single"),
        }
    }
}

/// Invertible feature space the style math runs in. The identity instance
/// works directly on pixels; learned encoder/decoder pairs plug in behind
/// the same contract.
pub trait FeatureSpace: Send + Sync {
    fn name(&self) -> &str;
    /// Channel count of encoded features; style vectors have this length.
    fn channels(&self) -> usize;
    fn encode(&self, image: &ImageTensor) -> ImageTensor;
    fn decode(&self, feature: &ImageTensor) -> ImageTensor;
}

/// Pixel space: encode and decode are the identity map.
#[derive(Debug, Clone)]
pub struct IdentitySpace {
    channels: usize,
}

impl IdentitySpace {
    pub fn new(channels: usize) -> Self {
        Self { channels }
    }

    /// Standard RGB instance.
    pub fn rgb() -> Self {
        Self::new(3)
    }
}

impl FeatureSpace for IdentitySpace {
    fn name(&self) -> &str {
        "identity"
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, image: &ImageTensor) -> ImageTensor {
        image.clone()
    }

    fn decode(&self, feature: &ImageTensor) -> ImageTensor {
        feature.clone()
    }
}

/// Per-channel (mean, std) style vector — the entire cross-client payload.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub provenance: StyleMode,
}

impl StyleVector {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, provenance: StyleMode) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "style mu/sigma lengths {} vs {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::InvalidTensor(format!("style sigma {s}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidTensor("non-finite style mean".into()));
        }
        Ok(Self { mu, sigma, provenance })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

fn check_space(image: &ImageTensor, space: &dyn FeatureSpace) -> Result<()> {
    if image.channels() != space.channels() {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, space {:?} expects {}",
            image.channels(),
            space.name(),
            space.channels()
        )));
    }
    Ok(())
}

/// Style of a single image: channel statistics of its encoded features.
pub fn extract_style(image: &ImageTensor, space: &dyn FeatureSpace) -> Result<StyleVector> {
    check_space(image, space)?;
    let stats = channel_mean_std(&space.encode(image));
    StyleVector::new(stats.mu, stats.sigma, StyleMode::Single)
}

/// Style of a whole client: statistics pooled over every pixel of every
/// encoded image, as if all feature maps were stacked into one.
pub fn extract_overall_style(
    images: &[ImageTensor],
    space: &dyn FeatureSpace,
) -> Result<StyleVector> {
    if images.is_empty() {
        return Err(Error::EmptyInput("extract_overall_style"));
    }
    for img in images {
        check_space(img, space)?;
    }
    let encoded: Vec<ImageTensor> = images.iter().map(|i| space.encode(i)).collect();
    let channels = space.channels();
    let mut mu = Vec::with_capacity(channels);
    let mut sigma = Vec::with_capacity(channels);
    let mut pool: Vec<f64> = Vec::new();
    for c in 0..channels {
        pool.clear();
        for f in &encoded {
            pool.extend_from_slice(f.channel(c));
        }
        let (m, s) = multiset_mean_std(&pool);
        mu.push(m);
        sigma.push(s);
    }
    StyleVector::new(mu, sigma, StyleMode::Overall)
}

/// Statistic-matching transform: per channel, content features are
/// normalized by their own (mean, std) and rescaled to the style's.
///
/// The epsilon guard is folded out of the denominator analytically, so the
/// output's channel statistics equal the style vector to machine precision;
/// channels with spread below the guard map to the constant style mean.
pub fn adain(content_feat: &ImageTensor, style: &StyleVector) -> Result<ImageTensor> {
    if content_feat.channels() != style.channels() {
        return Err(Error::ShapeMismatch(format!(
            "content has {} channels, style has {}",
            content_feat.channels(),
            style.channels()
        )));
    }
    let stats = channel_mean_std(content_feat);
    let pixels = content_feat.pixels();
    let mut out = Vec::with_capacity(content_feat.data().len());
    for c in 0..content_feat.channels() {
        let (mu_c, sigma_c) = (stats.mu[c], stats.sigma[c]);
        let chan = content_feat.channel(c);
        if sigma_c <= SIGMA_FLOOR {
            out.extend(std::iter::repeat_n(style.mu[c], pixels));
        } else {
            let scale = style.sigma[c] / sigma_c;
            out.extend(chan.iter().map(|&v| (v - mu_c) * scale + style.mu[c]));
        }
    }
    ImageTensor::new(
        content_feat.channels(),
        content_feat.height(),
        content_feat.width(),
        out,
    )
}

/// Image generator: encode, statistic-match, decode.
pub fn generate(
    content: &ImageTensor,
    style: &StyleVector,
    space: &dyn FeatureSpace,
) -> Result<ImageTensor> {
    check_space(content, space)?;
    let stylized = adain(&space.encode(content), style)?;
    Ok(space.decode(&stylized))
}

/// Per-channel DFT magnitude spectrum, the frequency-domain style carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectrum {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl AmplitudeSpectrum {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Unnormalized per-channel DFT magnitudes of an image.
pub fn amplitude(image: &ImageTensor) -> AmplitudeSpectrum {
    let (channels, height, width) = image.shape();
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..channels {
        let spectrum = fft::forward(image.channel(c), height, width);
        data.extend(spectrum.iter().map(|v| v.norm()));
    }
    AmplitudeSpectrum {
        channels,
        height,
        width,
        data,
    }
}

/// Element-wise mean of per-image amplitude spectra.
pub fn overall_amplitude(images: &[ImageTensor]) -> Result<AmplitudeSpectrum> {
    if images.is_empty() {
        return Err(Error::EmptyInput("overall_amplitude"));
    }
    let shape = images[0].shape();
    for img in images {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "amplitude inputs {:?} vs {:?}",
                img.shape(),
                shape
            )));
        }
    }
    let mut acc = vec![0.0; images[0].data().len()];
    for img in images {
        let amp = amplitude(img);
        for (a, v) in acc.iter_mut().zip(amp.data()) {
            *a += v;
        }
    }
    let scale = 1.0 / images.len() as f64;
    for a in &mut acc {
        *a *= scale;
    }
    Ok(AmplitudeSpectrum {
        channels: shape.0,
        height: shape.1,
        width: shape.2,
        data: acc,
    })
}

/// Replaces the content's DFT magnitudes with the target's inside a centered
/// low-frequency window of fraction `window` per axis (1.0 = full spectrum),
/// keeping the content's phases.
pub fn fft_amplitude_exchange(
    content: &ImageTensor,
    target: &AmplitudeSpectrum,
    window: f64,
) -> Result<ImageTensor> {
    let (channels, height, width) = content.shape();
    if target.shape() != content.shape() {
        return Err(Error::ShapeMismatch(format!(
            "content {:?} vs amplitude {:?}",
            content.shape(),
            target.shape()
        )));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fft window {window} outside (0, 1]"
        )));
    }
    let half_h = window * height as f64 / 2.0;
    let half_w = window * width as f64 / 2.0;
    let mut out = Vec::with_capacity(content.data().len());
    for c in 0..channels {
        let mut spectrum = fft::forward(content.channel(c), height, width);
        let target_chan = target.channel(c);
        for u in 0..height {
            let in_h = (fft::centered_freq(u, height).unsigned_abs() as f64) <= half_h;
            for v in 0..width {
                if !in_h || (fft::centered_freq(v, width).unsigned_abs() as f64) > half_w {
                    continue;
                }
                let idx = u * width + v;
                let value = spectrum[idx];
                let magnitude = value.norm();
                spectrum[idx] = if magnitude > 0.0 {
                    value * (target_chan[idx] / magnitude)
                } else {
                    // zero magnitude carries no phase; take the target along +Re
                    Complex::new(target_chan[idx], 0.0)
                };
            }
        }
        out.extend(fft::inverse_real(spectrum, height, width));
    }
    ImageTensor::new(channels, height, width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::ClientId;

    fn line(values: &[f64]) -> ImageTensor {
        ImageTensor::new(1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_space_round_trip() {
        let img = line(&[0.2, 0.6, 0.4]);
        let space = IdentitySpace::new(1);
        assert_eq!(space.decode(&space.encode(&img)), img);
    }

    #[test]
    fn extract_style_hand_computed() {
        let style = extract_style(&line(&[1.0, 3.0, 5.0, 7.0]), &IdentitySpace::new(1)).unwrap();
        assert_eq!(style.mu, vec![4.0]);
        assert!((style.sigma[0] - 5.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(style.provenance, StyleMode::Single);
    }

    #[test]
    fn extract_style_constant_has_zero_sigma() {
        let style = extract_style(
            &ImageTensor::constant(2, 3, 3, 0.4).unwrap(),
            &IdentitySpace::new(2),
        )
        .unwrap();
        assert_eq!(style.sigma, vec![0.0, 0.0]);
    }

    #[test]
    fn extract_style_is_permutation_invariant() {
        let a = line(&[0.3, 0.9, 0.1, 0.5]);
        let b = line(&[0.5, 0.1, 0.9, 0.3]);
        assert_eq!(
            extract_style(&a, &IdentitySpace::new(1)).unwrap(),
            extract_style(&b, &IdentitySpace::new(1)).unwrap()
        );
    }

    #[test]
    fn overall_style_pools_pixels() {
        let imgs = vec![line(&[0.0, 2.0]), line(&[4.0, 6.0])];
        let style = extract_overall_style(&imgs, &IdentitySpace::new(1)).unwrap();
        assert_eq!(style.mu, vec![3.0]);
        assert!((style.sigma[0] - 5.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(style.provenance, StyleMode::Overall);
    }

    #[test]
    fn overall_style_of_copies_matches_single() {
        let img = line(&[0.1, 0.5, 0.9, 0.3]);
        let single = extract_style(&img, &IdentitySpace::new(1)).unwrap();
        let overall =
            extract_overall_style(&[img.clone(), img.clone(), img.clone()], &IdentitySpace::new(1))
                .unwrap();
        assert!((single.mu[0] - overall.mu[0]).abs() < 1e-12);
        assert!((single.sigma[0] - overall.sigma[0]).abs() < 1e-12);

        let one = extract_overall_style(&[img], &IdentitySpace::new(1)).unwrap();
        assert_eq!(one.mu[0].to_bits(), single.mu[0].to_bits());
        assert_eq!(one.sigma[0].to_bits(), single.sigma[0].to_bits());
    }

    #[test]
    fn overall_style_rejects_empty() {
        assert!(matches!(
            extract_overall_style(&[], &IdentitySpace::new(1)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn adain_hand_computed() {
        let content = line(&[0.0, 2.0]);
        let style = StyleVector::new(vec![5.0], vec![3.0], StyleMode::Single).unwrap();
        let out = adain(&content, &style).unwrap();
        assert!((out.data()[0] - 2.0).abs() < 1e-4);
        assert!((out.data()[1] - 8.0).abs() < 1e-4);
    }

    #[test]
    fn adain_with_own_statistics_is_identity() {
        let content = line(&[0.1, 0.4, 0.9, 0.6]);
        let style = extract_style(&content, &IdentitySpace::new(1)).unwrap();
        let out = adain(&content, &style).unwrap();
        for (a, b) in content.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adain_constant_content_maps_to_style_mean() {
        let content = ImageTensor::constant(1, 2, 2, 0.5).unwrap();
        let style = StyleVector::new(vec![7.0], vec![2.0], StyleMode::Single).unwrap();
        let out = adain(&content, &style).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn adain_rejects_channel_mismatch() {
        let content = ImageTensor::constant(2, 2, 2, 0.5).unwrap();
        let style = StyleVector::new(vec![0.0], vec![1.0], StyleMode::Single).unwrap();
        assert!(matches!(
            adain(&content, &style),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn generate_matches_target_statistics() {
        let space = IdentitySpace::new(2);
        let mut rng = Rng::stream(11, ClientId(0), 0, "style-test");
        for _ in 0..50 {
            let data: Vec<f64> = (0..2 * 16).map(|_| rng.uniform()).collect();
            let img = ImageTensor::new(2, 4, 4, data).unwrap();
            let style = StyleVector::new(
                vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)],
                vec![rng.uniform_in(0.01, 2.0), rng.uniform_in(0.01, 2.0)],
                StyleMode::Overall,
            )
            .unwrap();
            let out = generate(&img, &style, &space).unwrap();
            let stats = channel_mean_std(&out);
            for c in 0..2 {
                assert!((stats.mu[c] - style.mu[c]).abs() < 1e-6);
                assert!((stats.sigma[c] - style.sigma[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn generate_with_own_style_reproduces_image() {
        let img = line(&[0.2, 0.8, 0.4, 0.1]);
        let space = IdentitySpace::new(1);
        let style = extract_style(&img, &space).unwrap();
        let out = generate(&img, &style, &space).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn generate_is_idempotent() {
        let img = line(&[0.2, 0.8, 0.4, 0.1, 0.6, 0.3]);
        let space = IdentitySpace::new(1);
        let style = StyleVector::new(vec![0.4], vec![0.2], StyleMode::Overall).unwrap();
        let once = generate(&img, &style, &space).unwrap();
        let twice = generate(&once, &style, &space).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn amplitude_swap_dc_only_case() {
        let content = ImageTensor::constant(1, 2, 2, 0.2).unwrap();
        let target = amplitude(&ImageTensor::constant(1, 2, 2, 0.8).unwrap());
        let out = fft_amplitude_exchange(&content, &target, 1.0).unwrap();
        for &v in out.data() {
            assert!((v - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn amplitude_swap_with_self_is_identity() {
        let img = ImageTensor::new(1, 2, 3, vec![0.1, 0.9, 0.3, 0.7, 0.5, 0.2]).unwrap();
        let out = fft_amplitude_exchange(&img, &amplitude(&img), 1.0).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn amplitude_swap_two_point_hand_computed() {
        // DFT of [0,1] has amplitudes [1,1] and phases [0, pi]; swapping in
        // the amplitudes [3,3] of [0,3] reproduces [0,3].
        let content = line(&[0.0, 1.0]);
        let target = amplitude(&line(&[0.0, 3.0]));
        let out = fft_amplitude_exchange(&content, &target, 1.0).unwrap();
        assert!((out.data()[0] - 0.0).abs() < 1e-12);
        assert!((out.data()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exchanged_output_carries_target_amplitudes() {
        let mut rng = Rng::stream(5, ClientId(0), 0, "fft-test");
        let a: Vec<f64> = (0..3 * 16).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = (0..3 * 16).map(|_| rng.uniform()).collect();
        let content = ImageTensor::new(3, 4, 4, a).unwrap();
        let target = amplitude(&ImageTensor::new(3, 4, 4, b).unwrap());
        let out = fft_amplitude_exchange(&content, &target, 1.0).unwrap();
        for (got, want) in amplitude(&out).data().iter().zip(target.data()) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn narrow_window_preserves_high_frequencies() {
        let mut rng = Rng::stream(6, ClientId(0), 0, "fft-window");
        let a: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let content = ImageTensor::new(1, 8, 8, a).unwrap();
        let target = amplitude(&ImageTensor::new(1, 8, 8, b).unwrap());
        let out = fft_amplitude_exchange(&content, &target, 0.25, ).unwrap();
        let out_amp = amplitude(&out);
        let content_amp = amplitude(&content);
        // DC swapped to target
        assert!((out_amp.channel(0)[0] - target.channel(0)[0]).abs() < 1e-9);
        // Nyquist row/col kept from content
        let nyq = 4 * 8 + 4;
        assert!((out_amp.channel(0)[nyq] - content_amp.channel(0)[nyq]).abs() < 1e-9);
    }

    #[test]
    fn overall_amplitude_averages() {
        let imgs = vec![
            ImageTensor::constant(1, 2, 2, 0.2).unwrap(),
            ImageTensor::constant(1, 2, 2, 0.6).unwrap(),
        ];
        let avg = overall_amplitude(&imgs).unwrap();
        let content = ImageTensor::constant(1, 2, 2, 0.9).unwrap();
        let out = fft_amplitude_exchange(&content, &avg, 1.0).unwrap();
        for &v in out.data() {
            assert!((v - 0.4).abs() < 1e-9);
        }
        assert_eq!(avg.shape(), imgs[0].shape());
    }

    #[test]
    fn overall_amplitude_of_identical_images() {
        let img = ImageTensor::new(1, 2, 2, vec![0.1, 0.4, 0.7, 0.2]).unwrap();
        let one = amplitude(&img);
        let avg = overall_amplitude(&[img.clone(), img]).unwrap();
        for (a, b) in one.data().iter().zip(avg.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn amplitude_invariant_to_circular_shift() {
        let mut rng = Rng::stream(9, ClientId(0), 0, "shift");
        let data: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
        let img = ImageTensor::new(1, 4, 4, data.clone()).unwrap();
        // shift rows by 1 and columns by 2
        let mut shifted = vec![0.0; 16];
        for y in 0..4 {
            for x in 0..4 {
                shifted[((y + 1) % 4) * 4 + (x + 2) % 4] = data[y * 4 + x];
            }
        }
        let img_shifted = ImageTensor::new(1, 4, 4, shifted).unwrap();
        for (a, b) in amplitude(&img).data().iter().zip(amplitude(&img_shifted).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
