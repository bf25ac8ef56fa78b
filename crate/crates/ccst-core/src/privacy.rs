//! What do shared style vectors reveal about the images behind them?
//!
//! The attacker here is the strongest one consistent with the threat model:
//! it sees a style vector and the image shape, nothing else, and runs
//! gradient descent on pixels to minimize the squared distance between its
//! reconstruction's style and the target. Style statistics are
//! order-free, so any pixel permutation of an image is an equally valid
//! preimage; the witness operation exhibits that non-injectivity directly.

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::rng::Rng;
use crate::style::{extract_style, FeatureSpace, StyleVector};
use crate::tensor::{channel_mean_std, ImageTensor};

/// Pixel-space gradient step; the per-pixel gradient is scaled by the
/// channel pixel count, which contracts the statistic error by 0.8 per
/// iteration and keeps the update stable.
const ATTACK_STEP: f64 = 0.1;

/// Default iteration budget.
pub const DEFAULT_ATTACK_ITERATIONS: usize = 2000;

/// Reconstruction produced by [`invert_style`]. The interface guarantees
/// the attacker never touched a source image: only the style and shape go
/// in.
#[derive(Debug, Clone)]
pub struct StyleInversion {
    pub image: ImageTensor,
    /// Final squared style-match residual sum over channels.
    pub residual: f64,
    pub iterations: usize,
}

/// Evaluation of a reconstruction against ground truth the attacker never
/// saw, with the dataset mean image as the baseline predictor.
#[derive(Debug, Clone)]
pub struct AttackReport {
    pub iterations: usize,
    pub residual: f64,
    /// PSNR of the reconstruction against each ground-truth candidate.
    pub candidate_psnr: Vec<f64>,
    pub best_psnr: f64,
    /// Best PSNR the mean-image predictor achieves on the same candidates.
    pub baseline_psnr: f64,
}

fn style_residual(image: &ImageTensor, target: &StyleVector, space: &dyn FeatureSpace) -> Result<f64> {
    let style = extract_style(image, space)?;
    Ok(style
        .mu
        .iter()
        .zip(&style.sigma)
        .zip(target.mu.iter().zip(&target.sigma))
        .map(|((m, s), (tm, ts))| (m - tm) * (m - tm) + (s - ts) * (s - ts))
        .sum())
}

/// Gradient-descent reconstruction of an image from a style vector alone.
///
/// Starts from uniform noise and descends the squared style residual in
/// pixel space. The objective depends on pixels only through the channel
/// mean and spread, so descent converges to the target statistics while the
/// spatial arrangement keeps whatever the random start had.
pub fn invert_style(
    target: &StyleVector,
    shape: (usize, usize, usize),
    space: &dyn FeatureSpace,
    iterations: usize,
    rng: &mut Rng,
) -> Result<StyleInversion> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("attack needs iterations >= 1".into()));
    }
    let (channels, height, width) = shape;
    if channels != target.channels() {
        return Err(Error::ShapeMismatch(format!(
            "shape has {channels} channels, style has {}",
            target.channels()
        )));
    }
    let mut data: Vec<f64> = (0..channels * height * width)
        .map(|_| rng.uniform())
        .collect();
    let pixels = height * width;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut ran = 0usize;
    for _ in 0..iterations {
        ran += 1;
        // gradient of sum_c (mu_c - t_mu)^2 + (sigma_c - t_sigma)^2 wrt each
        // pixel, scaled by the pixel count: the mean moves by
        // -2*step*(mu - t_mu) and the spread by -2*step*(sigma - t_sigma)
        let current = ImageTensor::new(channels, height, width, data.clone())?;
        let stats = channel_mean_std(&space.encode(&current));
        for c in 0..channels {
            let (mu, sigma) = (stats.mu[c], stats.sigma[c]);
            let dmu = 2.0 * ATTACK_STEP * (mu - target.mu[c]);
            let dsigma = if sigma > 1e-12 {
                2.0 * ATTACK_STEP * (sigma - target.sigma[c]) / sigma
            } else {
                0.0
            };
            for v in &mut data[c * pixels..(c + 1) * pixels] {
                *v -= dmu + dsigma * (*v - mu);
            }
        }
        let candidate = ImageTensor::new(channels, height, width, data.clone())?;
        let residual = style_residual(&candidate, target, space)?;
        if best.as_ref().is_none_or(|(b, _)| residual < *b) {
            best = Some((residual, data.clone()));
        }
        if residual == 0.0 {
            break;
        }
    }
    let (residual, best_data) = best.expect("at least one iteration ran");
    Ok(StyleInversion {
        image: ImageTensor::new(channels, height, width, best_data)?,
        residual,
        iterations: ran,
    })
}

/// Pixel-wise mean of a candidate set, the baseline "reconstruction" that
/// needs no leaked information beyond the dataset itself.
pub fn mean_image(candidates: &[ImageTensor]) -> Result<ImageTensor> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("mean_image"));
    }
    let shape = candidates[0].shape();
    let mut acc = vec![0.0; candidates[0].data().len()];
    for img in candidates {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch("mean_image candidate shapes".into()));
        }
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let inv = 1.0 / candidates.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    ImageTensor::new(shape.0, shape.1, shape.2, acc)
}

/// Scores a reconstruction against ground-truth candidates and the
/// mean-image baseline.
pub fn attack_report(
    inversion: &StyleInversion,
    candidates: &[ImageTensor],
) -> Result<AttackReport> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("attack_report candidates"));
    }
    let candidate_psnr: Vec<f64> = candidates
        .iter()
        .map(|c| psnr(&inversion.image, c))
        .collect::<Result<_>>()?;
    let best_psnr = candidate_psnr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let baseline = mean_image(candidates)?;
    let baseline_psnr = candidates
        .iter()
        .map(|c| psnr(&baseline, c))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AttackReport {
        iterations: inversion.iterations,
        residual: inversion.residual,
        candidate_psnr,
        best_psnr,
        baseline_psnr,
    })
}

/// Exhibits two distinct images with bit-identical style vectors by
/// shuffling pixels within each channel. Errors on constant images, where
/// no distinct preimage exists.
pub fn non_injectivity_witness(
    image: &ImageTensor,
    rng: &mut Rng,
) -> Result<(ImageTensor, ImageTensor)> {
    let (channels, height, width) = image.shape();
    let pixels = height * width;
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..channels {
        let mut chan = image.channel(c).to_vec();
        rng.shuffle(&mut chan);
        data.extend(chan);
    }
    if data == image.data() {
        // shuffle happened to preserve the arrangement; transpose the first
        // unequal pair instead
        let mut swapped = false;
        for c in 0..channels {
            let chan = &mut data[c * pixels..(c + 1) * pixels];
            if let Some(j) = chan.iter().position(|&v| v != chan[0]) {
                chan.swap(0, j);
                swapped = true;
                break;
            }
        }
        if !swapped {
            return Err(Error::InvalidConfig(
                "constant image has no distinct style-preserving permutation".into(),
            ));
        }
    }
    let permuted = ImageTensor::new(channels, height, width, data)?;
    Ok((image.clone(), permuted))
}
