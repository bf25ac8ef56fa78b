//! Image comparison and distribution metrics.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// PSNR ceiling reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 120.0;

/// Default histogram resolution, one bin per 8-bit grey level.
pub const DEFAULT_BINS: usize = 256;

/// Peak signal-to-noise ratio in dB for peak value 1.0, capped at
/// [`PSNR_CAP_DB`] so identical inputs stay finite.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "psnr inputs {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Grey-level histogram of a 3-channel image.
///
/// Luma is 0.299 R + 0.587 G + 0.114 B per pixel; values are clamped into
/// [0, 1) before binning so out-of-range stylized pixels land in the edge
/// bins. Returns per-bin pixel counts.
pub fn grayscale_histogram(image: &ImageTensor, bins: usize) -> Result<Vec<f64>> {
    if image.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "grayscale histogram needs 3 channels, got {}",
            image.channels()
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram bins must be >= 1".into()));
    }
    let r = image.channel(0);
    let g = image.channel(1);
    let b = image.channel(2);
    let mut counts = vec![0.0; bins];
    let top = 1.0 - 1e-12;
    for i in 0..image.pixels() {
        // integer weights over 1000 keep grey levels like 0.5 exact
        let luma = (299.0 * r[i] + 587.0 * g[i] + 114.0 * b[i]) / 1000.0;
        let clamped = luma.clamp(0.0, top);
        counts[(clamped * bins as f64) as usize] += 1.0;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_identical_hits_cap() {
        let a = ImageTensor::constant(1, 2, 2, 0.3).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_formula_value() {
        // MSE 0.01 -> 20 dB
        let a = ImageTensor::constant(1, 1, 1, 0.0).unwrap();
        let b = ImageTensor::constant(1, 1, 1, 0.1).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_symmetric() {
        let a = ImageTensor::new(1, 1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        let b = ImageTensor::new(1, 1, 3, vec![0.4, 0.2, 0.8]).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = ImageTensor::constant(1, 2, 2, 0.0).unwrap();
        let b = ImageTensor::constant(1, 2, 3, 0.0).unwrap();
        assert!(matches!(psnr(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn histogram_mid_gray_bin() {
        let img = ImageTensor::constant(3, 4, 4, 0.5).unwrap();
        let h = grayscale_histogram(&img, 256).unwrap();
        assert_eq!(h[128], 16.0);
        assert_eq!(h.iter().sum::<f64>(), 16.0);
    }

    #[test]
    fn histogram_black_in_bin_zero() {
        let img = ImageTensor::constant(3, 2, 2, 0.0).unwrap();
        let h = grayscale_histogram(&img, 256).unwrap();
        assert_eq!(h[0], 4.0);
    }

    #[test]
    fn histogram_conserves_pixels_and_clamps() {
        // one pixel above range, one below; both counted in edge bins
        let data = vec![
            1.7, -0.4, 0.2, 0.6, //
            1.7, -0.4, 0.2, 0.6, //
            1.7, -0.4, 0.2, 0.6,
        ];
        let img = ImageTensor::new(3, 2, 2, data).unwrap();
        let h = grayscale_histogram(&img, 16).unwrap();
        assert_eq!(h.iter().sum::<f64>(), 4.0);
        assert_eq!(h[15], 1.0);
        assert_eq!(h[0], 1.0);
        assert!(h.iter().all(|&c| c >= 0.0 && c.fract() == 0.0));
    }

    #[test]
    fn histogram_rejects_non_rgb() {
        let img = ImageTensor::constant(1, 2, 2, 0.5).unwrap();
        assert!(matches!(
            grayscale_histogram(&img, 256),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
