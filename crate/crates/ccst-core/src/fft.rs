//! Per-channel 2-D DFT plumbing for the amplitude-exchange backend.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

/// In-place 2-D FFT of a height x width row-major buffer.
pub(crate) fn fft_2d(buf: &mut [Complex<f64>], height: usize, width: usize, direction: FftDirection) {
    debug_assert_eq!(buf.len(), height * width);
    let mut planner = FftPlanner::new();

    let row_fft = planner.plan_fft(width, direction);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(width) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let col_fft = planner.plan_fft(height, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::default());
    let mut column = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

pub(crate) fn forward(real: &[f64], height: usize, width: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = real.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(&mut buf, height, width, FftDirection::Forward);
    buf
}

/// Inverse transform normalized by 1/(height*width); returns the real part.
pub(crate) fn inverse_real(mut buf: Vec<Complex<f64>>, height: usize, width: usize) -> Vec<f64> {
    fft_2d(&mut buf, height, width, FftDirection::Inverse);
    let scale = 1.0 / (height * width) as f64;
    buf.iter()
        .map(|c| {
            debug_assert!((c.im * scale).abs() < 1e-9, "imaginary residue {}", c.im * scale);
            c.re * scale
        })
        .collect()
}

/// Centered frequency coordinate of index `i` on an axis of length `n`.
pub(crate) fn centered_freq(i: usize, n: usize) -> i64 {
    let half = (n / 2) as i64;
    ((i as i64 + half).rem_euclid(n as i64)) - half
}
