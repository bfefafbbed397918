//! Circular correlation and convolution, direct and via the DFT.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::ModelError;

/// Above this length the FFT path is used by [`circular_correlation`].
pub const FFT_THRESHOLD: usize = 32;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check(a: &[f64], b: &[f64]) -> Result<(), ModelError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ModelError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

/// `[a ⋆ b]_k = Σ_i a_i b_{(k+i) mod d}`, O(d²).
pub fn circular_correlation_direct(a: &[f64], b: &[f64]) -> Result<Vec<f64>, ModelError> {
    check(a, b)?;
    Ok(correlate_direct(a, b))
}

pub(crate) fn correlate_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d)
        .map(|k| {
            let (head, tail) = b.split_at(k);
            // b_{k+i} for i < d-k, then wrap around
            let lo: f64 = a.iter().zip(tail).map(|(x, y)| x * y).sum();
            let hi: f64 = a[d - k..].iter().zip(head).map(|(x, y)| x * y).sum();
            lo + hi
        })
        .collect()
}

/// `[a ∗ b]_k = Σ_i a_i b_{(k−i) mod d}`, O(d²).
pub(crate) fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|k| (0..d).map(|i| a[i] * b[(k + d - i) % d]).sum()).collect()
}

fn spectrum(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(&mut buf));
    buf
}

fn inverse_real(mut buf: Vec<Complex64>) -> Vec<f64> {
    let d = buf.len();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(d).process(&mut buf));
    buf.into_iter().map(|c| c.re / d as f64).collect()
}

/// Circular correlation as `F⁻¹(conj(F(a)) ⊙ F(b))`.
pub fn circular_correlation_fft(a: &[f64], b: &[f64]) -> Result<Vec<f64>, ModelError> {
    check(a, b)?;
    Ok(correlate_fft(a, b))
}

pub(crate) fn correlate_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    let fa = spectrum(a);
    let fb = spectrum(b);
    inverse_real(fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect())
}

pub(crate) fn convolve_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    let fa = spectrum(a);
    let fb = spectrum(b);
    inverse_real(fa.iter().zip(&fb).map(|(x, y)| x * y).collect())
}

/// Circular correlation, picking the direct or FFT path by length.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> Result<Vec<f64>, ModelError> {
    check(a, b)?;
    Ok(correlate(a, b))
}

pub(crate) fn correlate(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.len() > FFT_THRESHOLD {
        correlate_fft(a, b)
    } else {
        correlate_direct(a, b)
    }
}

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.len() > FFT_THRESHOLD {
        convolve_fft(a, b)
    } else {
        convolve_direct(a, b)
    }
}
