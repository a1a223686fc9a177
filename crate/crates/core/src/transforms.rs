//! Fourier transform, starlet (isotropic undecimated à trous) wavelet transform
//! and robust noise estimation.
//!
//! DFT convention, used everywhere in the crate: the forward transform is
//! unnormalized, `X[k] = Σ_n x[n] e^{-2πi kn/N}`, and the inverse carries the
//! `1/N` factor. With this convention Parseval reads `Σ|x|² = (1/N) Σ|X|²`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{DbssError, Result};

/// Planned forward/inverse DFT pair for a fixed length.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "DFT length must be positive");
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    /// Inverse transform in place, including the `1/N` factor.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, signal: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn forward(&self, signal: &[Complex64]) -> Vec<Complex64> {
        let mut buf = signal.to_vec();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<Complex64> {
        let mut buf = spectrum.to_vec();
        self.inverse_in_place(&mut buf);
        buf
    }

    /// Real part of the inverse transform.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        self.inverse(spectrum).into_iter().map(|c| c.re).collect()
    }
}

/// Forward DFT of a real signal (unnormalized).
pub fn dft_forward(signal: &[f64]) -> Vec<Complex64> {
    Dft::new(signal.len()).forward_real(signal)
}

/// Inverse DFT (carries `1/N`).
pub fn dft_inverse(spectrum: &[Complex64]) -> Vec<Complex64> {
    Dft::new(spectrum.len()).inverse(spectrum)
}

/// B3-spline smoothing kernel of the starlet transform.
pub const B3_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Frequency response `1 - Π_j B3_j(k)` of the detail part of a `n_scales`
/// starlet on `n_samples` periodic samples: what remains once the coarse
/// approximation is removed.
pub fn starlet_highpass_response(n_samples: usize, n_scales: usize) -> Vec<f64> {
    (0..n_samples)
        .map(|k| {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / n_samples as f64;
            let lowpass: f64 = (0..n_scales)
                .map(|j| {
                    let t = omega * (1u64 << j) as f64;
                    (6.0 + 8.0 * t.cos() + 2.0 * (2.0 * t).cos()) / 16.0
                })
                .product();
            1.0 - lowpass
        })
        .collect()
}

/// Frequency responses of the `n_scales` detail filters of the starlet on
/// `n_samples` periodic samples, finest first. They sum to
/// [`starlet_highpass_response`].
pub fn starlet_scale_responses(n_samples: usize, n_scales: usize) -> Vec<Vec<f64>> {
    let mut lowpass = vec![1.0; n_samples];
    (0..n_scales)
        .map(|j| {
            (0..n_samples)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / n_samples as f64
                        * (1u64 << j) as f64;
                    let next = lowpass[k] * (6.0 + 8.0 * t.cos() + 2.0 * (2.0 * t).cos()) / 16.0;
                    let detail = lowpass[k] - next;
                    lowpass[k] = next;
                    detail
                })
                .collect()
        })
        .collect()
}

/// Starlet coefficients of a 1-D signal: `J` detail scales (fine to coarse)
/// and the final smooth approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub detail_scales: Vec<Vec<f64>>,
    pub coarse: Vec<f64>,
}

impl WaveletCoeffs {
    pub fn zeros(n_scales: usize, n_samples: usize) -> Self {
        Self {
            detail_scales: vec![vec![0.0; n_samples]; n_scales],
            coarse: vec![0.0; n_samples],
        }
    }

    pub fn n_scales(&self) -> usize {
        self.detail_scales.len()
    }

    pub fn n_samples(&self) -> usize {
        self.coarse.len()
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.coarse.len();
        if let Some((j, d)) = self
            .detail_scales
            .iter()
            .enumerate()
            .find(|(_, d)| d.len() != n)
        {
            return Err(DbssError::DimensionMismatch(format!(
                "detail scale {j} has length {} but coarse has {n}",
                d.len()
            )));
        }
        Ok(())
    }

    /// Iterator over every detail coefficient, all scales.
    pub fn details(&self) -> impl Iterator<Item = &f64> {
        self.detail_scales.iter().flatten()
    }
}

/// Index into a half-sample symmetric extension (`x[-1] = x[0]`) of a signal of
/// length `n`. This extension keeps every smoothing operator symmetric, so the
/// analysis adjoint reuses the same filters.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

/// One à trous smoothing pass with hole spacing `step`.
fn atrous_smooth(input: &[f64], step: usize, out: &mut [f64]) {
    let n = input.len();
    let reach = 2 * step;
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i >= reach && i + reach < n {
            B3_KERNEL[0] * input[i - reach]
                + B3_KERNEL[1] * input[i - step]
                + B3_KERNEL[2] * input[i]
                + B3_KERNEL[3] * input[i + step]
                + B3_KERNEL[4] * input[i + reach]
        } else {
            let mut acc = 0.0;
            for (t, h) in B3_KERNEL.iter().enumerate() {
                let offset = (t as isize - 2) * step as isize;
                acc += h * input[reflect(i as isize + offset, n)];
            }
            acc
        };
    }
}

fn check_depth(n_samples: usize, n_scales: usize) -> Result<()> {
    if n_scales == 0 {
        return Err(DbssError::InvalidConfig(
            "starlet needs at least one scale".into(),
        ));
    }
    if n_samples == 0 {
        return Err(DbssError::EmptyInput("starlet signal"));
    }
    if n_scales >= usize::BITS as usize || (1usize << n_scales) > n_samples {
        return Err(DbssError::ScaleTooDeep {
            n_scales,
            n_samples,
        });
    }
    Ok(())
}

/// Starlet analysis: `detail[j] = smooth_j - smooth_{j+1}`, coarse = last smooth.
pub fn starlet_decompose(signal: &[f64], n_scales: usize) -> Result<WaveletCoeffs> {
    check_depth(signal.len(), n_scales)?;
    let n = signal.len();
    let mut current = signal.to_vec();
    let mut next = vec![0.0; n];
    let mut detail_scales = Vec::with_capacity(n_scales);
    for j in 0..n_scales {
        atrous_smooth(&current, 1 << j, &mut next);
        detail_scales.push(current.iter().zip(&next).map(|(c, s)| c - s).collect());
        std::mem::swap(&mut current, &mut next);
    }
    Ok(WaveletCoeffs {
        detail_scales,
        coarse: current,
    })
}

/// Additive starlet synthesis: coarse plus the sum of all detail scales.
pub fn starlet_reconstruct(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    coeffs.check_lengths()?;
    let mut out = coeffs.coarse.clone();
    for d in &coeffs.detail_scales {
        for (o, v) in out.iter_mut().zip(d) {
            *o += v;
        }
    }
    Ok(out)
}

/// Adjoint of the starlet analysis operator, `Φ α` in the primal-dual sense:
/// `<starlet_decompose(x), α> = <x, starlet_adjoint(α)>`.
///
/// Unlike [`starlet_reconstruct`] this is not a left inverse of the analysis;
/// it is the transpose the proximal refinement needs.
pub fn starlet_adjoint(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    coeffs.check_lengths()?;
    let n_scales = coeffs.n_scales();
    let n = coeffs.n_samples();
    if n_scales == 0 {
        return Ok(coeffs.coarse.clone());
    }
    check_depth(n, n_scales)?;
    // Reverse-mode sweep through c_{j+1} = M_j c_j, d_j = c_j - c_{j+1}.
    let mut grad: Vec<f64> = coeffs
        .coarse
        .iter()
        .zip(&coeffs.detail_scales[n_scales - 1])
        .map(|(c, d)| c - d)
        .collect();
    let mut smoothed = vec![0.0; n];
    for j in (0..n_scales).rev() {
        atrous_smooth(&grad, 1 << j, &mut smoothed);
        for i in 0..n {
            let upper = if j > 0 {
                coeffs.detail_scales[j - 1][i]
            } else {
                0.0
            };
            grad[i] = smoothed[i] + coeffs.detail_scales[j][i] - upper;
        }
    }
    Ok(grad)
}

/// Thresholding rule for wavelet coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Hard,
    Soft,
}

impl ThresholdMode {
    /// Keeps (hard) or shrinks (soft) coefficients with `|x| >= lambda`.
    #[inline]
    pub fn apply(self, x: f64, lambda: f64) -> f64 {
        match self {
            ThresholdMode::Hard => {
                if x.abs() >= lambda {
                    x
                } else {
                    0.0
                }
            }
            ThresholdMode::Soft => {
                let mag = x.abs() - lambda;
                if mag > 0.0 {
                    mag.copysign(x)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Median with the mean-of-central-pair rule for even lengths. Reorders `values`.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median of a slice.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(DbssError::EmptyInput("median"));
    }
    let mut buf = values.to_vec();
    Ok(median_in_place(&mut buf))
}

/// Gaussian-consistency constant of the median absolute deviation.
pub const MAD_GAUSSIAN: f64 = 0.6745;

/// Robust standard-deviation estimate: `median(|x - median(x)|) / 0.6745`.
pub fn mad_sigma(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(DbssError::EmptyInput("mad_sigma"));
    }
    let mut buf = values.to_vec();
    let center = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - center).abs();
    }
    Ok(median_in_place(&mut buf) / MAD_GAUSSIAN)
}
