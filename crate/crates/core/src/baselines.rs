//! Comparison pipelines: GMCA without deconvolution, SVT matrix completion
//! followed by GMCA, and channel-wise ForWaRD deconvolution followed by GMCA.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DbssError, Result};
use crate::model::{KernelKind, KernelSet, MixingMatrix, SourceSet, SpectralData};
use crate::solver::{decgmca, SolverConfig};
use crate::transforms::{
    mad_sigma, starlet_decompose, starlet_reconstruct, starlet_scale_responses, Dft, ThresholdMode,
};

/// Singular value thresholding parameters. Unset values are derived from the
/// data, see [`SvtConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvtConfig {
    pub threshold: Option<f64>,
    pub step: Option<f64>,
    pub max_iter: usize,
    /// Relative data-fit tolerance on the observed entries.
    pub err_tol: f64,
}

impl Default for SvtConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            step: None,
            max_iter: 500,
            err_tol: 1e-4,
        }
    }
}

impl SvtConfig {
    /// `(step, threshold)`; defaults are `1.2 / active_fraction` capped at 1.9
    /// (the iteration is only guaranteed to converge for steps below 2) and
    /// `0.5 √(N_c N_p)` times the rms of the observed entries.
    pub fn resolve(&self, data: &SpectralData, mask: &KernelSet) -> (f64, f64) {
        let fraction = mask.active_fraction().max(f64::MIN_POSITIVE);
        let step = self.step.unwrap_or((1.2 / fraction).min(1.9));
        let threshold = self.threshold.unwrap_or_else(|| {
            let (n_c, n_p) = data.data.dim();
            let observed = mask.data().iter().filter(|m| m.re != 0.0).count().max(1);
            let energy: f64 = data
                .data
                .iter()
                .zip(mask.data().iter())
                .filter(|(_, m)| m.re != 0.0)
                .map(|(y, _)| y.norm_sqr())
                .sum();
            0.5 * ((n_c * n_p) as f64).sqrt() * (energy / observed as f64).sqrt()
        });
        (step, threshold)
    }
}

/// Channel-wise ForWaRD parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardConfig {
    /// Additive Fourier regularization; `None` uses `1e-3 · max_k |ĥ[k]|²` per channel.
    pub reg: Option<f64>,
    pub n_scales: usize,
    /// Hard threshold in units of the per-scale noise level, propagated from
    /// the MAD of the finest scale of the data; 0 disables thresholding.
    pub tau: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            reg: None,
            n_scales: 5,
            tau: 3.0,
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(reg) = self.reg {
            if !(reg > 0.0 && reg.is_finite()) {
                return Err(DbssError::InvalidConfig(format!(
                    "ForWaRD reg must be positive, got {reg}"
                )));
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(DbssError::InvalidConfig(format!(
                "ForWaRD tau must be nonnegative, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// GMCA: DecGMCA run with an all-ones kernel, whatever the true kernel is.
pub fn gmca(
    data: &SpectralData,
    n_sources: usize,
    config: &SolverConfig,
) -> Result<(MixingMatrix, SourceSet)> {
    let ones = KernelSet::ones(data.n_channels(), data.n_samples());
    let out = decgmca(data, &ones, n_sources, config)?;
    Ok((out.state.mixing, out.state.sources))
}

/// Shrinks the singular values of `x` by `threshold`. Returns the shrunk
/// matrix and its rank.
fn shrink_singular_values(x: &Array2<Complex64>, threshold: f64) -> (Array2<Complex64>, usize) {
    let (n_c, n_p) = x.dim();
    let mut gram = DMatrix::<Complex64>::zeros(n_c, n_c);
    for i in 0..n_c {
        for j in i..n_c {
            let v: Complex64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| a * b.conj())
                .sum();
            gram[(i, j)] = v;
            gram[(j, i)] = v.conj();
        }
    }
    let eig = gram.symmetric_eigen();
    // Projector-weighted operator U diag(max(1 - t/σ, 0)) Uᴴ applied to x.
    let mut weights = DMatrix::<Complex64>::zeros(n_c, n_c);
    let mut rank = 0;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        let sigma = lambda.max(0.0).sqrt();
        if sigma <= threshold {
            continue;
        }
        rank += 1;
        let w = 1.0 - threshold / sigma;
        let u = eig.eigenvectors.column(idx);
        for i in 0..n_c {
            for j in 0..n_c {
                weights[(i, j)] += u[i] * u[j].conj() * w;
            }
        }
    }
    let w = Array2::from_shape_fn((n_c, n_c), |(i, j)| weights[(i, j)]);
    let out = if rank == 0 {
        Array2::zeros((n_c, n_p))
    } else {
        w.dot(x)
    };
    (out, rank)
}

/// Completes the masked entries of `data` by singular value thresholding.
/// Observed entries of the result are copied from `data`.
pub fn svt_complete(
    data: &SpectralData,
    mask: &KernelSet,
    step: f64,
    threshold: f64,
    max_iter: usize,
    err_tol: f64,
) -> Result<SpectralData> {
    if mask.kind() != KernelKind::Mask {
        return Err(DbssError::InvalidKernel(format!(
            "SVT needs a mask kernel, got {:?}",
            mask.kind()
        )));
    }
    data.check_kernel(mask)?;
    if !(step > 0.0 && threshold >= 0.0 && err_tol >= 0.0) {
        return Err(DbssError::InvalidConfig(format!(
            "SVT needs step > 0, threshold >= 0, err_tol >= 0 (got {step}, {threshold}, {err_tol})"
        )));
    }
    let observed = mask.data().mapv(|m| m.re != 0.0);
    let fill = |x: &Array2<Complex64>| {
        let mut out = x.clone();
        out.zip_mut_with(&observed, |v, &o| {
            if !o {
                *v = Complex64::new(0.0, 0.0);
            }
        });
        out
    };
    let target = fill(&data.data);
    let target_norm = target.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let merge = |estimate: &Array2<Complex64>| {
        let mut out = estimate.clone();
        ndarray::Zip::from(&mut out)
            .and(&observed)
            .and(&data.data)
            .for_each(|o, &seen, &y| {
                if seen {
                    *o = y;
                }
            });
        SpectralData {
            data: out,
            noise_sigma: data.noise_sigma.clone(),
        }
    };
    if observed.iter().all(|&o| o) || target_norm == 0.0 {
        return Ok(merge(&target));
    }

    // Warm start: scale the dual so the first shrinkage is already non-trivial.
    let spectral = {
        let (n_c, _) = target.dim();
        let gram = DMatrix::from_fn(n_c, n_c, |i, j| {
            target
                .row(i)
                .iter()
                .zip(target.row(j).iter())
                .map(|(a, b)| a * b.conj())
                .sum::<Complex64>()
        });
        gram.symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, &v| m.max(v))
            .sqrt()
    };
    let k0 = (threshold / (step * spectral)).ceil().max(1.0);
    let mut dual = target.mapv(|v| v * (k0 * step));
    let mut estimate = Array2::zeros(target.dim());
    for it in 0..max_iter {
        estimate = shrink_singular_values(&dual, threshold).0;
        let gap = &target - &fill(&estimate);
        let misfit = gap.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() / target_norm;
        if !misfit.is_finite() {
            return Err(DbssError::Divergence { iteration: it + 1 });
        }
        if misfit <= err_tol {
            break;
        }
        dual.scaled_add(Complex64::new(step, 0.0), &gap);
    }
    Ok(merge(&estimate))
}

/// Single-channel ForWaRD: regularized Fourier inverse, then starlet hard
/// thresholding of each detail scale at `tau` times its noise level. The
/// white noise level is estimated by the MAD of the finest scale of the
/// observation and propagated through the inverse filter to every scale.
pub fn forward_deconvolve(
    y_hat: &[Complex64],
    h_hat: &[Complex64],
    reg: f64,
    n_scales: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    if y_hat.len() != h_hat.len() {
        return Err(DbssError::DimensionMismatch(format!(
            "spectrum has {} samples, kernel has {}",
            y_hat.len(),
            h_hat.len()
        )));
    }
    let n = y_hat.len();
    let filter: Vec<Complex64> = h_hat
        .iter()
        .map(|&h| {
            let den = h.norm_sqr() + reg;
            if den > 0.0 {
                h.conj() / den
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let inverse: Vec<Complex64> = y_hat.iter().zip(&filter).map(|(&y, &f)| f * y).collect();
    let dft = Dft::new(n);
    let signal = dft.inverse_real(&inverse);
    if tau == 0.0 {
        return Ok(signal);
    }
    let responses = starlet_scale_responses(n, n_scales);
    let gain =
        |f: &dyn Fn(usize) -> f64| ((0..n).map(|k| f(k).powi(2)).sum::<f64>() / n as f64).sqrt();
    let observed = starlet_decompose(&dft.inverse_real(y_hat), 1)?;
    let sigma = mad_sigma(&observed.detail_scales[0])? / gain(&|k| responses[0][k]);
    let mut coeffs = starlet_decompose(&signal, n_scales)?;
    for (scale, response) in coeffs.detail_scales.iter_mut().zip(&responses) {
        let lambda = tau * sigma * gain(&|k| response[k] * filter[k].norm());
        for v in scale.iter_mut() {
            *v = ThresholdMode::Hard.apply(*v, lambda);
        }
    }
    starlet_reconstruct(&coeffs)
}

/// SVT completion of the masked data, then GMCA.
pub fn pipeline_mc_gmca(
    data: &SpectralData,
    mask: &KernelSet,
    n_sources: usize,
    svt: &SvtConfig,
    solver: &SolverConfig,
) -> Result<(MixingMatrix, SourceSet)> {
    let (step, threshold) = svt.resolve(data, mask);
    let completed = svt_complete(data, mask, step, threshold, svt.max_iter, svt.err_tol)?;
    gmca(&completed, n_sources, solver)
}

/// ForWaRD on every channel independently, then GMCA on the deconvolved cube.
pub fn pipeline_forward_gmca(
    data: &SpectralData,
    kernel: &KernelSet,
    n_sources: usize,
    forward: &ForwardConfig,
    solver: &SolverConfig,
) -> Result<(MixingMatrix, SourceSet)> {
    forward.validate()?;
    data.check_kernel(kernel)?;
    let n_p = data.n_samples();
    let channels: Vec<Vec<f64>> = (0..data.n_channels())
        .into_par_iter()
        .map(|nu| {
            let y = data.data.row(nu).to_vec();
            let h = kernel.data().row(nu).to_vec();
            let reg = forward
                .reg
                .unwrap_or_else(|| 1e-3 * h.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max));
            forward_deconvolve(&y, &h, reg, forward.n_scales, forward.tau)
        })
        .collect::<Result<_>>()?;
    let dft = Dft::new(n_p);
    let mut spectra = Array2::zeros((data.n_channels(), n_p));
    for (nu, x) in channels.iter().enumerate() {
        spectra
            .row_mut(nu)
            .assign(&Array1::from(dft.forward_real(x)));
    }
    let deconvolved = SpectralData {
        data: spectra,
        noise_sigma: data.noise_sigma.clone(),
    };
    gmca(&deconvolved, n_sources, solver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::dft_forward;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn full_mask_returns_data() {
        let y = SpectralData::new(Array2::from_shape_fn((3, 8), |(i, k)| {
            c(i as f64, k as f64)
        }))
        .unwrap();
        let mask = KernelSet::ones(3, 8);
        let out = svt_complete(&y, &mask, 1.2, 1.0, 10, 1e-6).unwrap();
        assert_eq!(out.data, y.data);
    }

    #[test]
    fn zero_observations_complete_to_zero() {
        let y = SpectralData::new(Array2::zeros((3, 8))).unwrap();
        let mask = KernelSet::new(
            Array2::from_shape_fn((3, 8), |(i, k)| c(((i + k) % 2) as f64, 0.0)),
            KernelKind::Mask,
        )
        .unwrap();
        let out = svt_complete(&y, &mask, 2.4, 1.0, 10, 1e-6).unwrap();
        assert!(out.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn svt_rejects_psf_kernel() {
        let y = SpectralData::new(Array2::zeros((2, 4))).unwrap();
        let h = KernelSet::new(Array2::from_elem((2, 4), c(0.5, 0.0)), KernelKind::Psf).unwrap();
        assert!(matches!(
            svt_complete(&y, &h, 1.0, 1.0, 5, 1e-4),
            Err(DbssError::InvalidKernel(_))
        ));
    }

    #[test]
    fn shrinkage_matches_svd_oracle() {
        let x = Array2::from_shape_fn((4, 9), |(i, k)| {
            c(
                ((i * 3 + k * 7) % 11) as f64 - 5.0,
                ((i + 2 * k) % 5) as f64 - 2.0,
            )
        });
        let threshold = 4.0;
        let (fast, _) = shrink_singular_values(&x, threshold);
        let m = DMatrix::from_fn(4, 9, |i, j| x[[i, j]]);
        let svd = m.svd(true, true);
        let shrunk = svd.singular_values.map(|s| (s - threshold).max(0.0));
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let oracle = &u * DMatrix::from_diagonal(&shrunk.map(|s| c(s, 0.0))) * &vt;
        for i in 0..4 {
            for j in 0..9 {
                assert!((fast[[i, j]] - oracle[(i, j)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_kernel_forward_is_inverse_dft() {
        let x: Vec<f64> = (0..32)
            .map(|k| (k as f64 * 0.4).sin() + 0.1 * k as f64)
            .collect();
        let y = dft_forward(&x);
        let h = vec![c(1.0, 0.0); 32];
        let out = forward_deconvolve(&y, &h, 1e-12, 3, 0.0).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-8);
        }
        let zero = forward_deconvolve(&vec![c(0.0, 0.0); 32], &h, 1e-3, 3, 3.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }
}
