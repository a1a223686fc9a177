//! Final source refinement with the mixing matrix held fixed: a primal-dual
//! (Condat-Vũ) solver for
//!
//! `min_S (1/2N_p) ‖Ŷ - Ĥ ⊙ A Ŝ‖² + Σ_j λ_j ‖Φ s_j‖₁`
//!
//! where Φ is the starlet analysis restricted to the detail scales.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DbssError, Result};
use crate::model::{KernelSet, MixingMatrix, SourceSet, SpectralData, SpectralSourceSet};
use crate::solver::{normal_matrix, spectral_norm_psd};
use crate::transforms::{starlet_adjoint, starlet_decompose, Dft, ThresholdMode, WaveletCoeffs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CondatVuParams {
    pub n_iterations: usize,
    /// Stop once `‖S⁺ - S‖ / ‖S‖` falls to this value.
    pub tolerance: f64,
    /// Primal step; `None` picks `1/L`.
    pub primal_step: Option<f64>,
    /// Dual step; `None` picks a value satisfying the convergence condition.
    pub dual_step: Option<f64>,
    /// `Soft` solves the ℓ1 problem; `Hard` is a heuristic variant.
    pub mode: ThresholdMode,
    pub n_wavelet_scales: usize,
}

impl Default for CondatVuParams {
    fn default() -> Self {
        Self {
            n_iterations: 500,
            tolerance: 1e-8,
            primal_step: None,
            dual_step: None,
            mode: ThresholdMode::Soft,
            n_wavelet_scales: 5,
        }
    }
}

/// Step sizes after resolving the defaults against a problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub primal: f64,
    pub dual: f64,
    pub lipschitz: f64,
}

impl CondatVuParams {
    pub fn resolve_steps(&self, mixing: &MixingMatrix, kernel: &KernelSet) -> Result<StepSizes> {
        let lipschitz = lipschitz_constant(mixing, kernel)?;
        let primal = match self.primal_step {
            Some(t) => t,
            None if lipschitz > 0.0 => 1.0 / lipschitz,
            None => 1.0,
        };
        if !(primal > 0.0 && primal.is_finite()) {
            return Err(DbssError::InvalidConfig(format!(
                "primal step must be positive, got {primal}"
            )));
        }
        // The detail-scale analysis operator has squared norm at most J.
        let analysis_norm_sq = (self.n_wavelet_scales + 1) as f64;
        let dual = match self.dual_step {
            Some(e) => e,
            None => 0.9 * (1.0 / primal - lipschitz / 2.0) / analysis_norm_sq,
        };
        if !(dual > 0.0 && dual.is_finite()) {
            return Err(DbssError::InvalidConfig(format!(
                "dual step must be positive, got {dual} (primal step too large?)"
            )));
        }
        Ok(StepSizes {
            primal,
            dual,
            lipschitz,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutput {
    pub sources: SourceSet,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lipschitz constant of the data-fidelity gradient, `max_k ‖P(k)‖₂`.
pub fn lipschitz_constant(mixing: &MixingMatrix, kernel: &KernelSet) -> Result<f64> {
    if mixing.n_channels() != kernel.n_channels() {
        return Err(DbssError::DimensionMismatch(format!(
            "mixing has {} channels but kernel has {}",
            mixing.n_channels(),
            kernel.n_channels()
        )));
    }
    let norms: Vec<f64> = (0..kernel.n_samples())
        .into_par_iter()
        .map(|k| spectral_norm_psd(&normal_matrix(mixing.data(), kernel, k)))
        .collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

fn residual(
    data: &SpectralData,
    kernel: &KernelSet,
    mixing: &MixingMatrix,
    sources: &SpectralSourceSet,
) -> Result<Array2<Complex64>> {
    data.check_kernel(kernel)?;
    if mixing.n_channels() != data.n_channels()
        || mixing.n_sources() != sources.n_sources()
        || sources.n_samples() != data.n_samples()
    {
        return Err(DbssError::DimensionMismatch(format!(
            "data {:?}, mixing {:?}, sources {:?}",
            data.data.dim(),
            mixing.data().dim(),
            sources.data().dim()
        )));
    }
    let model = mixing
        .data()
        .mapv(|a| Complex64::new(a, 0.0))
        .dot(sources.data())
        * kernel.data();
    Ok(&data.data - &model)
}

/// `(1/2N_p) ‖Ŷ - Ĥ ⊙ A Ŝ‖²_F`, equal to half the sample-domain squared residual.
pub fn fidelity_value(
    data: &SpectralData,
    kernel: &KernelSet,
    mixing: &MixingMatrix,
    sources: &SpectralSourceSet,
) -> Result<f64> {
    let r = residual(data, kernel, mixing, sources)?;
    Ok(r.iter().map(|c| c.norm_sqr()).sum::<f64>() / (2.0 * data.n_samples() as f64))
}

/// Gradient of [`fidelity_value`] with respect to the real sources:
/// `-Re(IFFT(Aᵀ (conj(Ĥ) ⊙ R)))`.
pub fn fidelity_gradient(
    data: &SpectralData,
    kernel: &KernelSet,
    mixing: &MixingMatrix,
    sources: &SourceSet,
    dft: &Dft,
) -> Result<SourceSet> {
    let spectral = sources.to_spectral(dft);
    let r = residual(data, kernel, mixing, &spectral)? * &kernel.data().mapv(|h| h.conj());
    let back = mixing.data().t().mapv(|a| Complex64::new(-a, 0.0)).dot(&r);
    SpectralSourceSet::new(back).map(|s| s.to_real(dft))
}

fn detail_l1(coeffs: &WaveletCoeffs) -> f64 {
    coeffs.details().map(|v| v.abs()).sum()
}

/// Full refinement objective: fidelity plus λ-weighted ℓ1 norm of the details.
pub fn objective(
    data: &SpectralData,
    kernel: &KernelSet,
    mixing: &MixingMatrix,
    sources: &SourceSet,
    lambdas: &[f64],
    n_scales: usize,
    dft: &Dft,
) -> Result<f64> {
    let fit = fidelity_value(data, kernel, mixing, &sources.to_spectral(dft))?;
    let penalty = sources
        .data()
        .outer_iter()
        .zip(lambdas)
        .map(|(row, &lambda)| Ok(lambda * detail_l1(&starlet_decompose(&row.to_vec(), n_scales)?)))
        .sum::<Result<f64>>()?;
    Ok(fit + penalty)
}

fn dual_projection(v: f64, lambda: f64, mode: ThresholdMode) -> f64 {
    v - mode.apply(v, lambda)
}

/// Refines the sources with the mixing matrix fixed.
pub fn condat_vu_refine(
    data: &SpectralData,
    kernel: &KernelSet,
    mixing: &MixingMatrix,
    initial: &SourceSet,
    lambdas: &[f64],
    params: &CondatVuParams,
) -> Result<RefinementOutput> {
    let n_s = initial.n_sources();
    let n_p = initial.n_samples();
    let j = params.n_wavelet_scales;
    if lambdas.len() != n_s {
        return Err(DbssError::DimensionMismatch(format!(
            "{} lambdas for {n_s} sources",
            lambdas.len()
        )));
    }
    if let Some(&bad) = lambdas.iter().find(|&&l| !(l >= 0.0 && l.is_finite())) {
        return Err(DbssError::InvalidConfig(format!(
            "lambda must be nonnegative, got {bad}"
        )));
    }
    if params.n_iterations == 0 {
        return Err(DbssError::InvalidConfig(
            "refinement needs at least one iteration".into(),
        ));
    }
    let steps = params.resolve_steps(mixing, kernel)?;
    let dft = Dft::new(n_p);

    let analyse = |s: &SourceSet| -> Result<Vec<WaveletCoeffs>> {
        s.data()
            .outer_iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| starlet_decompose(row.as_slice().expect("row-major"), j))
            .collect()
    };

    let mut sources = initial.clone();
    let mut dual: Vec<WaveletCoeffs> = analyse(&sources)?;
    for (u, &lambda) in dual.iter_mut().zip(lambdas) {
        for d in u.detail_scales.iter_mut() {
            for v in d.iter_mut() {
                *v = dual_projection(*v, lambda, params.mode);
            }
        }
        u.coarse.fill(0.0);
    }

    let mut trace = Vec::with_capacity(params.n_iterations);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=params.n_iterations {
        iterations = it;
        let grad = fidelity_gradient(data, kernel, mixing, &sources, &dft)?;
        let adjoint: Vec<Vec<f64>> = dual
            .par_iter()
            .map(starlet_adjoint)
            .collect::<Result<_>>()?;
        let mut next = sources.data().clone();
        for (jj, mut row) in next.outer_iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v -= steps.primal * (grad.data()[[jj, k]] + adjoint[jj][k]);
            }
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(DbssError::StepSize { iteration: it });
        }
        let extrapolated = SourceSet::new(&next * 2.0 - sources.data())
            .map_err(|_| DbssError::StepSize { iteration: it })?;
        let analysis = analyse(&extrapolated)?;
        for ((u, a), &lambda) in dual.iter_mut().zip(&analysis).zip(lambdas) {
            for (ud, ad) in u.detail_scales.iter_mut().zip(&a.detail_scales) {
                for (uv, av) in ud.iter_mut().zip(ad) {
                    *uv = dual_projection(*uv + steps.dual * av, lambda, params.mode);
                }
            }
        }

        let change = (&next - sources.data())
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let scale = sources.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        sources = SourceSet::new(next).map_err(|_| DbssError::StepSize { iteration: it })?;
        trace.push(objective(data, kernel, mixing, &sources, lambdas, j, &dft)?);
        if change <= params.tolerance * scale.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(RefinementOutput {
        sources,
        objective_trace: trace,
        iterations,
        converged,
    })
}
